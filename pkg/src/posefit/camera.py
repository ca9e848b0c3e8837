"""Perspective camera and closed-form weak-perspective translation estimation."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import (BehindCamera, DegenerateConfiguration, DimensionMismatch,
                     InvalidConfig, IoError, NegativeScale)

MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class Camera:
    focal: float = 1000.0
    cx: float = 500.0
    cy: float = 500.0
    width: int = 1000
    height: int = 1000

    def __post_init__(self):
        if self.focal <= 0 or self.width < 1 or self.height < 1:
            raise InvalidConfig("camera needs focal > 0 and a positive image size")

    @property
    def principal(self):
        return np.array([self.cx, self.cy])

    def to_dict(self):
        return {"focal": self.focal, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def project(cam: Camera, points):
    """Perspective projection, (..., 3) -> (..., 2) pixels."""
    p = np.asarray(points, dtype=float)
    z = p[..., 2]
    if np.any(z <= MIN_DEPTH):
        raise BehindCamera("point at or behind the camera plane")
    return np.stack([cam.focal * p[..., 0] / z + cam.cx,
                     cam.focal * p[..., 1] / z + cam.cy], axis=-1)


def project_vjp(cam: Camera, points, g):
    """VJP of ``project``: g (..., 2) -> gradient w.r.t. points (..., 3)."""
    p = np.asarray(points, dtype=float)
    g = np.asarray(g, dtype=float)
    z = p[..., 2]
    gx = cam.focal * g[..., 0] / z
    gy = cam.focal * g[..., 1] / z
    gz = -cam.focal * (g[..., 0] * p[..., 0] + g[..., 1] * p[..., 1]) / (z * z)
    return np.stack([gx, gy, gz], axis=-1)


def solve_translation(cam: Camera, joints3d, detections, confidences=None):
    """Closed-form weak-perspective fit of the global translation.

    Minimizes sum_i w_i || s * xy_i + t - (det_i - c) ||^2 over scale s and
    image offset t, then lifts to T = (t_x/s, t_y/s, f/s - zbar) with zbar
    the confidence-weighted mean joint depth. The solve is an explicit
    linear-algebra expression, so gradients flow through it (see
    ``solve_translation_vjp``).
    """
    joints3d = np.asarray(joints3d, dtype=float)
    detections = np.asarray(detections, dtype=float)
    if joints3d.shape[0] != detections.shape[0]:
        raise DimensionMismatch("joint counts differ")
    w = np.ones(len(joints3d)) if confidences is None \
        else np.asarray(confidences, dtype=float)
    if np.count_nonzero(w > 0) < 3:
        raise DegenerateConfiguration("need >= 3 joints with positive confidence")

    wsum = w.sum()
    p = joints3d[:, :2]
    q = detections - cam.principal
    pbar = (w[:, None] * p).sum(axis=0) / wsum
    qbar = (w[:, None] * q).sum(axis=0) / wsum
    zbar = float((w * joints3d[:, 2]).sum() / wsum)
    dp = p - pbar
    dq = q - qbar
    B = float((w[:, None] * dp * dp).sum())
    if B < 1e-12:
        raise DegenerateConfiguration("joints coincide in the image plane")
    A = float((w[:, None] * dp * dq).sum())
    s = A / B
    if s <= 0:
        raise NegativeScale(f"weak-perspective scale {s:.3g} <= 0")
    t = qbar - s * pbar
    T = np.array([t[0] / s, t[1] / s, cam.focal / s - zbar])
    aux = {"s": s, "t": t, "pbar": pbar, "qbar": qbar, "zbar": zbar,
           "B": B, "w": w, "wsum": wsum, "dp": dp, "dq": dq}
    return T, aux


def solve_translation_vjp(cam: Camera, aux, g_T):
    """Gradient of the translation solve w.r.t. the 3D joints, (J, 3)."""
    s, t, w = aux["s"], aux["t"], aux["w"]
    dp, dq = aux["dp"], aux["dq"]
    B, wsum, pbar = aux["B"], aux["wsum"], aux["pbar"]
    g_T = np.asarray(g_T, dtype=float)

    g_t = g_T[:2] / s
    g_s = -(t[0] * g_T[0] + t[1] * g_T[1]) / s**2 - cam.focal * g_T[2] / s**2
    g_zbar = -g_T[2]

    # t = qbar - s*pbar
    g_qbar = g_t.copy()
    g_s += -float(pbar @ g_t)
    g_pbar = -s * g_t

    # s = A/B; sum-w-weighted deviations of p and q have zero mean, so pbar/qbar
    # receive nothing through A and B.
    g_A = g_s / B
    g_B = -s * g_s / B
    g_p = w[:, None] * (g_A * dq + 2.0 * g_B * dp)
    g_p += (w / wsum)[:, None] * g_pbar[None, :]
    g_z = (w / wsum) * g_zbar
    del g_qbar  # detections are constants
    return np.concatenate([g_p, g_z[:, None]], axis=1)


def keypoint_alignment_unsquared(cam: Camera, joints3d, T, detections,
                                 confidences=None):
    """Mean unsquared reprojection error (pixels) with translation applied."""
    proj = project(cam, np.asarray(joints3d, dtype=float) + np.asarray(T, dtype=float))
    d = np.linalg.norm(proj - np.asarray(detections, dtype=float), axis=1)
    if confidences is not None:
        w = np.asarray(confidences, dtype=float)
        return float((w * d).sum() / max(len(d), 1))
    return float(d.mean())


# -- keypoint file format: CSV "joint_id,x,y,confidence", one file per frame --

def save_keypoints(path, detections, confidences, comment=None):
    try:
        with open(path, "w", newline="") as fh:
            if comment:
                for line in str(comment).splitlines():
                    fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(["joint_id", "x", "y", "confidence"])
            for i, (xy, c) in enumerate(zip(detections, confidences)):
                writer.writerow([i, repr(float(xy[0])), repr(float(xy[1])),
                                 repr(float(c))])
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_keypoints(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(str(exc)) from exc
    rows = [r for r in rows if r and not r[0].lstrip().startswith("#")]
    if not rows or rows[0] != ["joint_id", "x", "y", "confidence"]:
        raise IoError(f"{path}: not a keypoint CSV")
    body = sorted(rows[1:], key=lambda r: int(r[0]))
    det = np.array([[float(r[1]), float(r[2])] for r in body])
    conf = np.array([float(r[3]) for r in body])
    return det, conf
