"""Alignment and regularization losses.

The semantic body-part alignment loss is a bidirectional chamfer term over
unsquared distances between per-part mask pixels and projected vertices;
gradients flow through the argmin pairings into the vertex positions only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (DimensionMismatch, IoError, NoActiveTerms,
                     RepresentationMismatch, TooFewFrames)


# -- segmentation masks ------------------------------------------------------

class SegmentationMask:
    """Label raster, 0 = background, 1..N_b = body parts.

    Per-part pixel coordinate sets (x=column, y=row, pixel units) are derived
    lazily and cached.
    """

    def __init__(self, labels):
        self.labels = np.asarray(labels, dtype=np.uint8)
        if self.labels.ndim != 2:
            raise DimensionMismatch("mask must be a 2-D raster")
        self._pixels = {}

    @property
    def n_parts(self):
        return int(self.labels.max())

    def part_pixels(self, k, stride=1):
        key = (k, stride)
        if key not in self._pixels:
            rows, cols = np.nonzero(self.labels == k)
            if stride > 1:
                keep = (rows % stride == 0) & (cols % stride == 0)
                rows, cols = rows[keep], cols[keep]
            self._pixels[key] = np.stack([cols, rows], axis=1).astype(float)
        return self._pixels[key]

    def save_pgm(self, path, comment=None):
        """8-bit binary PGM; pixel value = part label."""
        h, w = self.labels.shape
        try:
            with open(path, "wb") as fh:
                fh.write(b"P5\n")
                if comment:
                    for line in str(comment).splitlines():
                        fh.write(f"# {line}\n".encode())
                fh.write(f"{w} {h}\n255\n".encode())
                fh.write(self.labels.tobytes())
        except OSError as exc:
            raise IoError(str(exc)) from exc

    @classmethod
    def load_pgm(cls, path):
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise IoError(str(exc)) from exc
        fields = []
        pos = 0
        while len(fields) < 4:
            nl = data.index(b"\n", pos)
            line = data[pos:nl]
            pos = nl + 1
            if line.startswith(b"#"):
                continue
            fields.extend(line.split())
        if fields[0] != b"P5" or fields[3] != b"255":
            raise IoError(f"{path}: not an 8-bit binary PGM")
        w, h = int(fields[1]), int(fields[2])
        raster = np.frombuffer(data[pos:pos + w * h], dtype=np.uint8)
        if raster.size != w * h:
            raise IoError(f"{path}: truncated PGM payload")
        return cls(raster.reshape(h, w).copy())


# -- loss terms ---------------------------------------------------------------

def keypoint_loss(projected, detections, confidences=None):
    """Mean weighted squared keypoint distance; returns (value, grad)."""
    J = np.asarray(projected, dtype=float)
    Jhat = np.asarray(detections, dtype=float)
    if J.shape != Jhat.shape:
        raise DimensionMismatch("keypoint arrays differ in shape")
    n = J.shape[0]
    w = np.ones(n) if confidences is None else np.asarray(confidences, dtype=float)
    diff = J - Jhat
    value = float((w * np.sum(diff * diff, axis=1)).sum() / n)
    grad = 2.0 * w[:, None] * diff / n
    return value, grad


def body_alignment_brute_force(mask: SegmentationMask, projected, labels,
                               stride=1):
    """O(n*m) reference for the bidirectional part alignment loss (value only)."""
    total = 0.0
    for k in range(1, mask.n_parts + 1):
        pix = mask.part_pixels(k, stride)
        verts = np.asarray(projected, dtype=float)[np.asarray(labels) == k]
        if len(pix) == 0 or len(verts) == 0:
            continue
        d = np.linalg.norm(pix[:, None, :] - verts[None, :, :], axis=2)
        total += float(d.min(axis=1).sum()) * stride * stride
        total += float(d.min(axis=0).sum())
    return total


def body_alignment_loss(mask: SegmentationMask, projected, labels, stride=1):
    """Bidirectional semantic alignment loss over unsquared distances.

    forward term:  every part-k mask pixel to its nearest part-k projection
    backward term: every part-k projection to its nearest part-k mask pixel

    Gradient flows only into the projected vertex positions; pixels are
    constants. Parts empty on either side contribute zero with a warning.
    The pixel-sum (forward) term is rescaled by stride^2 when subsampling.
    Returns (value, grad (N,2), flags).
    """
    projected = np.asarray(projected, dtype=float)
    labels = np.asarray(labels, dtype=int)
    grad = np.zeros_like(projected)
    total = 0.0
    any_pixels = False
    skipped = []
    for k in range(1, max(mask.n_parts, int(labels.max(initial=0))) + 1):
        pix = mask.part_pixels(k, stride) if k <= mask.n_parts else np.empty((0, 2))
        idx = np.nonzero(labels == k)[0]
        if len(pix) == 0 and len(idx) == 0:
            continue
        if len(pix) == 0 or len(idx) == 0:
            skipped.append(k)
            continue
        any_pixels = True
        verts = projected[idx]
        scale = float(stride * stride)

        # forward: mask pixels -> nearest vertex of the same part
        tree_v = cKDTree(verts)
        dist, nearest = tree_v.query(pix)
        total += float(dist.sum()) * scale
        nz = dist > 0
        unit = np.zeros_like(pix)
        unit[nz] = (verts[nearest[nz]] - pix[nz]) / dist[nz, None]
        np.add.at(grad, idx[nearest], scale * unit)

        # backward: vertices -> nearest mask pixel of the same part
        tree_p = cKDTree(pix)
        dist_b, nearest_b = tree_p.query(verts)
        total += float(dist_b.sum())
        nzb = dist_b > 0
        unit_b = np.zeros_like(verts)
        unit_b[nzb] = (verts[nzb] - pix[nearest_b[nzb]]) / dist_b[nzb, None]
        np.add.at(grad, idx, unit_b)

    if skipped:
        warnings.warn(f"parts {skipped} empty on one side; contributed zero",
                      stacklevel=2)
    flags = {"empty_mask": not any_pixels, "skipped_parts": skipped}
    return total, grad, flags


def supervised_losses(pred_pose, pred_shape, pred_vertices,
                      gt_pose, gt_shape, gt_vertices, joint_param_dim=3):
    """Per-element MSE terms L_V, L_theta, L_beta and their sum L_fs."""
    pp = np.asarray(pred_pose, dtype=float).ravel()
    gp = np.asarray(gt_pose, dtype=float).ravel()
    if pp.shape != gp.shape:
        raise RepresentationMismatch("pose vectors differ in length")
    ps = np.asarray(pred_shape, dtype=float).ravel()
    gs = np.asarray(gt_shape, dtype=float).ravel()
    pv = np.asarray(pred_vertices, dtype=float)
    gv = np.asarray(gt_vertices, dtype=float)
    if ps.shape != gs.shape or pv.shape != gv.shape:
        raise DimensionMismatch("shape/vertex arrays differ in shape")

    n_j = pp.size // joint_param_dim
    l_theta = float(np.sum((pp - gp) ** 2) / max(n_j, 1))
    l_beta = float(np.sum((ps - gs) ** 2) / max(ps.size, 1))
    l_v = float(np.sum((pv - gv) ** 2) / max(pv.shape[0], 1))
    return {"L_V": l_v, "L_theta": l_theta, "L_beta": l_beta,
            "L_fs": l_v + l_theta + l_beta}


@dataclass
class LossBreakdown:
    terms: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)

    @property
    def total(self):
        return float(sum(self.weights.get(k, 1.0) * v
                         for k, v in self.terms.items()))

    def to_dict(self):
        return {"terms": {k: float(v) for k, v in self.terms.items()},
                "weights": {k: float(v) for k, v in self.weights.items()},
                "total": self.total}


def weakly_supervised_loss(terms, weights=None) -> LossBreakdown:
    """Weighted combination of evidence terms; unit weights by default."""
    active = {k: v for k, v in terms.items() if v is not None}
    if not active:
        raise NoActiveTerms("no evidence term active")
    weights = dict(weights or {})
    return LossBreakdown(terms=active,
                         weights={k: weights.get(k, 1.0) for k in active})


def shape_regularizer(beta):
    """||beta||^2 with gradient."""
    beta = np.asarray(beta, dtype=float)
    return float(beta @ beta), 2.0 * beta


def smoothness_loss(z_seq):
    """Sum of squared adjacent latent differences; returns (value, grad)."""
    z = np.asarray(z_seq, dtype=float)
    if z.ndim != 2 or z.shape[0] < 2:
        raise TooFewFrames("smoothness needs at least 2 frames")
    d = z[1:] - z[:-1]
    value = float(np.sum(d * d))
    grad = np.zeros_like(z)
    grad[1:] += 2.0 * d
    grad[:-1] -= 2.0 * d
    return value, grad
