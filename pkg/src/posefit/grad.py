"""Full fitting objective with hand-composed reverse-mode gradients.

The pipeline is a fixed DAG (latent code -> pose -> posed body -> projection
-> losses, plus the prior and temporal terms); each stage ships a
value+adjoint pair and this module runs the reverse sweep over them. Argmin
pairings inside the chamfer term and the GMM mode choice are held constant
during differentiation.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import camera as cam_mod
from .body import pose_body, pose_body_vjp
from .errors import (BehindCamera, DegenerateConfiguration, NegativeScale,
                     NonFiniteValue)
from .losses import (body_alignment_loss, keypoint_loss, shape_regularizer,
                     smoothness_loss)
from .prior import nf_prior_latent
from .problem import FitProblem, ParamBlock

# Vertices closer than this to the camera plane are excluded from the
# alignment term and pushed forward by a squared hinge on depth.
DEPTH_MARGIN = 0.05


def _hinge_depth(z):
    gap = np.maximum(0.0, DEPTH_MARGIN - z)
    return float(np.sum(gap * gap)), -2.0 * gap


def objective_with_gradient(problem: FitProblem, x, want_info=False):
    """Total weighted loss and its exact gradient at the flat parameters x.

    Infeasible states (behind-camera joints, degenerate translation solve)
    return +inf with a zero gradient so line searches back off.
    """
    block = ParamBlock(problem)
    x = np.asarray(x, dtype=float)
    if x.size != block.size:
        raise NonFiniteValue(f"parameter vector has size {x.size}, "
                             f"expected {block.size}")
    model, cam = problem.model, problem.camera
    w = problem.weights
    grad = np.zeros_like(x)
    g_shape_total = np.zeros(model.n_shape)
    beta = block.shape(x)

    terms = {"KA": 0.0, "BA": 0.0, "prior": 0.0, "depth": 0.0}
    z_frames = []            # per-frame pose-or-latent segments (for smoothness)
    g_pose_segments = []
    translations = []

    try:
        for f, ev in enumerate(problem.frames):
            root = block.root(x, f)
            seg = block.pose(x, f)

            if problem.prior_kind == "nf-latent":
                theta_body = problem.flow.inverse(seg)
            else:
                theta_body = seg
            full_pose = np.concatenate([root, theta_body])
            posed = pose_body(model, full_pose, beta)

            g_joints = np.zeros((model.n_joints, 3))
            g_vertices = np.zeros((model.n_vertices, 3))
            g_T = np.zeros(3)
            T = np.zeros(3)
            aux = None

            if ev.detections is not None:
                T, aux = cam_mod.solve_translation(
                    cam, posed.joints3d, ev.detections, ev.confidences)
                shifted = posed.joints3d + T
                proj = cam_mod.project(cam, shifted)
                ka, g_proj = keypoint_loss(proj, ev.detections, ev.confidences)
                terms["KA"] += ka
                g_sh = cam_mod.project_vjp(cam, shifted, w["KA"] * g_proj)
                g_joints += g_sh
                g_T += g_sh.sum(axis=0)

            if ev.mask is not None:
                vz = posed.vertices[:, 2] + T[2]
                front = vz > cam_mod.MIN_DEPTH
                labels = np.where(front, posed.part_labels, 0)
                shifted_v = posed.vertices[front] + T
                proj_v = cam_mod.project(cam, shifted_v) if front.any() \
                    else np.empty((0, 2))
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    ba, g_projv, _ = body_alignment_loss(
                        ev.mask, proj_v, labels[front],
                        stride=problem.mask_stride)
                terms["BA"] += ba
                if front.any():
                    g_shv = cam_mod.project_vjp(cam, shifted_v,
                                                w["BA"] * g_projv)
                    g_vertices[front] += g_shv
                    g_T += g_shv.sum(axis=0)
                dval, dgrad = _hinge_depth(vz)
                terms["depth"] += dval
                g_vertices[:, 2] += w["depth"] * dgrad
                g_T[2] += w["depth"] * dgrad.sum()

            if aux is not None:
                g_joints += cam_mod.solve_translation_vjp(cam, aux, g_T)

            g_full, g_beta = pose_body_vjp(model, posed, g_joints, g_vertices)
            g_shape_total += g_beta
            g_root = g_full[:block.root_dim]
            g_body = g_full[block.root_dim:]

            if problem.prior_kind == "nf-latent":
                pe = nf_prior_latent(seg)
                terms["prior"] += pe.value
                g_seg = problem.flow.inverse_vjp(seg, g_body) \
                    + w["prior"] * pe.gradient
            elif problem.prior_kind == "nf-ambient":
                logp, glogp = problem.flow.log_prob_and_grad(seg)
                terms["prior"] += -logp
                g_seg = g_body - w["prior"] * glogp
            elif problem.prior_kind == "gmm":
                pe = problem.gmm.evaluate(seg)
                terms["prior"] += pe.value
                g_seg = g_body + w["prior"] * pe.gradient
            else:
                g_seg = g_body

            block.root(grad, f)[:] = g_root
            g_pose_segments.append(g_seg)
            z_frames.append(seg.copy())
            translations.append(T)
    except (BehindCamera, DegenerateConfiguration, NegativeScale):
        return (np.inf, np.zeros_like(x)) if not want_info else \
            (np.inf, np.zeros_like(x), {"infeasible": True})

    sreg, g_sreg = shape_regularizer(beta)
    terms["shape"] = sreg
    g_shape_total += w["shape"] * g_sreg

    smooth_w = problem.effective_smooth_weight()
    if problem.n_frames >= 2 and smooth_w > 0.0:
        sval, sgrad = smoothness_loss(np.stack(z_frames))
        terms["smooth"] = sval
        for f in range(problem.n_frames):
            g_pose_segments[f] = g_pose_segments[f] + smooth_w * sgrad[f]
    else:
        terms["smooth"] = 0.0
        smooth_w = 0.0

    for f in range(problem.n_frames):
        block.pose(grad, f)[:] = g_pose_segments[f]
    block.shape(grad)[:] = g_shape_total

    weights = {"KA": w["KA"], "BA": w["BA"], "prior": w["prior"],
               "shape": w["shape"], "depth": w["depth"], "smooth": smooth_w}
    value = float(sum(weights[k] * terms[k] for k in terms))
    if not np.isfinite(value):
        raise NonFiniteValue("objective evaluated to NaN")
    if want_info:
        info = {"terms": dict(terms), "weights": weights,
                "translations": [t.tolist() if hasattr(t, "tolist") else list(t)
                                 for t in translations]}
        return value, grad, info
    return value, grad


def check_gradient(fn, x, step=1e-6, tol=1e-4):
    """Central finite-difference check of fn(x) -> (value, gradient).

    Returns a report dict with per-coordinate relative errors; the relative
    error uses max(1, |analytic|, |numeric|) as denominator.
    """
    x = np.asarray(x, dtype=float)
    value, grad = fn(x)[:2]
    if not np.all(np.isfinite([value])) or not np.all(np.isfinite(grad)):
        raise NonFiniteValue("objective or gradient non-finite at base point")
    numeric = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += step
        xm = x.copy()
        xm[i] -= step
        numeric[i] = (fn(xp)[0] - fn(xm)[0]) / (2.0 * step)
    denom = np.maximum(1.0, np.maximum(np.abs(grad), np.abs(numeric)))
    rel = np.abs(grad - numeric) / denom
    return {
        "value": value,
        "analytic": grad,
        "numeric": numeric,
        "rel_errors": rel,
        "max_rel_error": float(rel.max()) if rel.size else 0.0,
        "passed": bool(rel.size == 0 or rel.max() < tol),
    }
