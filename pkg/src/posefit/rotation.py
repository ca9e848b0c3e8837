"""Rotation representations: angle-axis, 6D (two matrix columns), 3x3 matrices.

All conversions are vectorized over a leading batch axis and ship a
hand-derived vector-Jacobian product (``*_vjp``) used by the reverse sweep
of the fitting objective.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInput

# Below this rotation angle the Rodrigues coefficients switch to their
# Taylor expansions so values and gradients stay finite at zero.
SMALL_ANGLE = 1e-8

# Rank-deficiency threshold for the 6D -> matrix Gram-Schmidt.
DEGENERACY_EPS = 1e-8


def _skew(v):
    """Cross-product matrices for a batch of 3-vectors, shape (..., 3, 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def _rodrigues_coeffs(theta_sq):
    """Coefficients a = sin(t)/t and b = (1-cos(t))/t^2 with Taylor fallback.

    Also returns c1 = a'(t)/t and c2 = b'(t)/t needed by the VJP; all four
    are smooth functions of t^2.
    """
    theta_sq = np.asarray(theta_sq, dtype=float)
    small = theta_sq < SMALL_ANGLE**2
    # Avoid division warnings on the small branch.
    safe = np.where(small, 1.0, theta_sq)
    t = np.sqrt(safe)
    a = np.where(small, 1.0 - theta_sq / 6.0, np.sin(t) / t)
    b = np.where(small, 0.5 - theta_sq / 24.0, (1.0 - np.cos(t)) / safe)
    c1 = np.where(small, -1.0 / 3.0 + theta_sq / 30.0,
                  (t * np.cos(t) - np.sin(t)) / (safe * t))
    c2 = np.where(small, -1.0 / 12.0 + theta_sq / 180.0,
                  (t * np.sin(t) - 2.0 * (1.0 - np.cos(t))) / (safe * safe))
    return a, b, c1, c2


def angle_axis_to_matrix(v):
    """Rodrigues formula, batched: (..., 3) -> (..., 3, 3). Total function."""
    v = np.asarray(v, dtype=float)
    theta_sq = np.sum(v * v, axis=-1)
    a, b, _, _ = _rodrigues_coeffs(theta_sq)
    k = _skew(v)
    k2 = k @ k
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * k2


def angle_axis_to_matrix_vjp(v, g):
    """VJP of ``angle_axis_to_matrix``: g has shape (..., 3, 3), returns (..., 3).

    dR/dv_i = c1 v_i K + a E_i + c2 v_i K^2 + b (E_i K + K E_i)
    with K = [v]x and E_i = dK/dv_i.
    """
    v = np.asarray(v, dtype=float)
    g = np.asarray(g, dtype=float)
    theta_sq = np.sum(v * v, axis=-1)
    a, b, c1, c2 = _rodrigues_coeffs(theta_sq)
    k = _skew(v)
    k2 = k @ k

    gk = np.sum(g * k, axis=(-2, -1))
    gk2 = np.sum(g * k2, axis=(-2, -1))
    out = (c1 * gk + c2 * gk2)[..., None] * v

    # <g, E_i> picks the skew part of g; <g, E_i K + K E_i> likewise on gK+Kg.
    def skew_dot(m):
        return np.stack([
            m[..., 2, 1] - m[..., 1, 2],
            m[..., 0, 2] - m[..., 2, 0],
            m[..., 1, 0] - m[..., 0, 1],
        ], axis=-1)

    out += a[..., None] * skew_dot(g)
    out += b[..., None] * skew_dot(g @ np.swapaxes(k, -2, -1) + np.swapaxes(k, -2, -1) @ g)
    return out


def rot6d_to_matrix(r):
    """Gram-Schmidt the two stored columns: (..., 6) -> (..., 3, 3).

    Raises DegenerateInput when the first column nearly vanishes or the two
    columns are nearly parallel.
    """
    r = np.asarray(r, dtype=float)
    a = r[..., :3]
    b = r[..., 3:]
    na = np.linalg.norm(a, axis=-1)
    if np.any(na < DEGENERACY_EPS):
        raise DegenerateInput("first 6D column has near-zero norm")
    c1 = a / na[..., None]
    u = b - np.sum(c1 * b, axis=-1, keepdims=True) * c1
    nu = np.linalg.norm(u, axis=-1)
    if np.any(nu < DEGENERACY_EPS):
        raise DegenerateInput("6D columns are near-parallel")
    c2 = u / nu[..., None]
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=-1)


def rot6d_to_matrix_vjp(r, g):
    """VJP of ``rot6d_to_matrix``: g (..., 3, 3) -> gradient w.r.t. r (..., 6)."""
    r = np.asarray(r, dtype=float)
    g = np.asarray(g, dtype=float)
    a = r[..., :3]
    b = r[..., 3:]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    c1 = a / na
    dot = np.sum(c1 * b, axis=-1, keepdims=True)
    u = b - dot * c1
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    c2 = u / nu

    gc1 = g[..., :, 0].copy()
    gc2 = g[..., :, 1].copy()
    gc3 = g[..., :, 2]

    # c3 = c1 x c2
    gc1 += np.cross(c2, gc3)
    gc2 += np.cross(gc3, c1)

    # c2 = u / |u|
    gu = (gc2 - np.sum(gc2 * c2, axis=-1, keepdims=True) * c2) / nu

    # u = b - (c1.b) c1
    gb = gu - np.sum(gu * c1, axis=-1, keepdims=True) * c1
    gc1 += -np.sum(gu * c1, axis=-1, keepdims=True) * b - dot * gu

    # c1 = a / |a|
    ga = (gc1 - np.sum(gc1 * c1, axis=-1, keepdims=True) * c1) / na
    return np.concatenate([ga, gb], axis=-1)


def matrix_to_rot6d(m):
    """First two matrix columns, flattened to (..., 6)."""
    m = np.asarray(m, dtype=float)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def matrix_to_quaternion(m):
    """Internal helper (Shepperd's method), (..., 3, 3) -> (..., 4) wxyz."""
    m = np.asarray(m, dtype=float)
    batch = m.shape[:-2]
    m = m.reshape((-1, 3, 3))
    q = np.empty((m.shape[0], 4))
    for i, R in enumerate(m):
        tr = np.trace(R)
        choices = np.array([tr, R[0, 0], R[1, 1], R[2, 2]])
        case = int(np.argmax(choices))
        if case == 0:
            s = np.sqrt(tr + 1.0) * 2.0
            q[i] = [0.25 * s,
                    (R[2, 1] - R[1, 2]) / s,
                    (R[0, 2] - R[2, 0]) / s,
                    (R[1, 0] - R[0, 1]) / s]
        elif case == 1:
            s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            q[i] = [(R[2, 1] - R[1, 2]) / s,
                    0.25 * s,
                    (R[0, 1] + R[1, 0]) / s,
                    (R[0, 2] + R[2, 0]) / s]
        elif case == 2:
            s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
            q[i] = [(R[0, 2] - R[2, 0]) / s,
                    (R[0, 1] + R[1, 0]) / s,
                    0.25 * s,
                    (R[1, 2] + R[2, 1]) / s]
        else:
            s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
            q[i] = [(R[1, 0] - R[0, 1]) / s,
                    (R[0, 2] + R[2, 0]) / s,
                    (R[1, 2] + R[2, 1]) / s,
                    0.25 * s]
    return q.reshape(batch + (4,))


def matrix_to_angle_axis(m):
    """Inverse Rodrigues, (..., 3, 3) -> (..., 3), angle canonicalized to [0, pi].

    Near angle pi the sign of the axis is ambiguous; we canonicalize via the
    quaternion with non-negative scalar part.
    """
    q = matrix_to_quaternion(m)
    # Flip to the non-negative-scalar hemisphere so the angle lands in [0, pi].
    q = np.where(q[..., :1] < 0.0, -q, q)
    w = np.clip(q[..., 0], -1.0, 1.0)
    vec = q[..., 1:]
    nv = np.linalg.norm(vec, axis=-1)
    angle = 2.0 * np.arctan2(nv, w)
    small = nv < SMALL_ANGLE
    scale = np.where(small, 2.0, angle / np.where(small, 1.0, nv))
    return scale[..., None] * vec


def is_rotation_matrix(m, tol=1e-9):
    m = np.asarray(m, dtype=float)
    eye = np.broadcast_to(np.eye(3), m.shape)
    ortho = np.max(np.abs(np.swapaxes(m, -2, -1) @ m - eye))
    det = np.max(np.abs(np.linalg.det(m) - 1.0))
    return bool(ortho <= tol and det <= tol)


def yaw_matrix(angle):
    """Rotation by ``angle`` radians about the camera-frame y axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
