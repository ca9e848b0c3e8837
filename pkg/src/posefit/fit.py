"""Multi-start quasi-Newton fitting of pose and shape to 2D evidence."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import line_search as _wolfe_line_search

from . import rotation
from .body import identity_pose, pose_body, rep_dim
from .errors import AllStartsDiverged, DimensionMismatch
from .grad import objective_with_gradient
from .problem import FitProblem, FrameEvidence, ParamBlock

GLOBAL_YAWS = (0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi)


@dataclass
class BfgsResult:
    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    trajectory: list
    status: str


class _Memo:
    """Caches the most recent objective evaluations; the Wolfe line search
    requests value and gradient at the same point through separate callables."""

    def __init__(self, fn, size=8):
        self.fn = fn
        self.size = size
        self._cache = {}
        self._order = []

    def __call__(self, x):
        key = np.asarray(x, dtype=float).tobytes()
        if key not in self._cache:
            self._cache[key] = self.fn(x)[:2]
            self._order.append(key)
            if len(self._order) > self.size:
                self._cache.pop(self._order.pop(0), None)
        return self._cache[key]


def minimize_bfgs(fn, x0, max_iter=500, gtol=1e-6, ftol_rel=1e-10,
                  c1=1e-4, c2=0.9):
    """Dense BFGS with a strong-Wolfe line search.

    ``fn`` returns (value, gradient). Accepted steps never increase the
    objective; iteration stops on gradient infinity norm < gtol, relative
    objective change < ftol_rel, or max_iter.
    """
    fn = _Memo(fn)
    x = np.asarray(x0, dtype=float).copy()
    f, g = fn(x)[:2]
    if not np.isfinite(f):
        return BfgsResult(x, float(f), np.inf, 0, [float(f)], "diverged")
    n = x.size
    H = np.eye(n)
    trajectory = [float(f)]
    status = "max_iter"
    f_old_for_ls = f + np.linalg.norm(g) / 2.0

    for it in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(g)))
        if gnorm < gtol:
            status = "gtol"
            break
        p = -H @ g

        with np.errstate(all="ignore"):
            alpha = _wolfe_line_search(
                lambda xx: fn(xx)[0], lambda xx: fn(xx)[1],
                x, p, gfk=g, old_fval=f, old_old_fval=f_old_for_ls,
                c1=c1, c2=c2, maxiter=30)[0]

        if alpha is None:
            # Armijo backtracking fallback; stop if no decrease is possible.
            alpha = 1.0
            ok = False
            slope = float(g @ p)
            for _ in range(40):
                val = fn(x + alpha * p)[0]
                if np.isfinite(val) and val <= f + c1 * alpha * slope:
                    ok = True
                    break
                alpha *= 0.5
            if not ok:
                status = "line_search_failed"
                break

        x_new = x + alpha * p
        f_new, g_new = fn(x_new)[:2]
        if not np.isfinite(f_new) or not np.all(np.isfinite(g_new)):
            status = "diverged"
            break
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) \
                + rho * rho * (float(y @ Hy) + sy) * np.outer(s, s)
        f_old_for_ls = f
        rel_change = abs(f - f_new) / max(1.0, abs(f))
        x, f, g = x_new, f_new, g_new
        trajectory.append(float(f))
        if rel_change < ftol_rel:
            status = "ftol"
            break

    return BfgsResult(x, float(f), float(np.max(np.abs(g))), len(trajectory) - 1,
                      trajectory, status)


@dataclass
class FitResult:
    x: np.ndarray
    roots: list
    poses: list              # per-frame pose-or-latent segments
    body_poses: list         # per-frame ambient body pose vectors
    shape: np.ndarray
    translations: list
    value: float
    breakdown: dict
    trajectories: list       # per-start list of objective values
    selected_start: int
    statuses: list
    metrics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "value": self.value,
            "selected_start": self.selected_start,
            "statuses": self.statuses,
            "roots": [np.asarray(r).tolist() for r in self.roots],
            "poses": [np.asarray(p).tolist() for p in self.poses],
            "body_poses": [np.asarray(p).tolist() for p in self.body_poses],
            "shape": np.asarray(self.shape).tolist(),
            "translations": [list(t) for t in self.translations],
            "breakdown": self.breakdown,
            "trajectories": self.trajectories,
            "metrics": self.metrics,
        }


def _root_init(representation, yaw):
    m = rotation.yaw_matrix(yaw)
    if representation == "angle_axis":
        return rotation.matrix_to_angle_axis(m)
    return rotation.matrix_to_rot6d(m)


def _pose_init(problem: FitProblem):
    if problem.prior_kind == "nf-latent":
        return np.zeros(problem.pose_dim)
    if problem.model.representation == "rot6d":
        # Ambient 6D zero is rank-deficient; the natural zero rotation is the
        # identity encoding.
        n_body = problem.model.n_joints - 1
        return identity_pose(n_body, "rot6d").ravel()
    return np.zeros(problem.pose_dim)


def _extract(problem: FitProblem, x):
    block = ParamBlock(problem)
    roots, poses, body_poses = [], [], []
    for f in range(problem.n_frames):
        root = block.root(x, f).copy()
        seg = block.pose(x, f).copy()
        body = problem.flow.inverse(seg) if problem.prior_kind == "nf-latent" \
            else seg.copy()
        roots.append(root)
        poses.append(seg)
        body_poses.append(body)
    return roots, poses, body_poses, block.shape(x).copy()


def fit_static(problem: FitProblem, max_iter=500, gtol=1e-6,
               ftol_rel=1e-10) -> FitResult:
    """Single-frame fit from 4 globally rotated zero initializations.

    Diverged starts are discarded; the reported result has the minimum final
    loss among the survivors (ties break to the lowest start index).
    """
    if problem.n_frames != 1:
        raise DimensionMismatch("fit_static expects a single frame")
    return _fit_multistart(problem, max_iter, gtol, ftol_rel)


def _fit_multistart(problem, max_iter, gtol, ftol_rel):
    block = ParamBlock(problem)
    fn = lambda x: objective_with_gradient(problem, x)
    pose0 = _pose_init(problem)
    results = []
    for yaw in GLOBAL_YAWS:
        x0 = block.pack([_root_init(problem.model.representation, yaw)]
                        * problem.n_frames,
                        [pose0] * problem.n_frames,
                        np.zeros(problem.model.n_shape))
        results.append(minimize_bfgs(fn, x0, max_iter=max_iter, gtol=gtol,
                                     ftol_rel=ftol_rel))
    return _select(problem, results)


def _select(problem, results, extra_statuses=None):
    finite = [(i, r) for i, r in enumerate(results)
              if np.isfinite(r.value) and r.status != "diverged"]
    if not finite:
        raise AllStartsDiverged("all restarts produced non-finite objectives")
    best_i, best = min(finite, key=lambda ir: (ir[1].value, ir[0]))
    value, _, info = objective_with_gradient(problem, best.x, want_info=True)
    roots, poses, body_poses, shape = _extract(problem, best.x)
    return FitResult(
        x=best.x, roots=roots, poses=poses, body_poses=body_poses,
        shape=shape, translations=info["translations"], value=value,
        breakdown={"terms": info["terms"], "weights": info["weights"]},
        trajectories=[r.trajectory for r in results],
        selected_start=best_i,
        statuses=[r.status for r in results] + (extra_statuses or []),
    )


def fit_sequence(problem: FitProblem, max_iter=500, gtol=1e-6,
                 ftol_rel=1e-10, static_max_iter=None,
                 init=None) -> FitResult:
    """Joint fit over all frames with tied shape and the temporal term.

    Initialized from independent per-frame static fits (or from ``init``, a
    list of per-frame static FitResults); the smoothness weight defaults to
    50x the prior weight.
    """
    if problem.n_frames == 1:
        return fit_static(problem, max_iter=max_iter, gtol=gtol,
                          ftol_rel=ftol_rel)
    static_max_iter = static_max_iter or max_iter
    block = ParamBlock(problem)
    roots, poses, shapes = [], [], []
    statuses = []
    if init is not None:
        if len(init) != problem.n_frames:
            raise DimensionMismatch("init must hold one static result "
                                    "per frame")
        for res in init:
            roots.append(res.roots[0])
            poses.append(res.poses[0])
            shapes.append(res.shape)
            statuses.append("static-init")
    else:
        for ev in problem.frames:
            sub = FitProblem(model=problem.model, camera=problem.camera,
                             frames=[ev], prior_kind=problem.prior_kind,
                             flow=problem.flow, gmm=problem.gmm,
                             weights=dict(problem.weights),
                             mask_stride=problem.mask_stride)
            res = fit_static(sub, max_iter=static_max_iter, gtol=gtol,
                             ftol_rel=ftol_rel)
            roots.append(res.roots[0])
            poses.append(res.poses[0])
            shapes.append(res.shape)
            statuses.append("static-init")
    x0 = block.pack(roots, poses, np.mean(shapes, axis=0))
    fn = lambda x: objective_with_gradient(problem, x)
    res = minimize_bfgs(fn, x0, max_iter=max_iter, gtol=gtol,
                        ftol_rel=ftol_rel)
    if not np.isfinite(res.value) or res.status == "diverged":
        raise AllStartsDiverged("temporal optimization diverged")
    return _select(problem, [res], extra_statuses=statuses)


# -- evaluation ----------------------------------------------------------------

def procrustes_align(pred, gt):
    """Similarity (scale + rotation + translation) aligning pred onto gt."""
    p = np.asarray(pred, dtype=float)
    g = np.asarray(gt, dtype=float)
    mu_p, mu_g = p.mean(axis=0), g.mean(axis=0)
    pc, gc = p - mu_p, g - mu_g
    cov = gc.T @ pc / len(p)
    U, S, Vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.diag([1.0, 1.0, d])
    R = U @ D @ Vt
    var_p = (pc * pc).sum() / len(p)
    s = np.trace(np.diag(S) @ D) / var_p
    return s * pc @ R.T + mu_g


def mean_point_error(pred, gt):
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise DimensionMismatch("point sets differ in shape")
    return float(np.linalg.norm(pred - gt, axis=1).mean())


def evaluate(pred_joints, gt_joints, pred_vertices=None, gt_vertices=None,
             procrustes=True):
    """MPJPE / MPVPE in meters, with an optional Procrustes-aligned MPJPE."""
    out = {"MPJPE": mean_point_error(pred_joints, gt_joints)}
    if pred_vertices is not None and gt_vertices is not None:
        out["MPVPE"] = mean_point_error(pred_vertices, gt_vertices)
    if procrustes:
        aligned = procrustes_align(pred_joints, gt_joints)
        out["MPJPE_PA"] = mean_point_error(aligned, gt_joints)
    return out


def result_world_geometry(problem: FitProblem, result: FitResult, frame=0):
    """Posed joints and vertices of a fit, translated into camera space."""
    full = np.concatenate([result.roots[frame], result.body_poses[frame]])
    posed = pose_body(problem.model, full, result.shape)
    T = np.asarray(result.translations[frame])
    return posed.joints3d + T, posed.vertices + T
