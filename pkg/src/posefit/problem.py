"""Fitting problem definition shared by the objective and the optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .body import BodyModel, rep_dim
from .camera import Camera
from .errors import InvalidConfig
from .flow import FlowModel
from .losses import SegmentationMask
from .prior import GmmPrior

PRIOR_KINDS = ("nf-latent", "nf-ambient", "gmm", "none")


@dataclass
class FrameEvidence:
    detections: np.ndarray | None = None   # (N_j, 2) pixels
    confidences: np.ndarray | None = None  # (N_j,)
    mask: SegmentationMask | None = None


def default_weights():
    return {"KA": 1.0, "BA": 1.0, "prior": 1.0, "shape": 1.0, "depth": 1.0}


@dataclass
class FitProblem:
    model: BodyModel
    camera: Camera
    frames: list[FrameEvidence]
    prior_kind: str = "nf-latent"
    flow: FlowModel | None = None
    gmm: GmmPrior | None = None
    weights: dict = field(default_factory=default_weights)
    smooth_weight: float | None = None  # None -> 50x the prior weight
    mask_stride: int = 1

    def __post_init__(self):
        if self.prior_kind not in PRIOR_KINDS:
            raise InvalidConfig(f"unknown prior kind {self.prior_kind!r}")
        if not self.frames:
            raise InvalidConfig("need at least one frame of evidence")
        if self.prior_kind in ("nf-latent", "nf-ambient"):
            if self.flow is None:
                raise InvalidConfig(f"{self.prior_kind} prior requires a flow")
            if self.flow.dim != self.model.body_pose_dim:
                raise InvalidConfig(
                    f"flow dim {self.flow.dim} != body pose dim "
                    f"{self.model.body_pose_dim}")
        if self.prior_kind == "gmm" and self.gmm is None:
            raise InvalidConfig("gmm prior requires a fitted GmmPrior")
        for key in default_weights():
            self.weights.setdefault(key, 1.0)

    @property
    def n_frames(self):
        return len(self.frames)

    @property
    def root_dim(self):
        return rep_dim(self.model.representation)

    @property
    def pose_dim(self):
        """Per-frame pose-or-latent segment length (body joints, root excluded)."""
        return self.model.body_pose_dim

    @property
    def frame_dim(self):
        return self.root_dim + self.pose_dim

    @property
    def n_params(self):
        return self.n_frames * self.frame_dim + self.model.n_shape

    def effective_smooth_weight(self):
        if self.smooth_weight is not None:
            return float(self.smooth_weight)
        return 50.0 * float(self.weights.get("prior", 1.0))


class ParamBlock:
    """Bijection between the flat optimizer vector and named segments.

    Layout: [root_1, pose_or_latent_1, ..., root_N, pose_or_latent_N, shape];
    the shape segment appears once and is shared across frames.
    """

    def __init__(self, problem: FitProblem):
        self.problem = problem
        self.root_dim = problem.root_dim
        self.pose_dim = problem.pose_dim
        self.frame_dim = problem.frame_dim
        self.n_frames = problem.n_frames
        self.n_shape = problem.model.n_shape
        self.size = problem.n_params

    def zeros(self):
        return np.zeros(self.size)

    def root(self, x, f):
        o = f * self.frame_dim
        return x[o:o + self.root_dim]

    def pose(self, x, f):
        o = f * self.frame_dim + self.root_dim
        return x[o:o + self.pose_dim]

    def shape(self, x):
        return x[self.n_frames * self.frame_dim:]

    def pack(self, roots, poses, shape):
        x = self.zeros()
        for f in range(self.n_frames):
            self.root(x, f)[:] = roots[f]
            self.pose(x, f)[:] = poses[f]
        self.shape(x)[:] = shape
        return x
