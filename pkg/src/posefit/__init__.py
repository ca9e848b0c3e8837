"""Normalizing-flow pose priors and optimization-based 3D body fitting."""

from .body import BodyModel, PosedBody, make_synthetic_model, part_vertices, pose_body
from .camera import Camera, project, solve_translation
from .fit import FitResult, evaluate, fit_sequence, fit_static, minimize_bfgs
from .flow import FlowModel, train
from .grad import check_gradient, objective_with_gradient
from .losses import SegmentationMask, body_alignment_loss, keypoint_loss, smoothness_loss
from .prior import GmmPrior, PriorEval, gmm_fit, nf_prior_ambient, nf_prior_latent
from .problem import FitProblem, FrameEvidence, ParamBlock

__version__ = "0.1.0"

__all__ = [
    "BodyModel", "Camera", "FitProblem", "FitResult", "FlowModel",
    "FrameEvidence", "GmmPrior", "ParamBlock", "PosedBody", "PriorEval",
    "SegmentationMask", "body_alignment_loss", "check_gradient", "evaluate",
    "fit_sequence", "fit_static", "gmm_fit", "keypoint_loss",
    "make_synthetic_model", "minimize_bfgs", "nf_prior_ambient",
    "nf_prior_latent", "objective_with_gradient", "part_vertices",
    "pose_body", "project", "smoothness_loss", "solve_translation", "train",
]
