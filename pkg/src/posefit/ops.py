"""Command implementations shared by the HTTP service and the CLI.

Every artifact embeds the resolved config (including the seed) so any
command can be re-run bit-exactly from the artifact alone: JSON artifacts
carry a ``config`` / ``metadata`` key, CSV and PGM artifacts carry ``#``
comment lines.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from . import flow as flow_mod
from . import synth
from .body import BodyModel, make_synthetic_model, pose_body
from .camera import load_keypoints, save_keypoints
from .config import embedded_config
from .errors import ConfigError, IoError
from .fit import evaluate, fit_sequence, fit_static, result_world_geometry
from .losses import SegmentationMask
from .prior import GmmPrior, gmm_fit
from .problem import FitProblem, FrameEvidence


# -- pose corpus CSV -----------------------------------------------------------

def save_pose_csv(path, poses, comment=None):
    """One pose vector per line; '#' lines carry embedded metadata."""
    poses = np.asarray(poses, dtype=float)
    try:
        with open(path, "w", newline="") as fh:
            if comment:
                for line in str(comment).splitlines():
                    fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            for row in np.atleast_2d(poses):
                writer.writerow([repr(float(v)) for v in row])
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_pose_csv(path):
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh)
                    if r and not r[0].lstrip().startswith("#")]
    except OSError as exc:
        raise IoError(str(exc)) from exc
    if not rows:
        raise IoError(f"{path}: empty pose CSV")
    try:
        return np.array([[float(v) for v in row] for row in rows])
    except ValueError as exc:
        raise IoError(f"{path}: malformed pose CSV: {exc}") from exc


# -- synth ---------------------------------------------------------------------

def _build_model(mcfg):
    return make_synthetic_model(
        seed=mcfg["seed"], n_joints=mcfg["n_joints"], n_shape=mcfg["n_shape"],
        n_vertices=mcfg["n_vertices"], n_parts=mcfg["n_parts"],
        representation=mcfg["representation"])


def _build_camera(ccfg):
    return synth.small_camera(size=ccfg["size"], focal=ccfg["focal"])


def run_synth(cfg):
    stamp = embedded_config("synth", cfg)
    model = _build_model(cfg["model"])
    cam = _build_camera(cfg["camera"])
    out_dir = cfg["out_dir"]
    frames_dir = os.path.join(out_dir, "frames")
    try:
        os.makedirs(frames_dir, exist_ok=True)
    except OSError as exc:
        raise IoError(str(exc)) from exc

    ccfg = cfg["corpus"]
    corpus = synth.sample_body_poses(
        cfg["n_poses"], model.n_joints - 1, seed=cfg["seed"],
        representation=model.representation, latent_dim=ccfg["latent_dim"],
        angle_scale=ccfg["angle_scale"], noise=ccfg["noise"])

    model_path = os.path.join(out_dir, "model.json")
    model.save(model_path, metadata={"config": json.loads(stamp)})
    corpus_path = os.path.join(out_dir, "corpus.csv")
    save_pose_csv(corpus_path, corpus, comment=stamp)

    ecfg = cfg["evidence"]
    gt_frames = []
    keypoint_paths, mask_paths = [], []
    for i in range(cfg["n_frames"]):
        frame_seed = cfg["seed"] * 1000 + i
        if ecfg["recoverable"]:
            gt, gap = synth.sample_recoverable_ground_truth(
                model, cam, seed=frame_seed, depth=ecfg["depth"],
                shape_scale=ecfg["shape_scale"], tilt=ecfg["tilt"],
                pose_noise=ccfg["noise"])
        else:
            gt = synth.sample_ground_truth(
                model, seed=frame_seed, depth=ecfg["depth"],
                shape_scale=ecfg["shape_scale"])
            gap = synth.solve_consistency_gap(model, cam, gt)
        ev = synth.render_evidence(model, cam, gt, noise_px=ecfg["noise_px"],
                                   seed=frame_seed,
                                   mask_radius=ecfg["mask_radius"])
        kp_path = os.path.join(frames_dir, f"frame_{i:03d}_keypoints.csv")
        save_keypoints(kp_path, ev["detections"], ev["confidences"],
                       comment=stamp)
        mask_path = os.path.join(frames_dir, f"frame_{i:03d}_mask.pgm")
        ev["mask"].save_pgm(mask_path, comment=stamp)
        keypoint_paths.append(kp_path)
        mask_paths.append(mask_path)
        gt_frames.append({
            "root": np.asarray(gt["root"]).tolist(),
            "pose": np.asarray(gt["pose"]).tolist(),
            "shape": np.asarray(gt["shape"]).tolist(),
            "T": np.asarray(gt["T"]).tolist(),
            "solve_gap": float(gap),
        })

    gt_path = os.path.join(out_dir, "ground_truth.json")
    try:
        with open(gt_path, "w") as fh:
            json.dump({"format": "posefit-gt-v1", "config": json.loads(stamp),
                       "frames": gt_frames}, fh, sort_keys=True)
    except OSError as exc:
        raise IoError(str(exc)) from exc

    return {
        "model": model_path,
        "corpus": corpus_path,
        "ground_truth": gt_path,
        "keypoints": keypoint_paths,
        "masks": mask_paths,
        "n_poses": int(cfg["n_poses"]),
        "n_frames": int(cfg["n_frames"]),
    }


# -- train-prior ---------------------------------------------------------------

def run_train_prior(cfg):
    stamp = embedded_config("train-prior", cfg)
    data = load_pose_csv(cfg["corpus"])
    if cfg["kind"] == "flow":
        fcfg = cfg["flow"]
        model = flow_mod.train(
            data, architecture=fcfg["architecture"], steps=fcfg["steps"],
            batch_size=fcfg["batch_size"],
            learning_rate=fcfg["learning_rate"],
            decay_rate=fcfg["decay_rate"], decay_every=fcfg["decay_every"],
            hidden=fcfg["hidden"], seed=cfg["seed"],
            holdout_fraction=fcfg["holdout_fraction"])
        model.metadata = {"config": json.loads(stamp)}
        model.save(cfg["out"])
        summary = {"kind": "flow", "out": cfg["out"],
                   "n_params": int(model.n_params()),
                   "steps": int(model.steps_trained)}
        holdout = getattr(model, "holdout_log_prob", None)
        if holdout is not None:
            summary["holdout_log_prob"] = [float(v) for v in holdout]
        return summary
    if cfg["kind"] == "gmm":
        gcfg = cfg["gmm"]
        prior = gmm_fit(data, n_modes=gcfg["n_modes"], seed=cfg["seed"],
                        max_iter=gcfg["max_iter"], tol=gcfg["tol"])
        prior.metadata = {"config": json.loads(stamp)}
        prior.save(cfg["out"])
        return {"kind": "gmm", "out": cfg["out"],
                "n_modes": int(prior.n_modes),
                "mean_nll": float(np.mean(prior.exact_nll(data)))}
    raise ConfigError(f"unknown prior kind {cfg['kind']!r}")


# -- fit -----------------------------------------------------------------------

def _as_list(value):
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def _load_ground_truth(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    except ValueError as exc:
        raise IoError(f"{path}: not valid JSON: {exc}") from exc
    if d.get("format") != "posefit-gt-v1":
        raise IoError(f"{path}: not a ground-truth file")
    return d


def _gt_geometry(model, gt_frame):
    full = np.concatenate([gt_frame["root"], gt_frame["pose"]])
    posed = pose_body(model, full, np.asarray(gt_frame["shape"], dtype=float))
    T = np.asarray(gt_frame["T"], dtype=float)
    return posed.joints3d + T, posed.vertices + T


def _metrics_against_gt(problem, result, gt):
    rows = []
    for f in range(problem.n_frames):
        pred_j, pred_v = result_world_geometry(problem, result, frame=f)
        gt_j, gt_v = _gt_geometry(problem.model, gt["frames"][f])
        rows.append(evaluate(pred_j, gt_j, pred_v, gt_v))
    mean = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
    return {"per_frame": rows, "mean": mean}


def run_fit(cfg):
    stamp = embedded_config("fit", cfg)
    model = BodyModel.load(cfg["model"])
    cam = _build_camera(cfg["camera"])
    kp_paths = _as_list(cfg["keypoints"])
    mask_paths = _as_list(cfg["masks"])
    if mask_paths and len(mask_paths) != len(kp_paths):
        raise ConfigError("masks must match keypoints one-to-one")
    frames = []
    for i, kp_path in enumerate(kp_paths):
        det, conf = load_keypoints(kp_path)
        mask = SegmentationMask.load_pgm(mask_paths[i]) if mask_paths else None
        frames.append(FrameEvidence(detections=det, confidences=conf,
                                    mask=mask))
    flow = flow_mod.FlowModel.load(cfg["flow"]) if cfg["flow"] else None
    gmm = GmmPrior.load(cfg["gmm"]) if cfg["gmm"] else None
    problem = FitProblem(model=model, camera=cam, frames=frames,
                         prior_kind=cfg["prior"], flow=flow, gmm=gmm,
                         weights=dict(cfg["weights"]),
                         smooth_weight=cfg["smooth_weight"],
                         mask_stride=cfg["mask_stride"])
    if problem.n_frames == 1:
        result = fit_static(problem, max_iter=cfg["max_iter"])
    else:
        result = fit_sequence(problem, max_iter=cfg["max_iter"])

    if cfg["ground_truth"]:
        gt = _load_ground_truth(cfg["ground_truth"])
        if len(gt["frames"]) < problem.n_frames:
            raise ConfigError("ground truth has fewer frames than evidence")
        result.metrics = _metrics_against_gt(problem, result, gt)

    payload = {"format": "posefit-fit-v1", "config": json.loads(stamp),
               "result": result.to_dict()}
    try:
        with open(cfg["out"], "w") as fh:
            json.dump(payload, fh, sort_keys=True)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    summary = {"out": cfg["out"], "value": float(result.value),
               "selected_start": int(result.selected_start),
               "statuses": result.statuses}
    if result.metrics:
        summary["metrics"] = result.metrics["mean"]
    return summary


# -- eval ----------------------------------------------------------------------

def _load_fit_result(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    except ValueError as exc:
        raise IoError(f"{path}: not valid JSON: {exc}") from exc
    if d.get("format") != "posefit-fit-v1":
        raise IoError(f"{path}: not a fit result file")
    return d


def run_eval(cfg):
    stamp = embedded_config("eval", cfg)
    model = BodyModel.load(cfg["model"])
    fit_doc = _load_fit_result(cfg["result"])
    gt = _load_ground_truth(cfg["ground_truth"])
    res = fit_doc["result"]
    n_frames = len(res["roots"])
    if len(gt["frames"]) < n_frames:
        raise ConfigError("ground truth has fewer frames than the result")
    shape = np.asarray(res["shape"], dtype=float)
    rows = []
    for f in range(n_frames):
        full = np.concatenate([res["roots"][f], res["body_poses"][f]])
        posed = pose_body(model, full, shape)
        T = np.asarray(res["translations"][f], dtype=float)
        gt_j, gt_v = _gt_geometry(model, gt["frames"][f])
        rows.append(evaluate(posed.joints3d + T, gt_j,
                             posed.vertices + T, gt_v))
    try:
        with open(cfg["out"], "w", newline="") as fh:
            for line in stamp.splitlines():
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(["frame", "MPJPE", "MPVPE", "MPJPE_PA"])
            for f, r in enumerate(rows):
                writer.writerow([f, repr(r["MPJPE"]), repr(r["MPVPE"]),
                                 repr(r["MPJPE_PA"])])
            writer.writerow(["mean",
                             repr(float(np.mean([r["MPJPE"] for r in rows]))),
                             repr(float(np.mean([r["MPVPE"] for r in rows]))),
                             repr(float(np.mean([r["MPJPE_PA"]
                                                 for r in rows])))])
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return {"out": cfg["out"], "n_frames": n_frames,
            "mean_MPJPE": float(np.mean([r["MPJPE"] for r in rows]))}


# -- sample / interp -----------------------------------------------------------

def run_sample(cfg):
    stamp = embedded_config("sample", cfg)
    model = flow_mod.FlowModel.load(cfg["checkpoint"])
    poses = model.sample(cfg["n"], seed=cfg["seed"])
    save_pose_csv(cfg["out"], poses, comment=stamp)
    return {"out": cfg["out"], "n": int(cfg["n"]), "dim": int(model.dim)}


def run_interp(cfg):
    stamp = embedded_config("interp", cfg)
    model = flow_mod.FlowModel.load(cfg["checkpoint"])
    corpus = load_pose_csv(cfg["corpus"])
    for key in ("start_row", "end_row"):
        if not 0 <= cfg[key] < len(corpus):
            raise ConfigError(f"{key} out of range for corpus of "
                              f"{len(corpus)} rows")
    z_a = model.forward(corpus[cfg["start_row"]])[0]
    z_b = model.forward(corpus[cfg["end_row"]])[0]
    poses = model.interpolate(z_a, z_b, cfg["steps"])
    save_pose_csv(cfg["out"], poses, comment=stamp)
    return {"out": cfg["out"], "steps": int(cfg["steps"]),
            "dim": int(model.dim)}


RUNNERS = {
    "synth": run_synth,
    "train-prior": run_train_prior,
    "fit": run_fit,
    "eval": run_eval,
    "sample": run_sample,
    "interp": run_interp,
}
