import numpy as np
import pytest

from posefit import rotation, synth
from posefit.body import pose_body
from posefit.errors import AllStartsDiverged, DimensionMismatch
from posefit.fit import (evaluate, fit_sequence, fit_static, mean_point_error,
                         minimize_bfgs, procrustes_align,
                         result_world_geometry)
from posefit.problem import FitProblem, FrameEvidence

WEIGHTS = {"KA": 1.0, "BA": 0.001, "prior": 0.01, "shape": 1.0, "depth": 1.0}


class TestBfgs:
    def test_quadratic_exact(self):
        A = np.diag([1.0, 4.0, 9.0])
        b = np.array([1.0, -2.0, 3.0])

        def fn(x):
            return 0.5 * x @ A @ x - b @ x, A @ x - b

        res = minimize_bfgs(fn, np.zeros(3), gtol=1e-10, ftol_rel=0.0)
        assert np.allclose(res.x, np.linalg.solve(A, b), atol=1e-8)
        assert res.status == "gtol"

    def test_rosenbrock(self):
        def fn(x):
            a, c = 1.0, 100.0
            v = (a - x[0]) ** 2 + c * (x[1] - x[0] ** 2) ** 2
            g = np.array([-2 * (a - x[0]) - 4 * c * x[0] * (x[1] - x[0] ** 2),
                          2 * c * (x[1] - x[0] ** 2)])
            return v, g

        res = minimize_bfgs(fn, np.array([-1.2, 1.0]), max_iter=200,
                            gtol=1e-8)
        assert np.allclose(res.x, [1.0, 1.0], atol=1e-5)

    def test_monotone_trajectory(self):
        def fn(x):
            return float(np.sum(x ** 4)), 4 * x ** 3

        res = minimize_bfgs(fn, np.array([2.0, -3.0]))
        assert all(b <= a + 1e-15 for a, b in
                   zip(res.trajectory, res.trajectory[1:]))

    def test_nonfinite_start(self):
        res = minimize_bfgs(lambda x: (np.inf, np.zeros_like(x)), np.ones(2))
        assert res.status == "diverged"


class TestFitStatic:
    @pytest.fixture(scope="class")
    def recovery(self, small_model, small_camera, trained_flow):
        gt, gap = synth.sample_recoverable_ground_truth(
            small_model, small_camera, seed=123)
        ev = synth.render_evidence(small_model, small_camera, gt,
                                   noise_px=0.0, seed=0)
        problem = FitProblem(
            model=small_model, camera=small_camera,
            frames=[FrameEvidence(detections=ev["detections"],
                                  confidences=ev["confidences"],
                                  mask=ev["mask"])],
            prior_kind="nf-latent", flow=trained_flow,
            weights=dict(WEIGHTS), mask_stride=2)
        result = fit_static(problem, max_iter=400)
        return gt, ev, problem, result

    def test_recovers_clean_evidence(self, recovery):
        gt, ev, problem, result = recovery
        joints, verts = result_world_geometry(problem, result)
        metrics = evaluate(joints, ev["gt_joints"], verts, ev["gt_vertices"])
        assert metrics["MPJPE"] < 0.05
        assert metrics["MPJPE_PA"] <= metrics["MPJPE"] + 1e-9

    def test_reports_all_starts(self, recovery):
        _, _, _, result = recovery
        assert len(result.trajectories) == 4
        assert 0 <= result.selected_start < 4
        finals = [t[-1] for i, t in enumerate(result.trajectories)
                  if result.statuses[i] != "diverged"]
        assert np.isclose(result.value, min(finals), rtol=1e-9)

    def test_breakdown_totals(self, recovery):
        _, _, _, result = recovery
        terms, weights = result.breakdown["terms"], result.breakdown["weights"]
        total = sum(weights[k] * terms[k] for k in terms)
        assert np.isclose(result.value, total, rtol=1e-12)

    def test_rejects_multiframe(self, small_model, small_camera,
                                trained_flow):
        frames = [FrameEvidence(), FrameEvidence()]
        problem = FitProblem(model=small_model, camera=small_camera,
                             frames=frames, prior_kind="nf-latent",
                             flow=trained_flow)
        with pytest.raises(DimensionMismatch):
            fit_static(problem)

    def test_all_starts_diverged(self, small_model, small_camera,
                                 trained_flow):
        # fewer than 3 confident joints: the translation solve is degenerate
        # at every initialization, so every restart reports +inf
        gt = synth.sample_ground_truth(small_model, seed=5)
        ev = synth.render_evidence(small_model, small_camera, gt,
                                   with_mask=False)
        conf = np.zeros(len(ev["detections"]))
        conf[:2] = 1.0
        problem = FitProblem(
            model=small_model, camera=small_camera,
            frames=[FrameEvidence(detections=ev["detections"],
                                  confidences=conf)],
            prior_kind="nf-latent", flow=trained_flow)
        with pytest.raises(AllStartsDiverged):
            fit_static(problem, max_iter=5)


class TestFitSequence:
    def test_single_frame_delegates_to_static(self, small_model, small_camera,
                                              trained_flow):
        gt, _ = synth.sample_recoverable_ground_truth(small_model,
                                                      small_camera, seed=7)
        ev = synth.render_evidence(small_model, small_camera, gt,
                                   with_mask=False)
        problem = FitProblem(
            model=small_model, camera=small_camera,
            frames=[FrameEvidence(detections=ev["detections"],
                                  confidences=ev["confidences"])],
            prior_kind="nf-latent", flow=trained_flow,
            weights=dict(WEIGHTS))
        res = fit_sequence(problem, max_iter=100)
        assert len(res.trajectories) == 4  # the static multistart ran

    def test_init_shape_mismatch(self, small_model, small_camera,
                                 trained_flow):
        frames = [FrameEvidence(), FrameEvidence()]
        problem = FitProblem(model=small_model, camera=small_camera,
                             frames=frames, prior_kind="nf-latent",
                             flow=trained_flow)
        with pytest.raises(DimensionMismatch):
            fit_sequence(problem, init=[None])


class TestMetrics:
    def test_mpjpe_single_offset_joint(self):
        gt = np.zeros((24, 3))
        pred = gt.copy()
        pred[0, 0] = 0.05
        assert np.isclose(mean_point_error(pred, gt), 0.05 / 24)

    def test_procrustes_removes_similarity(self, rng):
        gt = rng.normal(size=(15, 3))
        R = rotation.angle_axis_to_matrix(np.array([0.3, -0.2, 0.9]))
        pred = 1.7 * gt @ R.T + np.array([0.5, -1.0, 2.0])
        m = evaluate(pred, gt)
        assert m["MPJPE"] > 0.1
        assert m["MPJPE_PA"] < 1e-9

    def test_procrustes_identity_when_aligned(self, rng):
        gt = rng.normal(size=(10, 3))
        assert np.allclose(procrustes_align(gt, gt), gt, atol=1e-12)

    def test_evaluate_includes_vertices(self, rng):
        j = rng.normal(size=(5, 3))
        v = rng.normal(size=(20, 3))
        m = evaluate(j, j, v + 0.01, v)
        assert np.isclose(m["MPVPE"], np.sqrt(3) * 0.01)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            mean_point_error(np.zeros((3, 3)), np.zeros((4, 3)))


class TestWorldGeometry:
    def test_matches_direct_posing(self, small_model, small_camera,
                                   trained_flow):
        gt, _ = synth.sample_recoverable_ground_truth(small_model,
                                                      small_camera, seed=11)
        ev = synth.render_evidence(small_model, small_camera, gt,
                                   with_mask=False)
        problem = FitProblem(
            model=small_model, camera=small_camera,
            frames=[FrameEvidence(detections=ev["detections"],
                                  confidences=ev["confidences"])],
            prior_kind="nf-latent", flow=trained_flow,
            weights=dict(WEIGHTS))
        res = fit_static(problem, max_iter=60)
        joints, verts = result_world_geometry(problem, res)
        full = np.concatenate([res.roots[0], res.body_poses[0]])
        posed = pose_body(small_model, full, res.shape)
        T = np.asarray(res.translations[0])
        assert np.allclose(joints, posed.joints3d + T)
        assert np.allclose(verts, posed.vertices + T)
