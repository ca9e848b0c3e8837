import numpy as np
import pytest

from posefit import synth
from posefit.errors import NonFiniteValue
from posefit.grad import check_gradient, objective_with_gradient
from posefit.problem import FitProblem, FrameEvidence, ParamBlock

WEIGHTS = {"KA": 1.0, "BA": 0.001, "prior": 0.01, "shape": 1.0, "depth": 1.0}


def make_problem(small_model, small_camera, trained_flow, trained_gmm,
                 prior_kind, n_frames=1, seed=0, with_mask=True):
    frames = []
    for f in range(n_frames):
        gt = synth.sample_ground_truth(small_model, seed=seed + f)
        ev = synth.render_evidence(small_model, small_camera, gt,
                                   noise_px=1.0, seed=seed + f,
                                   with_mask=with_mask)
        frames.append(FrameEvidence(detections=ev["detections"],
                                    confidences=ev["confidences"],
                                    mask=ev["mask"]))
    return FitProblem(model=small_model, camera=small_camera, frames=frames,
                      prior_kind=prior_kind, flow=trained_flow,
                      gmm=trained_gmm, weights=dict(WEIGHTS), mask_stride=2)


def random_params(problem, rng, scale=0.2):
    block = ParamBlock(problem)
    x = scale * rng.normal(size=block.size)
    return x


class TestObjectiveGradient:
    @pytest.mark.parametrize("prior_kind",
                             ["nf-latent", "nf-ambient", "gmm", "none"])
    def test_matches_fd(self, small_model, small_camera, trained_flow,
                        trained_gmm, rng, prior_kind):
        problem = make_problem(small_model, small_camera, trained_flow,
                               trained_gmm, prior_kind)
        x = random_params(problem, rng)
        report = check_gradient(
            lambda xx: objective_with_gradient(problem, xx), x,
            step=1e-6, tol=2e-4)
        assert report["passed"], report["max_rel_error"]

    def test_multiframe_with_smoothness(self, small_model, small_camera,
                                        trained_flow, trained_gmm, rng):
        problem = make_problem(small_model, small_camera, trained_flow,
                               trained_gmm, "nf-latent", n_frames=3,
                               with_mask=False)
        x = random_params(problem, rng)
        report = check_gradient(
            lambda xx: objective_with_gradient(problem, xx), x,
            step=1e-6, tol=2e-4)
        assert report["passed"], report["max_rel_error"]

    def test_keypoints_only(self, small_model, small_camera, trained_flow,
                            trained_gmm, rng):
        problem = make_problem(small_model, small_camera, trained_flow,
                               trained_gmm, "nf-latent", with_mask=False)
        x = random_params(problem, rng)
        report = check_gradient(
            lambda xx: objective_with_gradient(problem, xx), x,
            step=1e-6, tol=2e-4)
        assert report["passed"], report["max_rel_error"]

    def test_wrong_size_raises(self, small_model, small_camera, trained_flow,
                               trained_gmm):
        problem = make_problem(small_model, small_camera, trained_flow,
                               trained_gmm, "nf-latent")
        with pytest.raises(NonFiniteValue):
            objective_with_gradient(problem, np.zeros(3))

    def test_infeasible_returns_inf(self, small_model, small_camera,
                                    trained_flow, trained_gmm):
        # mirrored detections force a negative weak-perspective scale; the
        # objective must report +inf with a zero gradient so line searches
        # back off instead of crashing
        problem = make_problem(small_model, small_camera, trained_flow,
                               trained_gmm, "none", with_mask=False)
        block = ParamBlock(problem)
        x = block.zeros()
        ev = problem.frames[0]
        c = np.array([small_camera.cx, small_camera.cy])
        ev.detections = 2 * c - ev.detections
        value, grad = objective_with_gradient(problem, x)
        assert np.isinf(value)
        assert np.allclose(grad, 0.0)

    def test_info_terms_consistent(self, small_model, small_camera,
                                   trained_flow, trained_gmm, rng):
        problem = make_problem(small_model, small_camera, trained_flow,
                               trained_gmm, "nf-latent")
        x = random_params(problem, rng)
        value, _, info = objective_with_gradient(problem, x, want_info=True)
        recomputed = sum(info["weights"][k] * info["terms"][k]
                         for k in info["terms"])
        assert np.isclose(value, recomputed, rtol=1e-12)


class TestLatentZeroEvidence:
    def test_latent_origin_minimizes_prior_only(self, small_model,
                                                small_camera, trained_flow):
        # With no evidence terms the latent prior is minimized at z = 0.
        problem = FitProblem(model=small_model, camera=small_camera,
                             frames=[FrameEvidence()],
                             prior_kind="nf-latent", flow=trained_flow,
                             weights={"KA": 0.0, "BA": 0.0, "prior": 1.0,
                                      "shape": 1.0, "depth": 0.0})
        block = ParamBlock(problem)
        x0 = block.zeros()
        v0, g0 = objective_with_gradient(problem, x0)
        assert np.allclose(block.pose(g0, 0), 0.0, atol=1e-12)
        rng = np.random.default_rng(0)
        for _ in range(10):
            x = block.zeros()
            block.pose(x, 0)[:] = 0.3 * rng.normal(size=problem.pose_dim)
            v, _ = objective_with_gradient(problem, x)
            assert v >= v0


class TestTiedShape:
    def test_shape_gradient_sums_over_frames(self, small_model, small_camera,
                                             trained_flow, trained_gmm, rng):
        # Tied shape: the multi-frame shape gradient equals the sum of the
        # per-frame shape gradients plus a single regularizer contribution.
        multi = make_problem(small_model, small_camera, trained_flow,
                             trained_gmm, "none", n_frames=2, with_mask=False)
        multi.smooth_weight = 0.0
        x = random_params(multi, rng)
        block = ParamBlock(multi)
        _, g_multi = objective_with_gradient(multi, x)

        g_single_sum = np.zeros(small_model.n_shape)
        for f in range(2):
            single = FitProblem(model=small_model, camera=small_camera,
                                frames=[multi.frames[f]], prior_kind="none",
                                weights=dict(multi.weights))
            sb = ParamBlock(single)
            xs = sb.zeros()
            sb.root(xs, 0)[:] = block.root(x, f)
            sb.pose(xs, 0)[:] = block.pose(x, f)
            sb.shape(xs)[:] = block.shape(x)
            _, gs = objective_with_gradient(single, xs)
            # subtract the per-fit shape regularizer so it is counted once
            beta = sb.shape(xs)
            g_single_sum += sb.shape(gs) - 2.0 * single.weights["shape"] * beta
        beta = block.shape(x)
        expected = g_single_sum + 2.0 * multi.weights["shape"] * beta
        assert np.allclose(block.shape(g_multi), expected, atol=1e-10)


class TestCheckGradient:
    def test_quadratic_passes(self):
        A = np.diag([1.0, 2.0, 3.0])

        def fn(x):
            return 0.5 * x @ A @ x, A @ x

        report = check_gradient(fn, np.array([1.0, -2.0, 0.5]))
        assert report["passed"]
        assert report["max_rel_error"] < 1e-8

    def test_wrong_gradient_fails(self):
        def fn(x):
            return float(x @ x), x  # gradient should be 2x

        report = check_gradient(fn, np.ones(3))
        assert not report["passed"]

    def test_nonfinite_base_raises(self):
        with pytest.raises(NonFiniteValue):
            check_gradient(lambda x: (np.nan, x), np.ones(2))
