import numpy as np

from posefit import synth
from posefit.body import pose_body


class TestPoseCorpus:
    def test_deterministic(self, small_model):
        a = synth.sample_body_poses(100, 11, seed=4)
        b = synth.sample_body_poses(100, 11, seed=4)
        assert np.array_equal(a, b)

    def test_shape_and_scale(self):
        c = synth.sample_body_poses(500, 11, seed=0)
        assert c.shape == (500, 33)
        assert np.max(np.abs(c)) < 0.7  # bounded by tanh scale + noise

    def test_non_gaussian(self):
        # excess kurtosis of the manifold distribution differs from Gaussian
        c = synth.sample_body_poses(5000, 11, seed=0)
        z = (c - c.mean(0)) / c.std(0)
        kurt = np.mean(z ** 4, axis=0) - 3.0
        assert np.max(np.abs(kurt)) > 0.3

    def test_rot6d_representation(self):
        c = synth.sample_body_poses(10, 5, seed=0, representation="rot6d")
        assert c.shape == (10, 30)


class TestGroundTruth:
    def test_deterministic(self, small_model):
        a = synth.sample_ground_truth(small_model, seed=9)
        b = synth.sample_ground_truth(small_model, seed=9)
        for k in a:
            assert np.array_equal(a[k], b[k])

    def test_recoverable_gap_is_small(self, small_model, small_camera):
        for seed in range(3):
            gt, gap = synth.sample_recoverable_ground_truth(
                small_model, small_camera, seed=seed)
            assert gap < 0.01
            assert np.isclose(
                synth.solve_consistency_gap(small_model, small_camera, gt),
                gap)

    def test_plain_sample_has_bias(self, small_model, small_camera):
        # the unoptimized sampler generally leaves a visible solve gap,
        # which is exactly what the recoverable variant removes
        gaps = [synth.solve_consistency_gap(
                    small_model, small_camera,
                    synth.sample_ground_truth(small_model, seed=s))
                for s in range(20)]
        assert np.median(gaps) > 0.005


class TestMotionSequence:
    def test_smooth_and_consistent(self, small_model, small_camera):
        frames = synth.sample_motion_sequence(small_model, small_camera,
                                              n_frames=8, seed=2)
        assert len(frames) == 8
        for g in frames[1:]:
            assert np.array_equal(g["root"], frames[0]["root"])
            assert np.array_equal(g["shape"], frames[0]["shape"])
            assert np.array_equal(g["T"], frames[0]["T"])
        steps = [np.linalg.norm(a["pose"] - b["pose"])
                 for a, b in zip(frames, frames[1:])]
        spread = [np.linalg.norm(frames[0]["pose"] - g["pose"])
                  for g in frames[4:]]
        assert np.median(steps) < np.max(spread) + 1e-9
        assert max(steps) < 1.0


class TestEvidence:
    def test_noiseless_keypoints_are_exact(self, small_model, small_camera):
        gt = synth.sample_ground_truth(small_model, seed=1)
        ev = synth.render_evidence(small_model, small_camera, gt,
                                   noise_px=0.0, with_mask=False)
        from posefit.camera import project
        full = np.concatenate([gt["root"], gt["pose"]])
        posed = pose_body(small_model, full, gt["shape"])
        assert np.allclose(ev["detections"],
                           project(small_camera, posed.joints3d + gt["T"]))

    def test_noise_is_seeded(self, small_model, small_camera):
        gt = synth.sample_ground_truth(small_model, seed=1)
        a = synth.render_evidence(small_model, small_camera, gt, noise_px=2.0,
                                  seed=7, with_mask=False)
        b = synth.render_evidence(small_model, small_camera, gt, noise_px=2.0,
                                  seed=7, with_mask=False)
        assert np.array_equal(a["detections"], b["detections"])

    def test_mask_has_all_parts(self, small_model, small_camera):
        gt = synth.sample_ground_truth(small_model, seed=3)
        ev = synth.render_evidence(small_model, small_camera, gt)
        present = set(np.unique(ev["mask"].labels)) - {0}
        assert present == set(range(1, 5))

    def test_mask_within_bounds(self, small_model, small_camera):
        gt = synth.sample_ground_truth(small_model, seed=4)
        ev = synth.render_evidence(small_model, small_camera, gt)
        assert ev["mask"].labels.shape == (small_camera.height,
                                           small_camera.width)


class TestBanana:
    def test_shape_and_curvature(self):
        d = synth.banana_samples(4000, seed=0)
        assert d.shape == (4000, 2)
        # y correlates with x^2, not with x
        x, y = d[:, 0], d[:, 1]
        r_x = np.corrcoef(x, y)[0, 1]
        r_x2 = np.corrcoef(x * x, y)[0, 1]
        assert abs(r_x2) > 0.9
        assert abs(r_x) < 0.2
