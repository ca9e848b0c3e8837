import warnings

import numpy as np
import pytest

from posefit import make_synthetic_model
from posefit import synth
from posefit import flow as flow_mod
from posefit.prior import gmm_fit

warnings.filterwarnings("ignore", module="scipy.optimize")


@pytest.fixture(scope="session")
def small_model():
    return make_synthetic_model(seed=0, n_joints=12, n_shape=4,
                                n_vertices=80, n_parts=4)


@pytest.fixture(scope="session")
def small_camera():
    return synth.small_camera()


@pytest.fixture(scope="session")
def pose_corpus(small_model):
    return synth.sample_body_poses(3000, small_model.n_joints - 1, seed=42)


@pytest.fixture(scope="session")
def trained_flow(pose_corpus):
    return flow_mod.train(pose_corpus, steps=4000, seed=1)


@pytest.fixture(scope="session")
def trained_gmm(pose_corpus):
    return gmm_fit(pose_corpus, n_modes=8, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
