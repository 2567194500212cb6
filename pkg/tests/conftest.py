import numpy as np
import pytest

from config_utils import DEFAULTS
from pointset import PointProbabilityCloud
from synth import SceneSpec, generate_scene
from uncertainty import Polarity, ScoreField, ScoreMethod


def ball(rng, center, radius, n):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return np.asarray(center) + d * radius * np.cbrt(rng.uniform(size=(n, 1)))


def external_scores(values, polarity=Polarity.LOW_MEANS_UNKNOWN):
    return ScoreField(np.asarray(values, dtype=float), polarity, ScoreMethod.EXTERNAL)


def cloud_from_coords(coords, n_classes=2, labels=None):
    coords = np.asarray(coords, dtype=float)
    return PointProbabilityCloud(coords, np.zeros((coords.shape[0], n_classes)), labels=labels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_cluster_scene():
    """
    Cluster A: 50 points scored 0.1 around the origin. Cluster B: 52 points
    scored 0.9 twenty meters away. With lambda=1 the stop threshold sits just
    above 0.1, so A alone passes and any B point breaks it.
    """
    rng = np.random.default_rng(7)
    a = ball(rng, (0.0, 0.0, 0.0), 1.0, 50)
    b = ball(rng, (20.0, 0.0, 0.0), 1.0, 52)
    cloud = cloud_from_coords(np.vstack([a, b]))
    scores = external_scores(np.r_[np.full(50, 0.1), np.full(52, 0.9)])
    return cloud, scores, np.arange(50), np.arange(50, 102)


@pytest.fixture(scope="session")
def default_scene():
    return generate_scene(SceneSpec.from_config(DEFAULTS["synth"]))


def numeric_grad(fn, x, step=1e-5):
    """Central finite differences of scalar fn at array x."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        hi = fn(x)
        x[idx] = orig - step
        lo = fn(x)
        x[idx] = orig
        grad[idx] = (hi - lo) / (2.0 * step)
    return grad


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
