import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from weakpose.skeleton import Skeleton, default_skeleton


def random_pose(rng, n_joints=17, scale=400.0):
    p = rng.normal(0.0, scale, size=(3, n_joints))
    p[:, 0] = 0.0
    return p


def random_rotation(rng):
    return Rotation.random(random_state=rng.integers(2**32)).as_matrix()


def central_difference(f, x, h_rel=1e-4):
    """Numerical gradient of scalar ``f`` at array ``x`` (relative step)."""
    x = np.asarray(x, dtype=float)
    h = h_rel * max(1.0, float(np.max(np.abs(x))))
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def skel():
    return default_skeleton()


@pytest.fixture
def chain5():
    """Five joints: pelvis, two hips, two ankles (straight legs hanging down)."""
    return Skeleton(
        names=("pelvis", "r_hip", "r_ankle", "l_hip", "l_ankle"),
        parent=(0, 0, 1, 0, 3),
        bone_lengths=np.array([0.0, 100.0, 800.0, 100.0, 800.0]),
        torso_set=(0, 1, 3),
        segment_weights=np.array([0.4, 0.1, 0.2, 0.1, 0.2]),
        limb_pairs={"knee": ((1, 2, 2), (3, 4, 4)), "hip": ((0, 1, 2),)},
    )
