import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from weakpose.skeleton import (DegenerateBoneError, Skeleton, center_at_pelvis, load_pose,
                               normalize_bone_lengths, pose_norm, save_pose)
from weakpose.synth import sample_pose

from conftest import random_pose


def bone_lengths(p, skeleton):
    return np.array([np.linalg.norm(p[:, j] - p[:, skeleton.parent[j]])
                     for j in range(1, skeleton.n_joints)])


def test_default_skeleton_invariants(skel):
    assert skel.n_joints == 17
    assert abs(skel.segment_weights.sum() - 1.0) < 1e-9
    assert np.all(skel.bone_lengths[1:] > 0)
    order = skel.traversal_order()
    assert sorted(order) == list(range(17))
    seen = set()
    for j in order:
        assert skel.parent[j] in seen or j == 0
        seen.add(j)
    names = {skel.names[j] for j in skel.torso_set}
    assert names == {"pelvis", "spine", "neck", "l_shoulder", "r_shoulder", "l_hip", "r_hip"}


def test_skeleton_roundtrip(tmp_path, skel):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(skel.to_dict()))
    back = Skeleton.load(path)
    assert back.names == skel.names and back.parent == skel.parent
    np.testing.assert_array_equal(back.bone_lengths, skel.bone_lengths)


@pytest.mark.parametrize("parent", [(0, 0, 3, 2), (1, 0, 1, 2), (0, 0, 5, 1)])
def test_bad_tree_rejected(parent):
    with pytest.raises(ValueError):
        Skeleton(("a", "b", "c", "d"), parent, np.ones(4), (0, 1, 2), np.full(4, 0.25), {})


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        Skeleton(("a", "b", "c"), (0, 0, 1), np.ones(3), (0, 1, 2), np.array([0.5, 0.5, 0.1]), {})


def test_center_identity_and_constant(rng):
    p = random_pose(rng)
    np.testing.assert_array_equal(center_at_pelvis(p), p)
    np.testing.assert_array_equal(center_at_pelvis(np.full((3, 17), 5.0)), np.zeros((3, 17)))


def test_center_idempotent(rng):
    x = rng.normal(size=(3, 17)) * 300 + 1000
    c = center_at_pelvis(x)
    np.testing.assert_array_equal(center_at_pelvis(c), c)
    assert np.all(c[:, 0] == 0)


def test_center_rejects_nonfinite():
    x = np.zeros((3, 4))
    x[1, 2] = np.nan
    with pytest.raises(ValueError):
        center_at_pelvis(x)


def test_pose_norm():
    assert pose_norm(np.zeros((3, 5))) == 0
    p = np.zeros((3, 5))
    p[:, 2] = (3, 4, 0)
    assert pose_norm(p) == 5.0


def test_pose_norm_matches_sum_of_squares(rng):
    p = random_pose(rng)
    total = 0.0
    for r in range(3):
        for c in range(17):
            total += p[r, c] ** 2
    assert abs(pose_norm(p) - total ** 0.5) < 1e-9 * total ** 0.5


@given(st.floats(-1e3, 1e3, allow_nan=False), st.integers(0, 2**31))
def test_pose_norm_homogeneous(a, seed):
    p = random_pose(np.random.default_rng(seed))
    assert abs(pose_norm(a * p) - abs(a) * pose_norm(p)) <= 1e-9 * max(1.0, abs(a) * pose_norm(p))


def test_normalize_identity(skel, rng):
    p = sample_pose(skel, rng)
    np.testing.assert_allclose(normalize_bone_lengths(p, skel), p, atol=1e-9)


def test_normalize_undoes_uniform_scale(skel, rng):
    p = sample_pose(skel, rng)
    np.testing.assert_allclose(normalize_bone_lengths(2 * p, skel), p, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_normalize_hits_targets_and_keeps_directions(seed):
    from weakpose.skeleton import default_skeleton
    skel = default_skeleton()
    rng = np.random.default_rng(seed)
    p = sample_pose(skel, rng) + rng.normal(0, 30, size=(3, 17))
    p[:, 0] = 0
    out = normalize_bone_lengths(p, skel)
    np.testing.assert_allclose(bone_lengths(out, skel), skel.bone_lengths[1:], atol=1e-9)
    for j in range(1, 17):
        d_in = p[:, j] - p[:, skel.parent[j]]
        d_out = out[:, j] - out[:, skel.parent[j]]
        np.testing.assert_allclose(d_out / np.linalg.norm(d_out), d_in / np.linalg.norm(d_in), atol=1e-12)
    np.testing.assert_allclose(normalize_bone_lengths(out, skel), out, atol=1e-9)
    assert np.all(out[:, 0] == 0)


def test_normalize_degenerate_bone_names_joint(skel, rng):
    p = sample_pose(skel, rng)
    p[:, skel.index("l_wrist")] = p[:, skel.index("l_elbow")]
    with pytest.raises(DegenerateBoneError, match="l_wrist"):
        normalize_bone_lengths(p, skel)


def test_pose_file_roundtrip(tmp_path, rng):
    p = random_pose(rng)
    save_pose(tmp_path / "p.json", p)
    np.testing.assert_array_equal(load_pose(tmp_path / "p.json"), p)
