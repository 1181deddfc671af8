import json

import numpy as np
import pytest

from weakpose.alignment import nse_distance
from weakpose.losses import multiview_loss
from weakpose.synth import (CaptureConfig, Intrinsics, augment, dataset_to_dict, generate_dataset,
                            load_dataset, make_views, observe, sample_pose, save_dataset)

from conftest import random_pose, random_rotation


def bone_lengths(p, skel):
    return np.array([np.linalg.norm(p[:, j] - p[:, skel.parent[j]]) for j in range(1, skel.n_joints)])


@pytest.fixture(scope="module")
def small_cfg():
    return CaptureConfig(n_subjects=5, frames_per_subject=6, noise_sigma_mm=0.0, rng_seed=3,
                         validation_frames=5)


def test_sample_pose_rest(skel, rng):
    p = sample_pose(skel, rng, angle_scale=0.0, random_yaw=False)
    rest = np.zeros((3, 17))
    dirs = skel.rest_directions / np.maximum(np.linalg.norm(skel.rest_directions, axis=1, keepdims=True), 1e-12)
    for j in skel.traversal_order()[1:]:
        rest[:, j] = rest[:, skel.parent[j]] + dirs[j] * skel.bone_lengths[j]
    np.testing.assert_allclose(p, rest, atol=1e-12)


def test_sample_pose_invariants(skel):
    for seed in range(50):
        p = sample_pose(skel, np.random.default_rng(seed))
        assert np.all(p[:, 0] == 0) and np.all(np.isfinite(p))
        np.testing.assert_allclose(bone_lengths(p, skel), skel.bone_lengths[1:], atol=1e-9)


def test_sample_pose_seeds_differ(skel):
    a = sample_pose(skel, np.random.default_rng(1))
    b = sample_pose(skel, np.random.default_rng(2))
    assert nse_distance(a, b) > 0


def test_make_views(rng):
    p = random_pose(rng)
    rots = [np.eye(3)] * 3
    for v in make_views(p, rots):
        np.testing.assert_array_equal(v, p)
    rots = [np.eye(3)] + [random_rotation(rng) for _ in range(3)]
    views = make_views(p, rots)
    for r, v in zip(rots, views):
        np.testing.assert_allclose(r @ v, views[0], atol=1e-12)
    val, _, _ = multiview_loss(views, rots)
    assert val < 1e-20
    with pytest.raises(ValueError):
        make_views(p, rots[1:])


def test_observe_deterministic_and_linear(skel, rng):
    p = sample_pose(skel, rng)
    a = observe(p, Intrinsics(1000.0), 0.0, rng)
    b = observe(p, Intrinsics(1000.0), 0.0, rng)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(observe(p, Intrinsics(2000.0), 0.0, rng), 2 * a, rtol=1e-12)
    assert a.shape == (34,)
    # pinhole check for one joint
    z = p[2, 5] + 5000.0
    assert a[10] == pytest.approx(1000.0 * p[0, 5] / z)
    assert a[11] == pytest.approx(1000.0 * p[1, 5] / z)


def test_observe_behind_camera(rng):
    p = np.zeros((3, 2))
    p[2, 1] = -6000.0
    with pytest.raises(ValueError):
        observe(p, Intrinsics(), 0.0, rng)


def test_observe_noise_level():
    # recover the 3D perturbation from the projection: with the joint at the
    # pelvis depth and small noise, u = f * dx / (5000 + dz)
    rng = np.random.default_rng(11)
    sigma = 23.0
    p = np.zeros((3, 1))
    intr = Intrinsics(5000.0)
    draws = np.array([observe(p, intr, sigma, rng) for _ in range(10_000)])
    # dx ~= u * (5000 + dz) / f, and dz is tiny relative to the standoff
    dx = draws[:, 0] * 5000.0 / intr.focal_length
    assert abs(dx.std() / sigma - 1) < 0.05


def test_augment_identity_and_scale(skel, rng):
    p = sample_pose(skel, rng)
    f = observe(p, Intrinsics(), 0.0, rng)
    f2, p2 = augment(f, p, rng, max_rotation_deg=0.0, scale_range=(1.0, 1.0))
    np.testing.assert_allclose(f2, f)
    np.testing.assert_allclose(p2, p)
    f3, p3 = augment(f, p, rng, max_rotation_deg=0.0)
    assert nse_distance(p3, p) < 1e-20


def test_augment_norm_scales_by_draw(skel):
    p = sample_pose(skel, np.random.default_rng(0))
    f = observe(p, Intrinsics(), 0.0, np.random.default_rng(0))
    for seed in range(20):
        rng = np.random.default_rng(seed)
        rng2 = np.random.default_rng(seed)
        angle = rng2.uniform(-20, 20)
        scale = rng2.uniform(0.85, 1.15)
        f2, p2 = augment(f, p, rng)
        assert -20 <= angle <= 20
        assert np.linalg.norm(f2) == pytest.approx(scale * np.linalg.norm(f), rel=1e-12)
        assert np.linalg.norm(p2) == pytest.approx(scale * np.linalg.norm(p), rel=1e-12)
        # the depth row is only scaled
        np.testing.assert_allclose(p2[2], scale * p[2], rtol=1e-12)


def test_dataset_counts_and_determinism(skel, small_cfg):
    a = generate_dataset(small_cfg, skel, [0])
    b = generate_dataset(small_cfg, skel, [0])
    assert len(a.labeled) == 6 and len(a.unlabeled) == 24 and len(a.validation) == 5
    assert json.dumps(dataset_to_dict(a)) == json.dumps(dataset_to_dict(b))
    assert {s.subject for s in a.labeled}.isdisjoint({s.subject for s in a.unlabeled})
    assert {s.subject for s in a.validation}.isdisjoint({s.subject for s in a.unlabeled} | {0})


def test_dataset_frame_consistency(skel, small_cfg):
    ds = generate_dataset(small_cfg, skel, [0])
    for s in ds.unlabeled:
        np.testing.assert_array_equal(s.rotations[0], np.eye(3))
        for c in range(s.n_views):
            np.testing.assert_allclose(s.rotations[c] @ s.poses[c], s.poses[0], atol=1e-12)
            r = s.rotations[c]
            np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)


def test_dataset_bone_lengths_per_subject(skel, small_cfg):
    ds = generate_dataset(small_cfg, skel, [0])
    by_subject = {}
    for s in ds.unlabeled:
        for c in range(s.n_views):
            by_subject.setdefault(s.subject, []).append(bone_lengths(s.poses[c], skel))
    for lengths in by_subject.values():
        np.testing.assert_allclose(np.array(lengths), lengths[0][None].repeat(len(lengths), 0), atol=1e-9)


def test_dataset_static_rotations(skel):
    cfg = CaptureConfig(frames_per_subject=4, rotation_model="static", rng_seed=1, validation_frames=1)
    ds = generate_dataset(cfg, skel, [0])
    subj = [s for s in ds.unlabeled if s.subject == 1]
    for s in subj[1:]:
        np.testing.assert_allclose(s.rotations, subj[0].rotations, atol=1e-12)


def test_dataset_errors(skel, small_cfg):
    with pytest.raises(ValueError):
        generate_dataset(small_cfg, skel, [])
    with pytest.raises(ValueError):
        generate_dataset(small_cfg, skel, [7])
    with pytest.raises(ValueError):
        CaptureConfig(n_cameras=1)
    with pytest.raises(ValueError):
        CaptureConfig(noise_sigma_mm=-1)


def test_dataset_roundtrip(tmp_path, skel, small_cfg):
    ds = generate_dataset(small_cfg, skel, [0, 1])
    save_dataset(ds, tmp_path / "d.json")
    back = load_dataset(tmp_path / "d.json")
    assert json.dumps(dataset_to_dict(back)) == json.dumps(dataset_to_dict(ds))
    raw = json.loads((tmp_path / "d.json").read_text())
    assert raw["format_version"] == 1
    assert set(raw) >= {"skeleton", "labeled", "unlabeled", "meta"}
    assert set(raw["unlabeled"][0]["views"][0]) == {"features", "pose_mm", "rotation"}
    save_dataset(ds, tmp_path / "n.json", include_rotations=False)
    assert np.all(np.isnan(load_dataset(tmp_path / "n.json").unlabeled[0].rotations))
    raw["format_version"] = 99
    (tmp_path / "bad.json").write_text(json.dumps(raw))
    with pytest.raises(ValueError):
        load_dataset(tmp_path / "bad.json")


def test_capture_config_roundtrip():
    cfg = CaptureConfig(n_cameras=6, rotation_model="static", intrinsics=Intrinsics(800.0, (1.0, 2.0)))
    assert CaptureConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError):
        CaptureConfig.from_dict({"bogus": 1})
