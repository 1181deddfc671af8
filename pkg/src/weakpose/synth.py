"""Synthetic multi-camera capture of articulated skeletons.

Stands in for real multi-view footage: random subjects with their own
proportions and posture habits are filmed by a ring of cameras, and each
view is reduced to noisy 2D keypoints (the "image" the regressor sees).

Frames: the world is y-up; camera frames are x right, y down, z forward.
Poses handed out per view live in that view's camera frame, and
``rotation`` maps a view's frame onto the first camera's frame.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .skeleton import Skeleton, center_at_pelvis

FORMAT_VERSION = 1

__all__ = [
    "CaptureConfig",
    "Dataset",
    "FORMAT_VERSION",
    "Intrinsics",
    "LabeledSample",
    "MultiViewSample",
    "augment",
    "generate_dataset",
    "load_dataset",
    "make_views",
    "observe",
    "sample_pose",
    "save_dataset",
]

# (low, high) rotation-vector bounds in degrees about the parent frame's x, y, z
# axes. Asymmetric ranges give the pose prior a preferred bending direction,
# without which monocular depth would be unrecoverable even in principle.
JOINT_RANGES_DEG = {
    "r_knee": ((-5, 75), (-5, 5), (-5, 5)),
    "l_knee": ((-5, 75), (-5, 5), (-5, 5)),
    "r_ankle": ((-15, 15), (-10, 10), (-10, 10)),
    "l_ankle": ((-15, 15), (-10, 10), (-10, 10)),
    "r_hip": ((-55, 20), (-15, 15), (-20, 10)),
    "l_hip": ((-55, 20), (-15, 15), (-10, 20)),
    "r_elbow": ((-80, 5), (-20, 20), (-10, 10)),
    "l_elbow": ((-80, 5), (-20, 20), (-10, 10)),
    "r_shoulder": ((-60, 30), (-20, 20), (-15, 40)),
    "l_shoulder": ((-60, 30), (-20, 20), (-40, 15)),
    "spine": ((-10, 30), (-15, 15), (-10, 10)),
    "thorax": ((-5, 15), (-10, 10), (-5, 5)),
    "neck": ((-15, 25), (-30, 30), (-10, 10)),
}
DEFAULT_RANGE_DEG = ((-15, 15), (-15, 15), (-15, 15))


@dataclass(frozen=True)
class Intrinsics:
    focal_length: float = 1000.0
    principal_point: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class CaptureConfig:
    n_cameras: int = 4
    n_subjects: int = 5
    frames_per_subject: int = 200
    noise_sigma_mm: float = 23.0
    rotation_model: str = "ptz"  # or "static"
    intrinsics: Intrinsics = field(default_factory=Intrinsics)
    rng_seed: int = 0
    standoff_mm: float = 5000.0
    ptz_bound_deg: float = 30.0
    camera_tilt_deg: float = 10.0
    validation_subjects: int = 1
    validation_frames: int = 300
    height_range: tuple[float, float] = (0.88, 1.12)
    bone_jitter: float = 0.08
    style_deg: float = 12.0

    def __post_init__(self):
        if self.n_cameras < 2:
            raise ValueError("n_cameras must be at least 2")
        if self.noise_sigma_mm < 0:
            raise ValueError("noise_sigma_mm must be nonnegative")
        if self.rotation_model not in ("static", "ptz"):
            raise ValueError("rotation_model must be 'static' or 'ptz'")
        if self.n_subjects < 1 or self.frames_per_subject < 1:
            raise ValueError("need at least one subject and one frame")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["intrinsics"]["principal_point"] = list(self.intrinsics.principal_point)
        d["height_range"] = list(self.height_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CaptureConfig":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown capture config fields: {sorted(unknown)}")
        if "intrinsics" in d:
            intr = dict(d["intrinsics"])
            if "principal_point" in intr:
                intr["principal_point"] = tuple(intr["principal_point"])
            d["intrinsics"] = Intrinsics(**intr)
        if "height_range" in d:
            d["height_range"] = tuple(d["height_range"])
        return cls(**d)


@dataclass
class LabeledSample:
    features: np.ndarray
    pose: np.ndarray
    subject: int
    t: int
    camera: int


@dataclass
class MultiViewSample:
    features: np.ndarray    # (n_views, 2 * n_joints)
    poses: np.ndarray       # (n_views, 3, n_joints), each in its own camera frame
    rotations: np.ndarray   # (n_views, 3, 3), view frame -> first view frame
    subject: int
    t: int

    @property
    def n_views(self) -> int:
        return len(self.features)


@dataclass
class Dataset:
    skeleton: Skeleton
    labeled: list[LabeledSample]
    unlabeled: list[MultiViewSample]
    validation: list[LabeledSample]
    meta: dict = field(default_factory=dict)


def _local_rotation(rng, ranges_deg, scale: float) -> np.ndarray:
    lo = np.array([r[0] for r in ranges_deg], dtype=float) * scale
    hi = np.array([r[1] for r in ranges_deg], dtype=float) * scale
    return Rotation.from_rotvec(np.radians(rng.uniform(lo, hi))).as_matrix()


def forward_kinematics(skeleton: Skeleton, local_rots, root_rot=None) -> np.ndarray:
    """Joint positions from per-joint local rotations applied to the rest pose."""
    if skeleton.rest_directions is None:
        raise ValueError("skeleton has no rest_directions; cannot pose it")
    n = skeleton.n_joints
    dirs = skeleton.rest_directions / np.maximum(
        np.linalg.norm(skeleton.rest_directions, axis=1, keepdims=True), 1e-12)
    glob = [None] * n
    pos = np.zeros((3, n))
    glob[0] = np.eye(3) if root_rot is None else root_rot
    for j in skeleton.traversal_order()[1:]:
        par = skeleton.parent[j]
        glob[j] = glob[par] @ local_rots[j]
        pos[:, j] = pos[:, par] + glob[j] @ dirs[j] * skeleton.bone_lengths[j]
    return pos


def sample_pose(skeleton: Skeleton, rng, angle_scale: float = 1.0, random_yaw: bool = True,
                style=None) -> np.ndarray:
    """Random pelvis-centred pose with exactly the skeleton's bone lengths.

    Each joint gets a local rotation drawn inside its range (scaled by
    ``angle_scale``); ``style`` is an optional per-joint rotation composed in
    front of it. With ``angle_scale=0``, no yaw and no style this is the rest
    pose.
    """
    n = skeleton.n_joints
    local = [np.eye(3)] * n
    for j in range(1, n):
        r = _local_rotation(rng, JOINT_RANGES_DEG.get(skeleton.names[j], DEFAULT_RANGE_DEG),
                            angle_scale)
        local[j] = r if style is None else style[j] @ r
    root = None
    if random_yaw:
        root = Rotation.from_euler("y", rng.uniform(0.0, 2 * np.pi)).as_matrix()
    return center_at_pelvis(forward_kinematics(skeleton, local, root))


def make_views(world_pose, rotations) -> list[np.ndarray]:
    """Express a first-camera-frame pose in every camera's frame.

    ``rotations[c]`` maps camera ``c``'s frame to the first camera's frame,
    so ``rotations[c] @ views[c] == views[0]``.
    """
    rots = [np.asarray(r, dtype=float) for r in rotations]
    if not np.allclose(rots[0], np.eye(3), atol=1e-12):
        raise ValueError("the first rotation must be the identity")
    p = np.asarray(world_pose, dtype=float)
    return [r.T @ p for r in rots]


def observe(view_pose, intrinsics: Intrinsics, noise_sigma_mm: float, rng,
            standoff_mm: float = 5000.0) -> np.ndarray:
    """Noisy pinhole projection of a camera-frame pose, flattened ``(u0, v0, u1, ...)``.

    Isotropic Gaussian noise is added to the 3D joints before projecting.
    The pelvis sits ``standoff_mm`` in front of the camera.
    """
    p = np.asarray(view_pose, dtype=float)
    if noise_sigma_mm > 0:
        p = p + rng.normal(0.0, noise_sigma_mm, size=p.shape)
    z = p[2] + standoff_mm
    if np.any(z <= 0):
        raise ValueError("joint behind the camera")
    f = intrinsics.focal_length
    cx, cy = intrinsics.principal_point
    uv = np.stack([f * p[0] / z + cx, f * p[1] / z + cy], axis=1)
    return uv.reshape(-1)


def augment(features, label, rng, max_rotation_deg: float = 20.0,
            scale_range: tuple[float, float] = (0.85, 1.15),
            principal_point: tuple[float, float] = (0.0, 0.0)):
    """Random in-plane rotation and scaling applied to keypoints and label alike.

    The 3D label is rotated about the optical axis by the same angle and
    scaled by the same factor as the 2D keypoints.
    """
    angle = np.radians(rng.uniform(-max_rotation_deg, max_rotation_deg))
    scale = rng.uniform(*scale_range)
    c, s = np.cos(angle), np.sin(angle)
    rot2 = np.array([[c, -s], [s, c]])
    pp = np.asarray(principal_point, dtype=float)
    uv = np.asarray(features, dtype=float).reshape(-1, 2) - pp
    uv = scale * uv @ rot2.T + pp
    rot3 = np.eye(3)
    rot3[:2, :2] = rot2
    return uv.reshape(-1), scale * (rot3 @ np.asarray(label, dtype=float))


def _camera_rotation(yaw, tilt=0.0, pan=0.0) -> np.ndarray:
    """World-to-camera rotation for a camera circling the subject."""
    flip = np.diag([-1.0, -1.0, 1.0])  # world y-up to image y-down
    base = Rotation.from_euler("x", tilt).as_matrix() @ flip @ Rotation.from_euler("y", yaw).as_matrix().T
    return Rotation.from_euler("y", pan).as_matrix() @ base


class _Subject:
    def __init__(self, skeleton: Skeleton, cfg: CaptureConfig, rng):
        n = skeleton.n_joints
        height = rng.uniform(*cfg.height_range)
        jitter = rng.uniform(1 - cfg.bone_jitter, 1 + cfg.bone_jitter, size=n)
        self.skeleton = skeleton.with_bone_lengths(
            np.where(np.arange(n) == 0, 0.0, skeleton.bone_lengths * height * jitter))
        sb = np.radians(cfg.style_deg)
        self.style = [np.eye(3)] + [Rotation.from_rotvec(rng.uniform(-sb, sb, 3)).as_matrix()
                                    for _ in range(n - 1)]
        spacing = 2 * np.pi / cfg.n_cameras
        self.yaws = np.arange(cfg.n_cameras) * spacing + rng.uniform(-0.3, 0.3, cfg.n_cameras) * spacing
        tb = np.radians(cfg.camera_tilt_deg)
        self.tilts = rng.uniform(-tb, tb, cfg.n_cameras)

    def world_to_cameras(self, cfg: CaptureConfig, rng) -> list[np.ndarray]:
        out = []
        for yaw, tilt in zip(self.yaws, self.tilts):
            pan = 0.0
            if cfg.rotation_model == "ptz":
                b = np.radians(cfg.ptz_bound_deg)
                pan, dtilt = rng.uniform(-b, b, 2)
                tilt = tilt + dtilt
            out.append(_camera_rotation(yaw, tilt, pan))
        return out


def _frame(subject: _Subject, cfg: CaptureConfig, rng):
    world = sample_pose(subject.skeleton, rng, style=subject.style)
    cams = subject.world_to_cameras(cfg, rng)
    first = cams[0] @ world
    rotations = [cams[0] @ w.T for w in cams]
    rotations[0] = np.eye(3)
    views = make_views(first, rotations)
    views = [center_at_pelvis(v) for v in views]
    feats = [observe(v, cfg.intrinsics, cfg.noise_sigma_mm, rng, cfg.standoff_mm) for v in views]
    return np.stack(feats), np.stack(views), np.stack(rotations)


def generate_dataset(config: CaptureConfig, skeleton: Skeleton, labeled_subject_ids) -> Dataset:
    """Labeled single views for ``labeled_subject_ids``, multi-view samples for the rest.

    Validation subjects are extra people beyond ``config.n_subjects`` and
    only contribute labeled single views. Output is a pure function of the
    config (seed included) and the skeleton.
    """
    labeled_ids = sorted(set(int(i) for i in labeled_subject_ids))
    if not labeled_ids:
        raise ValueError("at least one labeled subject is required")
    if any(not 0 <= i < config.n_subjects for i in labeled_ids):
        raise ValueError(f"labeled subject ids must lie in [0, {config.n_subjects})")

    n_total = config.n_subjects + config.validation_subjects
    seeds = np.random.SeedSequence(config.rng_seed).spawn(n_total)
    labeled, unlabeled, validation = [], [], []
    for sid in range(n_total):
        rng = np.random.default_rng(seeds[sid])
        subject = _Subject(skeleton, config, rng)
        is_val = sid >= config.n_subjects
        n_frames = config.validation_frames if is_val else config.frames_per_subject
        for t in range(n_frames):
            feats, views, rots = _frame(subject, config, rng)
            if is_val or sid in labeled_ids:
                cam = int(rng.integers(config.n_cameras))
                sample = LabeledSample(feats[cam], views[cam], sid, t, cam)
                (validation if is_val else labeled).append(sample)
            else:
                unlabeled.append(MultiViewSample(feats, views, rots, sid, t))
    meta = {"capture": config.to_dict(), "labeled_subjects": labeled_ids}
    return Dataset(skeleton, labeled, unlabeled, validation, meta)


def _labeled_to_json(s: LabeledSample) -> dict:
    return {"subject": s.subject, "t": s.t, "camera": s.camera,
            "features": s.features.tolist(), "pose_mm": s.pose.tolist()}


def _labeled_from_json(d: dict) -> LabeledSample:
    return LabeledSample(np.asarray(d["features"], dtype=float), np.asarray(d["pose_mm"], dtype=float),
                         int(d["subject"]), int(d["t"]), int(d["camera"]))


def dataset_to_dict(ds: Dataset, include_rotations: bool = True) -> dict:
    unl = []
    for s in ds.unlabeled:
        views = []
        for c in range(s.n_views):
            v = {"features": s.features[c].tolist(), "pose_mm": s.poses[c].tolist()}
            if include_rotations:
                v["rotation"] = s.rotations[c].tolist()
            views.append(v)
        unl.append({"subject": s.subject, "t": s.t, "views": views})
    return {
        "format_version": FORMAT_VERSION,
        "skeleton": ds.skeleton.to_dict(),
        "labeled": [_labeled_to_json(s) for s in ds.labeled],
        "unlabeled": unl,
        "validation": [_labeled_to_json(s) for s in ds.validation],
        "meta": ds.meta,
    }


def dataset_from_dict(d: dict) -> Dataset:
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format_version {version!r}")
    unl = []
    for s in d["unlabeled"]:
        views = s["views"]
        rots = [v.get("rotation") for v in views]
        rotations = (np.full((len(views), 3, 3), np.nan) if any(r is None for r in rots)
                     else np.asarray(rots, dtype=float))
        unl.append(MultiViewSample(
            np.asarray([v["features"] for v in views], dtype=float),
            np.asarray([v["pose_mm"] for v in views], dtype=float),
            rotations, int(s["subject"]), int(s["t"])))
    return Dataset(
        Skeleton.from_dict(d["skeleton"]),
        [_labeled_from_json(s) for s in d["labeled"]],
        unl,
        [_labeled_from_json(s) for s in d.get("validation", [])],
        d.get("meta", {}),
    )


def save_dataset(ds: Dataset, path, include_rotations: bool = True) -> None:
    Path(path).write_text(json.dumps(dataset_to_dict(ds, include_rotations)))


def load_dataset(path) -> Dataset:
    return dataset_from_dict(json.loads(Path(path).read_text()))
