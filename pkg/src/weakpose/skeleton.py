"""Skeleton topology, pelvis-centred poses and bone-length normalisation.

Poses are ``(3, n_joints)`` float arrays in millimetres, one column per
joint, expressed relative to the pelvis (the root joint).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "DegenerateBoneError",
    "Skeleton",
    "center_at_pelvis",
    "default_skeleton",
    "load_pose",
    "normalize_bone_lengths",
    "pose_norm",
    "save_pose",
]


class DegenerateBoneError(ValueError):
    """A parent/child joint pair coincides, so the bone has no direction."""


@dataclass(frozen=True)
class Skeleton:
    names: tuple[str, ...]
    parent: tuple[int, ...]
    bone_lengths: np.ndarray
    torso_set: tuple[int, ...]
    segment_weights: np.ndarray
    limb_pairs: dict[str, tuple[tuple[int, int, int], ...]]
    rest_directions: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.names)
        bl = np.asarray(self.bone_lengths, dtype=float)
        w = np.asarray(self.segment_weights, dtype=float)
        object.__setattr__(self, "bone_lengths", bl)
        object.__setattr__(self, "segment_weights", w)
        if len(self.parent) != n or bl.shape != (n,) or w.shape != (n,):
            raise ValueError("names, parent, bone_lengths and segment_weights must have equal length")
        roots = [j for j, p in enumerate(self.parent) if p == j]
        if roots != [0]:
            raise ValueError(f"skeleton must have exactly one root at index 0, got roots {roots}")
        # every joint must reach the root without cycles
        for j in range(n):
            seen, k = set(), j
            while self.parent[k] != k:
                if k in seen or not 0 <= self.parent[k] < n:
                    raise ValueError(f"parent array is not a tree (joint {self.names[j]})")
                seen.add(k)
                k = self.parent[k]
        if np.any(bl[1:] <= 0):
            raise ValueError("bone lengths must be positive for every non-root joint")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("segment weights must be nonnegative and sum to 1")
        if len(self.torso_set) < 3 or any(not 0 <= j < n for j in self.torso_set):
            raise ValueError("torso_set needs at least three valid joint indices")
        for key, triples in self.limb_pairs.items():
            for t in triples:
                if len(t) != 3 or any(not 0 <= j < n for j in t):
                    raise ValueError(f"bad limb triple {t!r} for {key!r}")
        if self.rest_directions is not None:
            rd = np.asarray(self.rest_directions, dtype=float)
            if rd.shape != (n, 3):
                raise ValueError("rest_directions must be n_joints x 3")
            object.__setattr__(self, "rest_directions", rd)

    @property
    def n_joints(self) -> int:
        return len(self.names)

    @property
    def pelvis(self) -> int:
        return 0

    def index(self, name: str) -> int:
        return self.names.index(name)

    def traversal_order(self) -> list[int]:
        """Joint indices ordered so that every parent precedes its children."""
        children: dict[int, list[int]] = {j: [] for j in range(self.n_joints)}
        for j, p in enumerate(self.parent):
            if p != j:
                children[p].append(j)
        order, stack = [], [0]
        while stack:
            j = stack.pop()
            order.append(j)
            stack.extend(reversed(children[j]))
        return order

    def with_bone_lengths(self, bone_lengths) -> "Skeleton":
        return Skeleton(self.names, self.parent, np.asarray(bone_lengths, dtype=float),
                        self.torso_set, self.segment_weights, self.limb_pairs,
                        self.rest_directions)

    def to_dict(self) -> dict:
        d = {
            "names": list(self.names),
            "parent": list(self.parent),
            "bone_lengths_mm": self.bone_lengths.tolist(),
            "torso_set": list(self.torso_set),
            "segment_weights": self.segment_weights.tolist(),
            "limb_pairs": {k: [list(t) for t in v] for k, v in self.limb_pairs.items()},
        }
        if self.rest_directions is not None:
            d["rest_directions"] = self.rest_directions.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        try:
            return cls(
                names=tuple(d["names"]),
                parent=tuple(int(p) for p in d["parent"]),
                bone_lengths=np.asarray(d["bone_lengths_mm"], dtype=float),
                torso_set=tuple(int(j) for j in d["torso_set"]),
                segment_weights=np.asarray(d["segment_weights"], dtype=float),
                limb_pairs={k: tuple(tuple(int(j) for j in t) for t in v)
                            for k, v in d["limb_pairs"].items()},
                rest_directions=d.get("rest_directions"),
            )
        except KeyError as exc:
            raise ValueError(f"skeleton file is missing field {exc.args[0]!r}") from None

    @classmethod
    def load(cls, path) -> "Skeleton":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def default_skeleton() -> Skeleton:
    """The bundled 17-joint skeleton.

    Segment weights in the bundled file are coarse and not taken from an
    anthropometric table; pass explicit weights where they matter.
    """
    text = resources.files("weakpose.data").joinpath("skeleton17.json").read_text()
    return Skeleton.from_dict(json.loads(text))


def _as_pose_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim != 2 or a.shape[0] != 3:
        raise ValueError(f"pose must be a 3 x n_joints array, got shape {a.shape}")
    return a


def center_at_pelvis(raw_joints, skeleton: Skeleton | None = None) -> np.ndarray:
    """Subtract the pelvis position from every joint."""
    a = _as_pose_array(raw_joints)
    if not np.all(np.isfinite(a)):
        raise ValueError("pose contains non-finite values")
    pelvis = 0 if skeleton is None else skeleton.pelvis
    out = a - a[:, pelvis:pelvis + 1]
    out[:, pelvis] = 0.0
    return out


def pose_norm(p) -> float:
    return float(np.linalg.norm(np.asarray(p, dtype=float)))


def normalize_bone_lengths(p, skeleton: Skeleton) -> np.ndarray:
    """Rescale every bone to the skeleton's length, keeping bone directions.

    Joints are visited root first; each child is placed along its original
    bone direction at the target distance from its (already moved) parent,
    which carries the whole subtree along rigidly.
    """
    p = _as_pose_array(p)
    if p.shape[1] != skeleton.n_joints:
        raise ValueError("pose and skeleton joint counts differ")
    out = np.zeros_like(p)
    out[:, 0] = 0.0
    for j in skeleton.traversal_order()[1:]:
        par = skeleton.parent[j]
        bone = p[:, j] - p[:, par]
        length = np.linalg.norm(bone)
        if length <= 1e-12:
            raise DegenerateBoneError(f"zero-length bone at joint {skeleton.names[j]!r}")
        out[:, j] = out[:, par] + bone * (skeleton.bone_lengths[j] / length)
    return out


def save_pose(path, p) -> None:
    Path(path).write_text(json.dumps(_as_pose_array(p).tolist()))


def load_pose(path) -> np.ndarray:
    return _as_pose_array(json.loads(Path(path).read_text()))
