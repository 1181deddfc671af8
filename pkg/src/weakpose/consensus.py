"""Consensus-set selection over the views of one multi-view sample.

A deterministic RANSAC variant: with at most a handful of views every
subset of the requested size is scored, and the one whose members agree
best with their own mean wins.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .alignment import distance_fns

__all__ = ["ConsensusResult", "reference_pose", "select_consensus"]


@dataclass(frozen=True)
class ConsensusResult:
    member_indices: tuple[int, ...]
    reference: np.ndarray
    agreement: float


def reference_pose(members, normalize: bool = False) -> np.ndarray:
    """Element-wise mean of the member poses, re-centred at the pelvis.

    With ``normalize`` every member is scaled to unit norm first, so no
    single view dominates the mean through its scale.
    """
    members = [np.asarray(m, dtype=float) for m in members]
    if not members:
        raise ValueError("reference pose needs at least one member")
    if normalize:
        members = [m / np.linalg.norm(m) for m in members]
    mean = np.mean(np.stack(members), axis=0)
    return mean - mean[:, :1]


def select_consensus(rotated_poses, k: int = 2, distance: str = "nse",
                     normalize: bool = False) -> ConsensusResult:
    """Pick the ``k`` views whose poses agree most with their mean.

    ``rotated_poses`` must already be expressed in a common frame. The score
    of a subset is the summed distance of its members to the subset mean;
    ties go to the lexicographically smallest index tuple. ``normalize`` is
    passed on to :func:`reference_pose`.
    """
    poses = [np.asarray(p, dtype=float) for p in rotated_poses]
    if k < 2:
        raise ValueError("consensus size must be at least 2")
    if len(poses) < k:
        raise ValueError(f"need at least {k} views for consensus, got {len(poses)}")
    dist = distance_fns(distance)[0]
    # evaluate each pose's norm once so degenerate inputs fail up front
    for p in poses:
        dist(p, p)

    best = None
    for subset in combinations(range(len(poses)), k):
        ref = reference_pose([poses[i] for i in subset], normalize)
        score = sum(dist(poses[i], ref) for i in subset)
        if best is None or score < best[2]:
            best = (subset, ref, score)
    subset, ref, score = best
    return ConsensusResult(member_indices=tuple(subset), reference=ref, agreement=float(score))
