"""Multi-view consistency, supervised and regularisation losses.

Every loss returns ``(value, grads)`` where ``grads[i]`` is the gradient of
the value with respect to the i-th prediction. Rotations, reference poses
and anchor predictions are constants for differentiation unless stated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alignment import distance_fns
from .consensus import ConsensusResult, select_consensus

__all__ = [
    "LossBreakdown",
    "LossWeights",
    "multiview_loss",
    "regularization_loss",
    "supervised_loss",
    "total_loss",
]


@dataclass(frozen=True)
class LossWeights:
    w_multiview: float = 1.0
    w_supervised: float = 100.0
    w_regularizer: float = 100.0

    def __post_init__(self):
        if min(self.w_multiview, self.w_supervised, self.w_regularizer) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class LossBreakdown:
    m_value: float
    s_value: float
    r_value: float
    total: float
    grad_labeled: list = field(default_factory=list, repr=False)
    grad_unlabeled: list = field(default_factory=list, repr=False)
    skipped: int = 0


def total_loss(m: float, s: float, r: float, weights: LossWeights = LossWeights()) -> float:
    return weights.w_multiview * m + weights.w_supervised * s + weights.w_regularizer * r


def multiview_loss(predictions, rotations, k: int = 2, distance: str = "nse",
                   stop_gradient_reference: bool = True, normalize_reference: bool = False,
                   consensus: ConsensusResult | None = None):
    """Consistency loss for the views of one sample.

    Each prediction is rotated into the first camera's frame, a consensus
    reference is formed, and the loss is the mean distance of all rotated
    predictions to that reference. Returns ``(value, grads, consensus)``.

    With ``stop_gradient_reference=False`` the reference pose is
    differentiated as the mean of its members (the member selection itself
    is still treated as fixed). ``normalize_reference`` averages unit-norm
    poses, which makes the NSE version blind to the scale of every single
    prediction.
    """
    preds = [np.asarray(p, dtype=float) for p in predictions]
    rots = [np.asarray(r, dtype=float) for r in rotations]
    if len(preds) != len(rots):
        raise ValueError("need one rotation per view")
    n = len(preds)
    if n < 2:
        raise ValueError("multi-view loss needs at least two views")
    value_fn, grad1, grad2 = distance_fns(distance)

    rotated = [r @ p for r, p in zip(rots, preds)]
    if consensus is None:
        consensus = select_consensus(rotated, k, distance, normalize_reference)
    ref = consensus.reference

    value = sum(value_fn(q, ref) for q in rotated) / n
    grads_common = [grad1(q, ref) / n for q in rotated]
    if not stop_gradient_reference:
        g_ref = sum(grad2(q, ref) for q in rotated) / n
        # back through the pelvis re-centring, then the member mean
        g_ref = g_ref.copy()
        g_ref[:, 0] -= g_ref.sum(axis=1)
        share = g_ref / len(consensus.member_indices)
        for i in consensus.member_indices:
            g = share
            if normalize_reference:
                q = rotated[i]
                nq = np.linalg.norm(q)
                u = q / nq
                g = (share - u * np.sum(u * share)) / nq
            grads_common[i] = grads_common[i] + g
    grads = [r.T @ g for r, g in zip(rots, grads_common)]
    return float(value), grads, consensus


def _paired_mean(predictions, targets, distance: str):
    preds = [np.asarray(p, dtype=float) for p in predictions]
    tgts = [np.asarray(t, dtype=float) for t in targets]
    if len(preds) != len(tgts):
        raise ValueError("predictions and targets differ in length")
    if not preds:
        raise ValueError("empty batch")
    value_fn, grad1, _ = distance_fns(distance)
    n = len(preds)
    value = sum(value_fn(p, t) for p, t in zip(preds, tgts)) / n
    grads = [grad1(p, t) / n for p, t in zip(preds, tgts)]
    return float(value), grads


def supervised_loss(predictions, labels, distance: str = "nse"):
    """Mean distance between predictions and ground-truth poses."""
    return _paired_mean(predictions, labels, distance)


def regularization_loss(predictions, anchor_predictions, distance: str = "nse"):
    """Mean distance between current predictions and the frozen snapshot's."""
    return _paired_mean(predictions, anchor_predictions, distance)
