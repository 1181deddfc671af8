"""Weakly supervised training: supervised pretraining, then multi-view training.

The loop follows the usual recipe for this kind of semi-supervised pose
training: each step sees 8 labeled single views and 2 groups of 4
synchronised views, rotates the grouped predictions into a common frame,
forms a consensus reference per group, and takes one Adam step on the
weighted sum of the consistency, supervised and anchor-regularisation
losses. The anchor network is the early-stopped pretraining snapshot and
never changes afterwards.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .alignment import DegeneratePoseError, estimate_rotation
from .losses import (LossBreakdown, LossWeights, multiview_loss, regularization_loss,
                     supervised_loss, total_loss)
from .metrics import MetricReport, evaluate_poses
from .regressor import RegressorParams, backward, forward, init_params
from .synth import Dataset, LabeledSample, augment

log = logging.getLogger(__name__)

__all__ = [
    "AdamState",
    "Batch",
    "LogEntry",
    "TrainConfig",
    "TrainLog",
    "adam_update",
    "estimate_group_rotations",
    "evaluate",
    "predict",
    "pretrain",
    "sample_batch",
    "train",
    "train_step",
    "validation_nmpjpe",
]

GROUP_SIZE = 4  # views per unlabeled group


@dataclass(frozen=True)
class TrainConfig:
    batch_labeled: int = 8
    batch_unlabeled_groups: int = 2
    consensus_size: int = 2
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    iterations: int = 3000
    pretrain_iterations: int = 2000
    eval_every: int = 100
    distance: str = "nse"
    rotations: str = "known"  # or "estimated"
    weights: LossWeights = field(default_factory=LossWeights)
    rng_seed: int = 0
    hidden: tuple[int, ...] = (256, 256)
    augment: bool = True
    stop_gradient_reference: bool = True
    normalize_reference: bool = False
    rotation_norm: str = "full"
    input_scale: float = 0.01
    output_scale: float = 1000.0

    def __post_init__(self):
        counts = (self.batch_labeled, self.batch_unlabeled_groups, self.consensus_size, self.eval_every)
        if min(counts) < 1 or self.iterations < 0 or self.pretrain_iterations < 0:
            raise ValueError("batch sizes and eval_every must be positive, iteration counts nonnegative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.distance not in ("se", "nse"):
            raise ValueError("distance must be 'se' or 'nse'")
        if self.rotations not in ("known", "estimated"):
            raise ValueError("rotations must be 'known' or 'estimated'")
        if self.consensus_size > GROUP_SIZE:
            raise ValueError(f"consensus_size cannot exceed the group size {GROUP_SIZE}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(d.pop("weights"))
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        wkeys = {f.name for f in fields(LossWeights)}
        weights = {k: d.pop(k) for k in list(d) if k in wkeys}
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train config fields: {sorted(unknown)}")
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d, weights=LossWeights(**weights))

    def replace(self, **changes) -> "TrainConfig":
        d = asdict(self)
        d["weights"] = self.weights
        d.update(changes)
        return TrainConfig(**d)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: RegressorParams) -> "AdamState":
        arrs = params.arrays()
        return cls([np.zeros_like(a) for a in arrs], [np.zeros_like(a) for a in arrs], 0)


def adam_update(params: RegressorParams, grads, state: AdamState, lr: float,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam step; returns new params and state."""
    step = state.step + 1
    new_m, new_v, new_arrays = [], [], []
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for a, g, m, v in zip(params.arrays(), grads, state.m, state.v):
        m = beta1 * m
        m += (1.0 - beta1) * g
        v = beta2 * v
        v += (1.0 - beta2) * (g * g)
        denom = np.sqrt(v / c2)
        denom += eps
        step_size = m / denom
        step_size *= lr / c1
        new_arrays.append(a - step_size)
        new_m.append(m)
        new_v.append(v)
    return params.with_arrays(new_arrays), AdamState(new_m, new_v, step)


@dataclass(frozen=True)
class LogEntry:
    iteration: int
    m: float
    s: float
    r: float
    total: float
    val_nmpjpe: float


LOG_COLUMNS = tuple(f.name for f in fields(LogEntry))


@dataclass
class TrainLog:
    entries: list[LogEntry] = field(default_factory=list)
    pretrain: "TrainLog | None" = None
    skipped_groups: int = 0

    def append(self, entry: LogEntry) -> None:
        if self.entries and entry.iteration <= self.entries[-1].iteration:
            raise ValueError("log iterations must increase")
        self.entries.append(entry)

    def val_curve(self) -> tuple[np.ndarray, np.ndarray]:
        it = np.array([e.iteration for e in self.entries])
        return it, np.array([e.val_nmpjpe for e in self.entries])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for e in self.entries:
            w.writerow([e.iteration] + [repr(float(getattr(e, c))) for c in LOG_COLUMNS[1:]])
        return buf.getvalue()


@dataclass
class Batch:
    labeled_features: np.ndarray   # (B_l, F)
    labeled_poses: np.ndarray      # (B_l, 3, J)
    group_features: np.ndarray     # (G, 4, F)
    group_rotations: np.ndarray    # (G, 4, 3, 3), view frame -> first view frame
    group_poses: np.ndarray        # (G, 4, 3, J), for diagnostics only


def _feature_dim(ds: Dataset) -> int:
    if ds.labeled:
        return len(ds.labeled[0].features)
    return ds.unlabeled[0].features.shape[1]


def _check_sizes(ds: Dataset, cfg: TrainConfig, need_unlabeled: bool) -> None:
    if len(ds.labeled) < cfg.batch_labeled:
        raise ValueError(f"dataset has {len(ds.labeled)} labeled samples, "
                         f"batch needs {cfg.batch_labeled}")
    if need_unlabeled:
        if len(ds.unlabeled) < cfg.batch_unlabeled_groups:
            raise ValueError(f"dataset has {len(ds.unlabeled)} multi-view samples, "
                             f"batch needs {cfg.batch_unlabeled_groups}")
        few = [s.t for s in ds.unlabeled if s.n_views < GROUP_SIZE]
        if few:
            raise ValueError(f"multi-view samples need at least {GROUP_SIZE} views")
    if not ds.validation:
        raise ValueError("dataset has no validation samples")


def _labeled_part(ds: Dataset, cfg: TrainConfig, rng):
    idx = rng.choice(len(ds.labeled), size=cfg.batch_labeled, replace=False)
    feats, poses = [], []
    for i in idx:
        s = ds.labeled[i]
        f, p = s.features, s.pose
        if cfg.augment:
            pp = tuple(ds.meta.get("capture", {}).get("intrinsics", {}).get("principal_point", (0.0, 0.0)))
            f, p = augment(f, p, rng, principal_point=pp)
        feats.append(f)
        poses.append(p)
    return np.stack(feats), np.stack(poses)


def _unlabeled_part(ds: Dataset, cfg: TrainConfig, rng):
    idx = rng.choice(len(ds.unlabeled), size=cfg.batch_unlabeled_groups, replace=False)
    feats, rots, poses = [], [], []
    for i in idx:
        s = ds.unlabeled[i]
        views = np.arange(s.n_views)
        if s.n_views > GROUP_SIZE:
            views = np.sort(rng.choice(s.n_views, size=GROUP_SIZE, replace=False))
        r = s.rotations[views]
        # re-express rotations relative to the first chosen view
        r = np.einsum("ji,cjk->cik", r[0], r)
        feats.append(s.features[views])
        rots.append(r)
        poses.append(s.poses[views])
    return np.stack(feats), np.stack(rots), np.stack(poses)


def sample_batch(ds: Dataset, cfg: TrainConfig, labeled_rng, unlabeled_rng) -> Batch:
    lf, lp = _labeled_part(ds, cfg, labeled_rng)
    gf, gr, gp = _unlabeled_part(ds, cfg, unlabeled_rng)
    return Batch(lf, lp, gf, gr, gp)


def estimate_group_rotations(preds, torso_set, normalize: str = "full") -> np.ndarray:
    """Rotations taking each view's prediction onto the first view's."""
    rots = [np.eye(3)]
    for p in preds[1:]:
        rots.append(estimate_rotation(p, preds[0], torso_set, normalize).rotation)
    return np.stack(rots)


def train_step(theta: RegressorParams, gamma: RegressorParams, batch: Batch, adam_state: AdamState,
               config: TrainConfig, torso_set=None, rotations=None):
    """One Adam step on the full weighted objective.

    ``rotations`` overrides the per-group rotations; otherwise they come from
    the batch (known) or from the current predictions (estimated, which needs
    ``torso_set``). Rotations and consensus references are held fixed while
    differentiating. Groups whose rotation cannot be estimated are dropped
    from the consistency term; their count is returned on the breakdown as
    ``skipped``.
    """
    w = config.weights
    n_lab = len(batch.labeled_features)
    g_count, g_views = batch.group_features.shape[:2]
    unl_feats = batch.group_features.reshape(g_count * g_views, -1)
    all_feats = np.concatenate([batch.labeled_features, unl_feats])
    preds = forward(theta, all_feats)
    lab_preds, unl_preds = preds[:n_lab], preds[n_lab:]

    s_val, s_grads = supervised_loss(list(lab_preds), list(batch.labeled_poses), config.distance)

    group_preds = unl_preds.reshape(g_count, g_views, 3, -1)
    if rotations is None:
        if config.rotations == "estimated":
            if torso_set is None:
                raise ValueError("estimated rotations need the skeleton's torso_set")
            rotations = []
            for gp in group_preds:
                try:
                    rotations.append(estimate_group_rotations(gp, torso_set, config.rotation_norm))
                except DegeneratePoseError:
                    rotations.append(None)
        else:
            rotations = list(batch.group_rotations)

    m_grads = np.zeros_like(group_preds)
    m_total, used, skipped = 0.0, 0, 0
    for gi, (gp, rot) in enumerate(zip(group_preds, rotations)):
        if rot is None:
            skipped += 1
            continue
        val, grads, _ = multiview_loss(list(gp), list(rot), config.consensus_size, config.distance,
                                       config.stop_gradient_reference, config.normalize_reference)
        m_total += val
        m_grads[gi] = np.stack(grads)
        used += 1
    m_val = m_total / used if used else 0.0
    if used:
        m_grads /= used

    anchors = forward(gamma, unl_feats)
    r_val, r_grads = regularization_loss(list(unl_preds), list(anchors), config.distance)

    out_grad = np.concatenate([
        w.w_supervised * np.stack(s_grads),
        w.w_multiview * m_grads.reshape(g_count * g_views, 3, -1) + w.w_regularizer * np.stack(r_grads),
    ])
    grads = backward(theta, all_feats, out_grad)
    theta, adam_state = adam_update(theta, grads, adam_state, config.learning_rate,
                                    config.adam_beta1, config.adam_beta2, config.adam_eps)
    total = total_loss(m_val, s_val, r_val, w)
    breakdown = LossBreakdown(m_val, s_val, r_val, total, grad_labeled=list(out_grad[:n_lab]),
                              grad_unlabeled=list(out_grad[n_lab:]), skipped=skipped)
    return theta, adam_state, breakdown


def validation_nmpjpe(theta: RegressorParams, samples: list[LabeledSample]) -> float:
    """Mean NMPJPE over ``samples``, vectorised."""
    feats = np.stack([s.features for s in samples])
    gts = np.stack([s.pose for s in samples])
    preds = forward(theta, feats)
    num = np.einsum("bij,bij->b", preds, gts)
    den = np.einsum("bij,bij->b", preds, preds)
    if np.any(den <= 1e-12):
        raise DegeneratePoseError("degenerate prediction during validation")
    scaled = preds * (num / den)[:, None, None]
    return float(np.mean(np.linalg.norm(scaled - gts, axis=1).mean(axis=1)))


def _rngs(seed: int):
    ss = np.random.SeedSequence(seed).spawn(3)
    return [np.random.default_rng(s) for s in ss]


def _init(ds: Dataset, cfg: TrainConfig, rng) -> RegressorParams:
    dims = [_feature_dim(ds), *cfg.hidden, 3 * ds.skeleton.n_joints]
    return init_params(dims, rng, cfg.input_scale, cfg.output_scale)


def pretrain(ds: Dataset, config: TrainConfig, theta: RegressorParams | None = None,
             rngs=None):
    """Supervised-only training with best-validation snapshot selection.

    Returns ``(theta, gamma, log)`` where ``theta`` is the last iterate and
    ``gamma`` the snapshot with the lowest validation NMPJPE seen at the
    evaluation points (iteration 0 included).
    """
    _check_sizes(ds, config, need_unlabeled=False)
    init_rng, lab_rng, _ = rngs if rngs is not None else _rngs(config.rng_seed)
    if theta is None:
        theta = _init(ds, config, init_rng)
    state = AdamState.zeros_like(theta)
    plog = TrainLog()
    best = (validation_nmpjpe(theta, ds.validation), theta.copy())
    plog.append(LogEntry(0, 0.0, float("nan"), 0.0, float("nan"), best[0]))
    for it in range(1, config.pretrain_iterations + 1):
        feats, poses = _labeled_part(ds, config, lab_rng)
        preds = forward(theta, feats)
        try:
            s_val, s_grads = supervised_loss(list(preds), list(poses), config.distance)
        except DegeneratePoseError as exc:
            raise DegeneratePoseError(f"pretraining iteration {it}: {exc}") from None
        grads = backward(theta, feats, config.weights.w_supervised * np.stack(s_grads))
        theta, state = adam_update(theta, grads, state, config.learning_rate,
                                   config.adam_beta1, config.adam_beta2, config.adam_eps)
        if it % config.eval_every == 0 or it == config.pretrain_iterations:
            val = validation_nmpjpe(theta, ds.validation)
            s_w = config.weights.w_supervised * s_val
            plog.append(LogEntry(it, 0.0, s_val, 0.0, s_w, val))
            if val < best[0]:
                best = (val, theta.copy())
    return theta, best[1], plog


def train(ds: Dataset, config: TrainConfig):
    """Pretrain, freeze the snapshot, then run the weakly supervised loop.

    Returns ``(theta, log)``; ``log.pretrain`` holds the pretraining log and
    the weak phase starts from the snapshot with a fresh Adam state.
    """
    _check_sizes(ds, config, need_unlabeled=True)
    rngs = _rngs(config.rng_seed)
    _, lab_rng, unl_rng = rngs
    _, gamma, plog = pretrain(ds, config, rngs=rngs)
    theta = gamma.copy()
    state = AdamState.zeros_like(theta)
    tlog = TrainLog(pretrain=plog)
    tlog.append(LogEntry(0, float("nan"), float("nan"), float("nan"), float("nan"),
                         validation_nmpjpe(theta, ds.validation)))
    torso = ds.skeleton.torso_set
    acc = np.zeros(4)
    n_acc = 0
    for it in range(1, config.iterations + 1):
        batch = sample_batch(ds, config, lab_rng, unl_rng)
        theta, state, br = train_step(theta, gamma, batch, state, config, torso_set=torso)
        tlog.skipped_groups += br.skipped
        acc += (br.m_value, br.s_value, br.r_value, br.total)
        n_acc += 1
        if it % config.eval_every == 0 or it == config.iterations:
            m, s, r, tot = acc / n_acc
            tlog.append(LogEntry(it, m, s, r, tot, validation_nmpjpe(theta, ds.validation)))
            acc[:] = 0.0
            n_acc = 0
    if tlog.skipped_groups:
        log.warning("skipped %d groups with degenerate torso predictions", tlog.skipped_groups)
    return theta, tlog


def predict(model, features) -> np.ndarray:
    """Batch predictions from regressor params or from any ``features -> poses`` callable."""
    if isinstance(model, RegressorParams):
        return forward(model, features)
    return np.asarray(model(features), dtype=float)


def evaluate(theta, samples: list[LabeledSample], skeleton) -> MetricReport:
    """Metric report for ``theta`` (params or a predictor callable) on labeled samples."""
    if not samples:
        raise ValueError("evaluation set is empty")
    preds = predict(theta, np.stack([s.features for s in samples]))
    return evaluate_poses(list(preds), [s.pose for s in samples], skeleton)


def load_train_config(path) -> TrainConfig:
    return TrainConfig.from_dict(json.loads(Path(path).read_text()))
