"""The synthetic scarce-label benchmark used for the end-to-end comparisons.

Five subjects seen by four PTZ cameras with 23 mm observation noise; only
subject 0 is labeled. All runs share the dataset seed and the training
seed, so every comparison is paired.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import LossWeights
from .skeleton import default_skeleton
from .synth import CaptureConfig, Dataset, generate_dataset
from .trainer import TrainConfig, TrainLog, train

__all__ = ["BENCHMARK_CAPTURE", "BENCHMARK_TRAIN", "RunSummary", "benchmark_dataset", "run"]

SEED = 42
LABELED_SUBJECTS = (0,)

BENCHMARK_CAPTURE = CaptureConfig(n_cameras=4, n_subjects=5, frames_per_subject=200,
                                  noise_sigma_mm=23.0, rotation_model="ptz", rng_seed=SEED)

# the consistency term is averaged over views and groups and its NSE values
# are small, so it gets a larger weight than the default to matter at all
BENCHMARK_TRAIN = TrainConfig(iterations=20000, pretrain_iterations=2000, eval_every=250,
                              weights=LossWeights(300.0, 100.0, 300.0), rng_seed=SEED)


@dataclass(frozen=True)
class RunSummary:
    final: float
    minimum: float
    log: TrainLog

    @property
    def final_over_min(self) -> float:
        return self.final / self.minimum


def benchmark_dataset() -> Dataset:
    return generate_dataset(BENCHMARK_CAPTURE, default_skeleton(), LABELED_SUBJECTS)


def run(ds: Dataset | None = None, **changes) -> RunSummary:
    """Train on the benchmark with ``changes`` applied to :data:`BENCHMARK_TRAIN`.

    ``mode="baseline"`` is accepted as a shorthand for zero consistency and
    regularisation weights.
    """
    if changes.pop("mode", "weak") == "baseline":
        changes["weights"] = LossWeights(0.0, BENCHMARK_TRAIN.weights.w_supervised, 0.0)
    ds = benchmark_dataset() if ds is None else ds
    _, log = train(ds, BENCHMARK_TRAIN.replace(**changes))
    _, v = log.val_curve()
    return RunSummary(float(v[-1]), float(np.min(v)), log)
