"""Figures written next to the CSV outputs of the command-line tools.

Everything renders off-screen with the Agg backend and goes straight to a
file; nothing here is needed by the library itself.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["angle_error_histogram", "per_joint_errors", "validation_curves"]

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 100,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def validation_curves(curves: dict, path, pretrain=None) -> Path:
    """Validation NMPJPE against iteration for one or more runs.

    ``curves`` maps a label to ``(iterations, values)``. ``pretrain`` is an
    optional ``(iterations, values)`` pair drawn on a negative axis so the
    two phases line up.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if pretrain is not None:
            it, v = (np.asarray(a, dtype=float) for a in pretrain)
            ax.plot(it - it.max(), v, color="0.6", lw=1, label="pretraining")
            ax.axvline(0, color="0.6", lw=0.8, ls=":")
        for label, (it, v) in curves.items():
            ax.plot(it, v, lw=1.4, label=label)
        ax.set_xlabel("iteration")
        ax.set_ylabel("validation NMPJPE [mm]")
        ax.legend()
        return _save(fig, path)


def per_joint_errors(errors_mm, joint_names, path, label: str | None = None) -> Path:
    """Bar chart of mean error per joint; ``errors_mm`` is (n_samples, n_joints)."""
    e = np.asarray(errors_mm, dtype=float)
    mean = e.mean(axis=0)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = np.arange(len(joint_names))
        ax.bar(x, mean, color="C0", label=label)
        ax.set_xticks(x)
        ax.set_xticklabels(joint_names, rotation=60, ha="right")
        ax.set_ylabel("mean joint error [mm]")
        if label:
            ax.legend()
        return _save(fig, path)


def angle_error_histogram(angles_deg, path) -> Path:
    """Histogram of geodesic rotation errors with mean and median marked."""
    a = np.asarray(angles_deg, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.hist(a, bins=min(40, max(5, a.size // 5)), color="C0", alpha=0.8)
        ax.axvline(a.mean(), color="C1", lw=1.2, label=f"mean {a.mean():.2f} deg")
        ax.axvline(np.median(a), color="C2", lw=1.2, ls="--", label=f"median {np.median(a):.2f} deg")
        ax.set_xlabel("rotation error [deg]")
        ax.set_ylabel("count")
        ax.legend()
        return _save(fig, path)
