"""Pose accuracy metrics.

Per-sample functions take single ``(3, n_joints)`` poses; :func:`evaluate_poses`
averages per-sample values into a :class:`MetricReport`.
"""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields

import numpy as np

from .alignment import optimal_scale, procrustes_align
from .skeleton import Skeleton

__all__ = [
    "METRIC_COLUMNS",
    "MetricReport",
    "center_of_mass",
    "com_distances",
    "evaluate_poses",
    "flexion_angle",
    "mpjpe",
    "nmpjpe",
    "npck",
    "pck",
    "pmpjpe",
]

PCK_THRESHOLD_MM = 150.0


def _pair(pred, gt):
    a = np.asarray(pred, dtype=float)
    b = np.asarray(gt, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"pose shapes differ: {a.shape} vs {b.shape}")
    return a, b


def joint_errors(pred, gt) -> np.ndarray:
    a, b = _pair(pred, gt)
    return np.linalg.norm(a - b, axis=0)


def mpjpe(pred, gt) -> float:
    return float(joint_errors(pred, gt).mean())


def nmpjpe(pred, gt) -> float:
    a, b = _pair(pred, gt)
    return mpjpe(optimal_scale(a, b) * a, b)


def pmpjpe(pred, gt) -> float:
    a, b = _pair(pred, gt)
    return mpjpe(procrustes_align(a, b).apply(a), b)


def pck(pred, gt, threshold_mm: float = PCK_THRESHOLD_MM) -> float:
    """Fraction of joints closer than ``threshold_mm`` to the ground truth."""
    if not threshold_mm > 0:
        raise ValueError("PCK threshold must be positive")
    return float(np.mean(joint_errors(pred, gt) < threshold_mm))


def npck(pred, gt, threshold_mm: float = PCK_THRESHOLD_MM) -> float:
    a, b = _pair(pred, gt)
    return pck(optimal_scale(a, b) * a, b, threshold_mm)


def center_of_mass(p, skeleton: Skeleton) -> np.ndarray:
    return np.asarray(p, dtype=float) @ skeleton.segment_weights


def _limb(skeleton: Skeleton, key: str):
    triples = skeleton.limb_pairs.get(key)
    if not triples:
        raise ValueError(f"skeleton has no {key!r} limb triples")
    return triples


def com_distances(p, skeleton: Skeleton) -> tuple[float, float]:
    """Distances from the centre of mass to the hip and ankle midpoints.

    Hip and ankle joints are read off the ``knee`` triples
    ``(hip, knee, ankle)``.
    """
    p = np.asarray(p, dtype=float)
    knees = _limb(skeleton, "knee")
    hips = [t[0] for t in knees]
    ankles = [t[2] for t in knees]
    com = center_of_mass(p, skeleton)
    hip_mid = p[:, hips].mean(axis=1)
    ankle_mid = p[:, ankles].mean(axis=1)
    return float(np.linalg.norm(com - hip_mid)), float(np.linalg.norm(com - ankle_mid))


def flexion_angle(p, triple) -> float:
    """Interior angle in degrees at the middle joint of ``triple``."""
    p = np.asarray(p, dtype=float)
    a, b, c = triple
    u = p[:, a] - p[:, b]
    v = p[:, c] - p[:, b]
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu <= 1e-12 or nv <= 1e-12:
        raise ValueError(f"zero-length segment at joint {b}")
    cos = np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)))


def _mean_flexion(p, triples) -> float:
    return float(np.mean([flexion_angle(p, t) for t in triples]))


@dataclass(frozen=True)
class MetricReport:
    """Averaged metrics; the ski-style fields are absolute prediction errors.

    ``com_*`` and ``*_flexion_deg`` compare the scale-normalised prediction
    against the ground truth on the same measurement.
    """

    mpjpe_mm: float
    nmpjpe_mm: float
    pmpjpe_mm: float
    pck: float
    npck: float
    com_hip_mm: float
    com_ankle_mm: float
    hip_flexion_deg: float
    knee_flexion_deg: float
    n_samples: int

    def as_row(self) -> list:
        return list(astuple(self))

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(METRIC_COLUMNS)
        w.writerow([_fmt(v) for v in self.as_row()])
        return buf.getvalue()


METRIC_COLUMNS = tuple(f.name for f in fields(MetricReport))


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else repr(float(v))


def sample_metrics(pred, gt, skeleton: Skeleton, threshold_mm: float = PCK_THRESHOLD_MM) -> dict:
    pred, gt = _pair(pred, gt)
    s = optimal_scale(pred, gt)
    scaled = s * pred
    out = {
        "mpjpe_mm": mpjpe(pred, gt),
        "nmpjpe_mm": mpjpe(scaled, gt),
        "pmpjpe_mm": pmpjpe(pred, gt),
        "pck": pck(pred, gt, threshold_mm),
        "npck": pck(scaled, gt, threshold_mm),
    }
    ch_p, ca_p = com_distances(scaled, skeleton)
    ch_g, ca_g = com_distances(gt, skeleton)
    out["com_hip_mm"] = abs(ch_p - ch_g)
    out["com_ankle_mm"] = abs(ca_p - ca_g)
    out["hip_flexion_deg"] = abs(_mean_flexion(scaled, _limb(skeleton, "hip"))
                                 - _mean_flexion(gt, _limb(skeleton, "hip")))
    out["knee_flexion_deg"] = abs(_mean_flexion(scaled, _limb(skeleton, "knee"))
                                  - _mean_flexion(gt, _limb(skeleton, "knee")))
    return out


def evaluate_poses(preds, gts, skeleton: Skeleton,
                   threshold_mm: float = PCK_THRESHOLD_MM) -> MetricReport:
    """Average per-sample metrics over matched prediction/label lists."""
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts) or not preds:
        raise ValueError("need equally many predictions and labels, at least one")
    rows = [sample_metrics(p, g, skeleton, threshold_mm) for p, g in zip(preds, gts)]
    means = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
    return MetricReport(**means, n_samples=len(rows))
