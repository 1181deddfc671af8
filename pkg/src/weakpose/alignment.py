"""Pose distances, optimal scale and rotation alignment.

Rotations are solved with Horn's closed-form quaternion method: the optimal
rotation is the eigenvector of a symmetric 4x4 matrix built from the
cross-covariance, so it is proper (det = +1) by construction and no
reflection fix-up is needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

EPS_NORM = 1e-6  # mm; poses with a smaller norm are treated as degenerate

__all__ = [
    "AlignmentResult",
    "DegeneratePoseError",
    "EPS_NORM",
    "distance_fns",
    "estimate_rotation",
    "nse_distance",
    "nse_gradient",
    "optimal_scale",
    "procrustes_align",
    "quaternion_to_matrix",
    "rotation_from_correspondences",
    "se_distance",
    "se_gradient",
]


class DegeneratePoseError(ValueError):
    """Pose (or joint subset) too small or too flat for the requested operation."""


@dataclass(frozen=True)
class AlignmentResult:
    rotation: np.ndarray
    scale: float
    residual: float

    def apply(self, p: np.ndarray) -> np.ndarray:
        return self.scale * (self.rotation @ p)


def _pair(p1, p2):
    a = np.asarray(p1, dtype=float)
    b = np.asarray(p2, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"pose shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _checked_norm(p: np.ndarray) -> float:
    flat = p.ravel()
    n = float(np.sqrt(flat @ flat))
    if not n > EPS_NORM:
        raise DegeneratePoseError(f"pose norm {n:.3g} mm is below {EPS_NORM} mm")
    return n


def se_distance(p1, p2) -> float:
    a, b = _pair(p1, p2)
    d = (a - b).ravel()
    return float(d @ d)


def se_gradient(p1, p2) -> np.ndarray:
    """Gradient of :func:`se_distance` with respect to ``p1``."""
    a, b = _pair(p1, p2)
    return 2.0 * (a - b)


def nse_distance(p1, p2) -> float:
    a, b = _pair(p1, p2)
    d = (a / _checked_norm(a) - b / _checked_norm(b)).ravel()
    return float(d @ d)


def nse_gradient(p1, p2) -> np.ndarray:
    """Gradient of :func:`nse_distance` with respect to ``p1``.

    ``(2/|p1|) (I - u1 u1^T)(u1 - u2)`` on the flattened poses; orthogonal
    to ``p1`` because the distance ignores the scale of ``p1``.
    """
    a, b = _pair(p1, p2)
    n1 = _checked_norm(a)
    u1 = a / n1
    u2 = b / _checked_norm(b)
    d = u1 - u2
    return (2.0 / n1) * (d - u1 * np.sum(u1 * d))


def _nse_grad_second(p1, p2):
    return nse_gradient(p2, p1)


def _se_grad_second(p1, p2):
    return -se_gradient(p1, p2)


_DISTANCES = {
    "se": (se_distance, se_gradient, _se_grad_second),
    "nse": (nse_distance, nse_gradient, _nse_grad_second),
}


def distance_fns(name: str) -> tuple[Callable, Callable, Callable]:
    """``(value, grad_wrt_first, grad_wrt_second)`` for ``"se"`` or ``"nse"``."""
    try:
        return _DISTANCES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown distance {name!r}; expected 'se' or 'nse'") from None


def optimal_scale(pred, gt) -> float:
    """Least-squares scale ``s`` minimising ``|s * pred - gt|^2``."""
    a, b = _pair(pred, gt)
    _checked_norm(a)
    return float(np.sum(a * b) / np.sum(a * a))


def quaternion_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotation_from_correspondences(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Proper rotation ``R`` maximising ``sum_i dst_i . (R src_i)``.

    Points are columns; no centring is done since poses share the pelvis
    origin.
    """
    s = src @ dst.T
    sxx, sxy, sxz = s[0]
    syx, syy, syz = s[1]
    szx, szy, szz = s[2]
    n = np.array([
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ])
    _, vecs = np.linalg.eigh(n)
    r = quaternion_to_matrix(vecs[:, -1])
    # one polar step snaps the result back onto SO(3) to machine precision
    u, _, vt = np.linalg.svd(r)
    return u @ vt


def _check_spread(points: np.ndarray, what: str) -> None:
    sv = np.linalg.svd(points, compute_uv=False)
    if sv[0] <= EPS_NORM or sv[1] <= 1e-9 * sv[0]:
        raise DegeneratePoseError(f"{what} joints are collinear or coincident; rotation is undetermined")


def estimate_rotation(src, dst, torso_set, normalize: str = "full") -> AlignmentResult:
    """Rotation taking ``src`` onto ``dst``, fitted on the torso joints only.

    Both poses are divided by their norms first. ``normalize="full"`` uses
    the whole-pose norm, ``"torso"`` the norm of the torso columns.
    """
    a, b = _pair(src, dst)
    idx = list(torso_set)
    if normalize == "full":
        na, nb = _checked_norm(a), _checked_norm(b)
    elif normalize == "torso":
        na, nb = _checked_norm(a[:, idx]), _checked_norm(b[:, idx])
    else:
        raise ValueError("normalize must be 'full' or 'torso'")
    sa = a[:, idx] / na
    sb = b[:, idx] / nb
    _check_spread(sa, "source torso")
    _check_spread(sb, "target torso")
    r = rotation_from_correspondences(sa, sb)
    residual = float(np.sum((r @ sa - sb) ** 2))
    return AlignmentResult(rotation=r, scale=1.0, residual=residual)


def procrustes_align(pred, gt) -> AlignmentResult:
    """Similarity alignment (rotation and scale) of ``pred`` onto ``gt``."""
    a, b = _pair(pred, gt)
    _checked_norm(a)
    _checked_norm(b)
    _check_spread(a, "prediction")
    r = rotation_from_correspondences(a, b)
    ra = r @ a
    s = float(np.sum(ra * b) / np.sum(a * a))
    residual = float(np.sum((s * ra - b) ** 2))
    return AlignmentResult(rotation=r, scale=s, residual=residual)
