"""A small tanh MLP mapping keypoint features to pelvis-centred 3D poses.

Forward and backward are written out by hand in numpy. The network output
is reshaped row-major to ``(3, n_joints)`` and re-centred on the pelvis, so
predictions satisfy the pose convention for any parameter values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "RegressorParams",
    "backward",
    "forward",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
]


@dataclass
class RegressorParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_scale: float = 1.0
    output_scale: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i} input does not match previous output")
        if self.layer_dims[-1] % 3:
            raise ValueError("output dimension must be 3 * n_joints")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_joints(self) -> int:
        return self.layer_dims[-1] // 3

    def arrays(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "RegressorParams":
        return RegressorParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                               self.input_scale, self.output_scale, dict(self.meta))

    def with_arrays(self, arrays) -> "RegressorParams":
        return RegressorParams(list(arrays[0::2]), list(arrays[1::2]),
                               self.input_scale, self.output_scale, dict(self.meta))


def init_params(layer_dims, rng, input_scale: float = 1.0, output_scale: float = 1.0) -> RegressorParams:
    """Gaussian weights with variance ``1 / fan_in`` and zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"bad layer dims {layer_dims!r}")
    weights = [rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_in, d_out))
               for d_in, d_out in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(d_out) for d_out in dims[1:]]
    return RegressorParams(weights, biases, input_scale, output_scale)


def _check_features(params: RegressorParams, features):
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != params.layer_dims[0]:
        raise ValueError(f"feature length {x.shape[1]} != network input {params.layer_dims[0]}")
    return x, single


def _forward_cache(params: RegressorParams, x: np.ndarray):
    acts = [x * params.input_scale]
    h = acts[0]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        h = z if i == last else np.tanh(z)
        acts.append(h)
    return acts


def forward(params: RegressorParams, features) -> np.ndarray:
    """Pose for one feature vector, or a ``(B, 3, n_joints)`` stack for a batch."""
    x, single = _check_features(params, features)
    out = _forward_cache(params, x)[-1] * params.output_scale
    poses = out.reshape(len(x), 3, -1)
    poses = poses - poses[:, :, :1]
    if not np.all(np.isfinite(poses)):
        raise FloatingPointError("regressor produced non-finite output")
    return poses[0] if single else poses


def backward(params: RegressorParams, features, output_gradient) -> list[np.ndarray]:
    """Gradients of ``sum <forward(features), output_gradient>`` per trainable array.

    Returned in :meth:`RegressorParams.arrays` order. Batched inputs sum their
    per-sample contributions.
    """
    x, single = _check_features(params, features)
    g = np.asarray(output_gradient, dtype=float)
    if single:
        g = g[None]
    if g.shape != (len(x), 3, params.n_joints):
        raise ValueError(f"output gradient shape {g.shape} does not match predictions")
    # pelvis re-centring: the pelvis output column absorbs minus the row sum
    g = g.copy()
    g[:, :, 0] -= g.sum(axis=2)
    delta = g.reshape(len(x), -1) * params.output_scale

    acts = _forward_cache(params, x)
    grads: list[np.ndarray] = []
    for i in range(len(params.weights) - 1, -1, -1):
        h_in = acts[i]
        grads.append(delta.sum(axis=0))
        grads.append(h_in.T @ delta)
        if i:
            delta = (delta @ params.weights[i].T) * (1.0 - acts[i] ** 2)
    grads.reverse()  # now W0, b0, W1, b1, ...
    return grads


def save_checkpoint(path, params: RegressorParams, **meta) -> None:
    data = {
        "layer_dims": params.layer_dims,
        "input_scale": params.input_scale,
        "output_scale": params.output_scale,
        "params": [a.ravel().tolist() for a in params.arrays()],
        **{k: v for k, v in {**params.meta, **meta}.items()},
    }
    Path(path).write_text(json.dumps(data))


def load_checkpoint(path) -> RegressorParams:
    data = json.loads(Path(path).read_text())
    dims = data["layer_dims"]
    flat = data["params"]
    weights, biases = [], []
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        weights.append(np.asarray(flat[2 * i], dtype=float).reshape(d_in, d_out))
        biases.append(np.asarray(flat[2 * i + 1], dtype=float))
    meta = {k: v for k, v in data.items()
            if k not in ("layer_dims", "input_scale", "output_scale", "params")}
    return RegressorParams(weights, biases, float(data["input_scale"]), float(data["output_scale"]), meta)
