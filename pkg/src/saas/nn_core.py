"""Dense feed-forward softmax classifier in plain numpy.

Hidden layers use ReLU, the output layer softmax.  Everything runs in
float64; gradients are hand-written backprop and are checked against
central differences in the test-suite.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

EPS = 1e-12


class DimensionError(ValueError):
    pass


class TargetError(ValueError):
    """Target rows that do not lie on the probability simplex."""


class NumericError(FloatingPointError):
    """A non-finite value showed up during a forward or backward pass."""

    def __init__(self, message: str, layer: int | None = None, step: int | None = None):
        super().__init__(message)
        self.layer = layer
        self.step = step


@dataclass
class ModelParams:
    weights: list[np.ndarray]  # each (out, in)
    biases: list[np.ndarray]  # each (out,)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("need one bias per weight matrix and at least one layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise DimensionError(f"layer {i}: weight {W.shape} / bias {b.shape} mismatch")
            if i > 0 and W.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionError(
                    f"layer {i} expects {W.shape[1]} inputs, previous layer gives "
                    f"{self.weights[i - 1].shape[0]}")

    @property
    def arch(self) -> list[int]:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[0]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "ModelParams":
        return cls(list(arrays[0::2]), list(arrays[1::2]))

    def copy(self) -> "ModelParams":
        return ModelParams.from_arrays([a.copy() for a in self.arrays()])

    def zeros_like(self) -> "ModelParams":
        return ModelParams.from_arrays([np.zeros_like(a) for a in self.arrays()])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "ModelParams":
        arrays, pos = [], 0
        for a in self.arrays():
            arrays.append(np.asarray(vec[pos:pos + a.size], dtype=np.float64).reshape(a.shape).copy())
            pos += a.size
        return ModelParams.from_arrays(arrays)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def equals(self, other: "ModelParams") -> bool:
        """Bit-for-bit equality."""
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


@dataclass
class OptimizerState:
    eta_w: float
    momentum: float = 0.0
    velocity: ModelParams | None = None
    langevin_variance: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.langevin_variance < 0:
            raise ValueError(f"langevin_variance must be >= 0, got {self.langevin_variance}")

    @classmethod
    def fresh(cls, params: ModelParams, eta_w: float, momentum: float = 0.0,
              langevin_variance: float = 0.0) -> "OptimizerState":
        return cls(eta_w, momentum, params.zeros_like(), langevin_variance)


def init_params(arch: Sequence[int], seed: int, scale_mode: str = "fan_in") -> ModelParams:
    """Gaussian weights (variance 1 or 1/fan_in), zero biases."""
    arch = [int(a) for a in arch]
    if len(arch) < 2 or any(a < 1 for a in arch):
        raise DimensionError(f"architecture needs >= 2 positive layer sizes, got {arch}")
    if scale_mode not in ("unit", "fan_in"):
        raise ValueError(f"unknown scale_mode {scale_mode!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(arch[:-1], arch[1:]):
        std = 1.0 if scale_mode == "unit" else 1.0 / np.sqrt(fan_in)
        weights.append(rng.standard_normal((fan_out, fan_in)) * std)
        biases.append(np.zeros(fan_out))
    return ModelParams(weights, biases)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cache(params: ModelParams, X: np.ndarray):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.weights[0].shape[1]:
        raise DimensionError(
            f"input has shape {X.shape}, network expects (n, {params.weights[0].shape[1]})")
    acts = [X]
    h = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        with np.errstate(all="ignore"):
            z = h @ W.T + b
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite pre-activation in layer {i}", layer=i)
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts, _softmax(acts[-1])


def forward(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Class probabilities, clamped to [EPS, 1]."""
    _, p = _forward_cache(params, X)
    return np.maximum(p, EPS)


def _check_targets(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != probs.shape:
        raise DimensionError(f"targets {targets.shape} vs probabilities {probs.shape}")
    if targets.size and (np.any(targets < -1e-6) or np.any(np.abs(targets.sum(axis=1) - 1) > 1e-6)):
        raise TargetError("target rows must lie on the probability simplex")
    return targets


def soft_cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    """Batch mean of -<log p_i, t_i>."""
    probs = np.maximum(np.asarray(probs, dtype=np.float64), EPS)
    targets = _check_targets(probs, targets)
    return float(-(targets * np.log(probs)).sum(axis=1).mean())


def entropy_penalty(probs: np.ndarray) -> float:
    """Batch mean of the output entropy -<p_i, log p_i>."""
    probs = np.maximum(np.asarray(probs, dtype=np.float64), EPS)
    if probs.ndim != 2:
        raise DimensionError(f"expected (n, K) probabilities, got {probs.shape}")
    return float(-(probs * np.log(probs)).sum(axis=1).mean())


def one_hot(y: np.ndarray, K: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    out = np.zeros((y.size, K))
    out[np.arange(y.size), y] = 1.0
    return out


def grads(params: ModelParams, X: np.ndarray, targets: np.ndarray, beta: float = 0.0,
          include_entropy: bool = False) -> tuple[float, ModelParams]:
    """Loss and gradient of soft cross-entropy (+ beta * entropy) w.r.t. every parameter."""
    acts, p_raw = _forward_cache(params, X)
    p = np.maximum(p_raw, EPS)
    targets = _check_targets(p, targets)
    n = X.shape[0]
    live = p_raw > EPS  # the clamp kills the derivative below EPS
    logp = np.log(p)

    loss = -(targets * logp).sum(axis=1).mean()
    # p * dL/dp, row-wise; feeds the softmax Jacobian below
    pg = np.where(live, -targets, 0.0)
    if include_entropy and beta != 0.0:
        loss += beta * -(p * logp).sum(axis=1).mean()
        pg = pg + beta * np.where(live, -p_raw * (logp + 1.0), 0.0)
    dz = (pg - p_raw * pg.sum(axis=1, keepdims=True)) / n

    gW, gb = [None] * len(params.weights), [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        gW[i] = dz.T @ acts[i]
        gb[i] = dz.sum(axis=0)
        if not (np.all(np.isfinite(gW[i])) and np.all(np.isfinite(gb[i]))):
            raise NumericError(f"non-finite gradient in layer {i}", layer=i)
        if i > 0:
            dz = (dz @ params.weights[i]) * (acts[i] > 0)
    if not np.isfinite(loss):
        raise NumericError("non-finite loss", layer=len(params.weights) - 1)
    return float(loss), ModelParams(gW, gb)


def sgd_step(params: ModelParams, grad: ModelParams, state: OptimizerState,
             noise_seed: int | None = None) -> tuple[ModelParams, OptimizerState]:
    """One heavy-ball step with optional Gaussian (Langevin) perturbation.

    v' = momentum * v + grad;  w' = w - eta_w * v' + N(0, langevin_variance).
    """
    velocity = state.velocity if state.velocity is not None else params.zeros_like()
    rng = None
    if state.langevin_variance > 0:
        rng = np.random.default_rng(noise_seed)
        std = np.sqrt(state.langevin_variance)
    new_v, new_w = [], []
    for w, g, v in zip(params.arrays(), grad.arrays(), velocity.arrays()):
        v2 = state.momentum * v + g
        w2 = w - state.eta_w * v2
        if rng is not None:
            w2 = w2 + std * rng.standard_normal(w.shape)
        new_v.append(v2)
        new_w.append(w2)
    new_state = OptimizerState(state.eta_w, state.momentum, ModelParams.from_arrays(new_v),
                               state.langevin_variance)
    return ModelParams.from_arrays(new_w), new_state


def predict(params: ModelParams, X: np.ndarray) -> np.ndarray:
    return np.argmax(forward(params, X), axis=1)


def error_rate(params: ModelParams, X: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(predict(params, X) != np.asarray(y)))
