"""Deterministic numerics: seeded streams, dense layers, losses, Adam.

Everything trainable in this package (victims, surrogate, generator) is a
stack of dense layers built here, with hand-derived backward passes. There
is no computation graph: each network type owns its reverse pass.

Precision policy: weights and activations are float32, reductions and
probability outputs are computed in float64. All functions are dtype
preserving, so tests can run entire toy networks in float64 for tight
finite-difference comparisons.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .errors import DimensionError, ValidationError
from .validation import check_matrix, check_probability_rows, check_same_shape

DTYPE = np.float32


# ---------------------------------------------------------------------------
# seeded random streams
# ---------------------------------------------------------------------------

def _key_part_to_ints(part) -> tuple[int, ...]:
    """Map one stream-key component to SeedSequence spawn-key words."""
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValidationError(f"stream key ints must be >= 0, got {part}")
        return (int(part) & 0xFFFFFFFF, (int(part) >> 32) & 0xFFFFFFFF)
    if isinstance(part, str):
        digest = hashlib.blake2s(part.encode("utf-8"), digest_size=4).digest()
        return (int.from_bytes(digest, "little"),)
    raise ValidationError(f"stream key parts must be str or int, got {type(part)!r}")


class Rng:
    """Counter-based random source (Philox) with named derived substreams.

    One master seed fans out into independent streams keyed by purpose
    strings and indices, e.g. ``rng.stream("encode", epoch, sample)``.
    Identical (seed, key) always yields the identical sequence; streams
    with different keys are statistically independent.
    """

    def __init__(self, seed: int, _spawn_key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._spawn_key = _spawn_key
        seq = np.random.SeedSequence(self.seed, spawn_key=_spawn_key)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def stream(self, *key) -> "Rng":
        """Derive an independent substream for (purpose, indices...)."""
        words: list[int] = []
        for part in key:
            words.extend(_key_part_to_ints(part))
        return Rng(self.seed, self._spawn_key + tuple(words))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def standard_normal(self, rows: int, cols: int, dtype=DTYPE) -> np.ndarray:
        return self._gen.standard_normal((rows, cols), dtype=dtype)

    def uniform01(self, rows: int, cols: int, dtype=DTYPE) -> np.ndarray:
        return self._gen.random((rows, cols), dtype=dtype)

    def bernoulli(self, probs: np.ndarray) -> np.ndarray:
        """Draw {0,1} with per-entry probabilities. Probs must lie in [0,1]."""
        probs = np.asarray(probs)
        if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
            raise ValidationError("bernoulli probabilities must lie in [0, 1]")
        draws = self._gen.random(probs.shape)
        return (draws < probs).astype(DTYPE)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


# module-level aliases matching the functional style used elsewhere
def rng_standard_normal(rng: Rng, rows: int, cols: int, dtype=DTYPE) -> np.ndarray:
    return rng.standard_normal(rows, cols, dtype=dtype)


def rng_uniform01(rng: Rng, rows: int, cols: int, dtype=DTYPE) -> np.ndarray:
    return rng.uniform01(rows, cols, dtype=dtype)


def rng_bernoulli(rng: Rng, probs: np.ndarray) -> np.ndarray:
    return rng.bernoulli(probs)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def glorot_uniform(rng: Rng, out_dim: int, in_dim: int, dtype=DTYPE) -> np.ndarray:
    limit = math.sqrt(6.0 / (in_dim + out_dim))
    u = rng.uniform01(out_dim, in_dim, dtype=np.float64)
    return ((u * 2.0 - 1.0) * limit).astype(dtype)


class DenseLayer:
    """Affine map y = x @ W.T + b with cached input for the backward pass.

    W has shape (out_dim, in_dim). backward() may only be called after a
    forward() that cached its input.
    """

    def __init__(self, in_dim: int, out_dim: int, rng: Rng | None = None, dtype=DTYPE):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        if rng is None:
            self.weights = np.zeros((out_dim, in_dim), dtype=dtype)
        else:
            self.weights = glorot_uniform(rng, out_dim, in_dim, dtype=dtype)
        self.bias = np.zeros(out_dim, dtype=dtype)
        self.cached_input: np.ndarray | None = None

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(
                f"dense forward expects (batch, {self.in_dim}), got {x.shape}"
            )
        if cache:
            self.cached_input = x
        return x @ self.weights.T + self.bias

    def backward(self, dout: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (dx, dW, db) for upstream gradient dout of shape (batch, out)."""
        if self.cached_input is None:
            raise RuntimeError("dense backward called before forward")
        if dout.ndim != 2 or dout.shape[1] != self.out_dim:
            raise DimensionError(
                f"dense backward expects (batch, {self.out_dim}), got {dout.shape}"
            )
        x = self.cached_input
        if dout.shape[0] != x.shape[0]:
            raise DimensionError(
                f"dense backward batch {dout.shape[0]} != cached batch {x.shape[0]}"
            )
        dw = dout.T @ x
        db = dout.sum(axis=0, dtype=np.float64).astype(dout.dtype)
        dx = dout @ self.weights
        return dx, dw, db

    def params(self) -> list[np.ndarray]:
        return [self.weights, self.bias]


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    return layer.forward(x)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax, computed and returned in float64."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy between softmax(logits) and (soft) target rows.

    Returns (loss, grad) where grad = (softmax - targets) / batch in the
    dtype of logits. Target rows must each sum to 1 within 1e-6; one-hot
    and soft labels are both fine.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    check_same_shape(logits, targets, "logits/targets")
    if logits.ndim != 2:
        raise DimensionError(f"logits must be 2-D, got ndim={logits.ndim}")
    check_probability_rows(targets)
    batch = logits.shape[0]
    probs = softmax(logits)
    t64 = targets.astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(t64 > 0.0, np.log(probs), 0.0)
    loss = float(-(t64 * logp).sum() / batch)
    grad = ((probs - t64) / batch).astype(logits.dtype)
    return loss, grad


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Bias-corrected adaptive-moment optimizer; updates params in place."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment: list[np.ndarray] | None = None
        self.second_moment: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if len(params) != len(grads):
            raise DimensionError(
                f"adam got {len(params)} params but {len(grads)} grads"
            )
        if self.first_moment is None:
            self.first_moment = [np.zeros_like(p) for p in params]
            self.second_moment = [np.zeros_like(p) for p in params]
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for p, g, m, v in zip(params, grads, self.first_moment, self.second_moment):
            if p.shape != g.shape or p.shape != m.shape:
                raise DimensionError(
                    f"adam shape mismatch: param {p.shape} vs grad {g.shape}"
                )
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)


def adam_step(optimizer: Adam, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    optimizer.step(params, grads)


# ---------------------------------------------------------------------------
# plain MLP (victim ANN, attack surrogate, attack generator)
# ---------------------------------------------------------------------------

_ACTIVATIONS = ("relu", "sigmoid", "linear")


class Mlp:
    """Dense stack with per-layer activations and a hand-derived backward.

    dims = (in, h1, ..., out); activations has one entry per layer.
    forward(train=True) caches whatever backward() needs; backward(dout)
    fills self.grad_list (aligned with param_list()) and returns the
    gradient w.r.t. the input batch.
    """

    def __init__(self, dims, activations, rng: Rng, dtype=DTYPE):
        if len(activations) != len(dims) - 1:
            raise DimensionError(
                f"need {len(dims) - 1} activations for {len(dims)} dims, got {len(activations)}"
            )
        for act in activations:
            if act not in _ACTIVATIONS:
                raise ValidationError(f"unknown activation {act!r}")
        self.dims = tuple(int(d) for d in dims)
        self.activations = tuple(activations)
        self.dtype = dtype
        self.layers = [
            DenseLayer(dims[i], dims[i + 1], rng.stream("init", i), dtype=dtype)
            for i in range(len(dims) - 1)
        ]
        self._acts: list[np.ndarray] = []
        self.grad_list: list[np.ndarray] = []

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if train:
            self._acts = []
        h = x
        for layer, act in zip(self.layers, self.activations):
            z = layer.forward(h, cache=train)
            if act == "relu":
                h = np.maximum(z, 0.0)
            elif act == "sigmoid":
                h = 0.5 * (1.0 + np.tanh(0.5 * z))   # overflow-free sigmoid
            else:
                h = z
            if train:
                self._acts.append(h)
        return h

    def backward(self, dout: np.ndarray) -> np.ndarray:
        """Backprop dout through the stack; requires forward(train=True)."""
        if len(self._acts) != len(self.layers):
            raise RuntimeError("mlp backward called before forward(train=True)")
        grads: list[np.ndarray] = []
        d = dout
        for layer, act, h in zip(
            reversed(self.layers), reversed(self.activations), reversed(self._acts)
        ):
            if act == "relu":
                d = d * (h > 0)
            elif act == "sigmoid":
                d = d * h * (1.0 - h)
            d, dw, db = layer.backward(d)
            grads.append(db)
            grads.append(dw)
        self.grad_list = list(reversed(grads))
        return d

    def param_list(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.extend([layer.weights, layer.bias])
        return out

    def get_weights(self) -> list[np.ndarray]:
        return [p.copy() for p in self.param_list()]

    def set_weights(self, weights: list[np.ndarray]) -> None:
        params = self.param_list()
        if len(weights) != len(params):
            raise DimensionError(
                f"expected {len(params)} weight arrays, got {len(weights)}"
            )
        for p, w in zip(params, weights):
            if p.shape != w.shape:
                raise DimensionError(f"weight shape {w.shape} != expected {p.shape}")
            p[...] = w
