"""Leaky integrate-and-fire dynamics, rate encoding, and surrogate-gradient BPTT.

The neuron recursion per layer and time step is

    v[t] = alpha * v[t-1] + current[t] - spikes[t-1] * eta
    spikes[t] = 1  if v[t] > eta  (strict),  else 0

so the threshold subtraction (soft reset) lands on the *next* step and the
recorded membranes are the pre-reset values. The hard threshold blocks
gradients, so the backward pass swaps in the derivative of the fast-sigmoid
relaxation

    s(v) = (v - eta) / (1 + slope * |v - eta|) + 1/2
    s'(v) = 1 / (1 + slope * |v - eta|)^2

Passing smooth=True to the forward uses s(v) as the spike value itself,
which turns the network into a fully differentiable model whose exact
gradient the same backward code computes; the gradient tests rely on that.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, ValidationError
from .numcore import DTYPE, DenseLayer, Rng, softmax, softmax_cross_entropy


@dataclass
class LIFParams:
    """Neuron constants: leak factor, firing threshold, surrogate slope."""

    alpha: float = 0.7
    eta: float = 1.0
    surrogate_slope: float = 40.0

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValidationError(f"alpha must be in (0, 1], got {self.alpha}")
        if not self.eta > 0.0:
            raise ValidationError(f"eta must be positive, got {self.eta}")
        if not self.surrogate_slope > 0.0:
            raise ValidationError(
                f"surrogate_slope must be positive, got {self.surrogate_slope}"
            )


@dataclass
class LIFState:
    """Per-neuron membrane potentials and the spikes they emitted."""

    membrane: np.ndarray
    spikes: np.ndarray


def _reset_eta(params: LIFParams) -> float:
    # with an infinite threshold nothing ever spikes, so the reset term is 0
    return params.eta if np.isfinite(params.eta) else 0.0


def lif_step(state: LIFState, weighted_input: np.ndarray, params: LIFParams) -> LIFState:
    """Advance one time step; returned membranes are pre-reset values."""
    if state.membrane.shape != weighted_input.shape:
        raise DimensionError(
            f"lif_step shapes differ: membrane {state.membrane.shape} "
            f"vs input {weighted_input.shape}"
        )
    v = params.alpha * state.membrane + weighted_input - state.spikes * _reset_eta(params)
    spikes = (v > params.eta).astype(v.dtype)
    return LIFState(membrane=v, spikes=spikes)


def surrogate_grad(v, params: LIFParams):
    """Derivative of the fast-sigmoid spike relaxation, peaked at threshold."""
    return 1.0 / (1.0 + params.surrogate_slope * np.abs(v - params.eta)) ** 2


def fast_sigmoid(v, params: LIFParams):
    """Smooth stand-in for the hard threshold; s(eta) = 1/2."""
    z = v - params.eta
    return z / (1.0 + params.surrogate_slope * np.abs(z)) + 0.5


# ---------------------------------------------------------------------------
# rate encoding
# ---------------------------------------------------------------------------

@dataclass
class SpikeTrain:
    """Binary (steps x dim) encoding of one input vector."""

    bits: np.ndarray

    @property
    def steps(self) -> int:
        return self.bits.shape[0]

    @property
    def dim(self) -> int:
        return self.bits.shape[1]


def rate_encode(image: np.ndarray, steps: int, rng: Rng) -> SpikeTrain:
    """Bernoulli spike train: firing probability per step equals intensity."""
    image = np.asarray(image)
    if image.ndim != 1:
        raise DimensionError(f"rate_encode expects a 1-D vector, got {image.shape}")
    if image.size and (image.min() < 0.0 or image.max() > 1.0):
        raise ValidationError("pixel intensities must lie in [0, 1]")
    probs = np.broadcast_to(image, (int(steps), image.shape[0]))
    return SpikeTrain(bits=rng.bernoulli(probs))


def rate_encode_batch(x: np.ndarray, steps: int, rng: Rng, purpose: str,
                      sample_keys) -> np.ndarray:
    """Encode a (batch, dim) array into (steps, batch, dim) spike bits.

    Every row gets its own derived stream (purpose, *key) so encodings are
    reproducible sample by sample, independent of batch composition.
    """
    batch, dim = x.shape
    bits = np.empty((int(steps), batch, dim), dtype=DTYPE)
    for i, key in enumerate(sample_keys):
        key = key if isinstance(key, tuple) else (key,)
        stream = rng.stream(purpose, *key)
        bits[:, i, :] = rate_encode(x[i], steps, stream).bits
    return bits


# ---------------------------------------------------------------------------
# spiking network
# ---------------------------------------------------------------------------

@dataclass
class SnnTrace:
    """Everything BPTT needs: per-step membranes and spikes of every layer.

    membranes[-1] holds the per-step pre-reset output membranes, i.e. the
    logits sequence.
    """

    inputs: np.ndarray                      # (T, B, in_dim)
    membranes: list[np.ndarray] = field(default_factory=list)
    spikes: list[np.ndarray] = field(default_factory=list)
    smooth: bool = False

    @property
    def steps(self) -> int:
        return self.inputs.shape[0]

    @property
    def logits_per_step(self) -> np.ndarray:
        return self.membranes[-1]


class SnnNet:
    """Stack of dense projections, each feeding a LIF population.

    The last layer's membranes are read out as logits; its neurons still
    fire and soft-reset so spike-count decoding stays meaningful.
    """

    def __init__(self, dims, lif: LIFParams | None = None, rng: Rng | None = None,
                 dtype=DTYPE):
        if len(dims) < 2:
            raise DimensionError("SnnNet needs at least (in_dim, out_dim)")
        self.dims = tuple(int(d) for d in dims)
        self.lif = lif if lif is not None else LIFParams()
        rng = rng if rng is not None else Rng(0)
        self.layers = [
            DenseLayer(self.dims[i], self.dims[i + 1], rng.stream("init", i), dtype=dtype)
            for i in range(len(self.dims) - 1)
        ]

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def param_list(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.extend([layer.weights, layer.bias])
        return out

    def forward(self, bits: np.ndarray, smooth: bool = False) -> SnnTrace:
        """Run all T steps from zero state, recording the full trace.

        bits has shape (T, batch, in_dim). With smooth=True, spike values
        are the fast-sigmoid relaxation instead of {0, 1}.
        """
        if bits.ndim != 3 or bits.shape[2] != self.in_dim:
            raise DimensionError(
                f"expected bits (T, batch, {self.in_dim}), got {bits.shape}"
            )
        steps, batch, _ = bits.shape
        alpha, eta = self.lif.alpha, self.lif.eta
        reta = _reset_eta(self.lif)
        trace = SnnTrace(inputs=bits, smooth=smooth)

        # layer 0 currents do not depend on network state: one big matmul
        first = self.layers[0]
        flat = bits.reshape(steps * batch, self.in_dim)
        currents0 = (flat @ first.weights.T + first.bias).reshape(
            steps, batch, first.out_dim
        )

        n_layers = len(self.layers)
        v = [np.zeros((batch, layer.out_dim), dtype=bits.dtype) for layer in self.layers]
        s = [np.zeros_like(vl) for vl in v]
        vs = [np.empty((steps, batch, layer.out_dim), dtype=bits.dtype)
              for layer in self.layers]
        ss = [np.empty_like(vl) for vl in vs]

        for t in range(steps):
            current = currents0[t]
            for li in range(n_layers):
                v[li] = alpha * v[li] + current - s[li] * reta
                if smooth:
                    s[li] = fast_sigmoid(v[li], self.lif)
                else:
                    s[li] = (v[li] > eta).astype(bits.dtype)
                vs[li][t] = v[li]
                ss[li][t] = s[li]
                if li + 1 < n_layers:
                    nxt = self.layers[li + 1]
                    current = s[li] @ nxt.weights.T + nxt.bias
        trace.membranes = vs
        trace.spikes = ss
        return trace

    def forward_decode_stats(self, bits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Memory-light forward: only (membrane_sum, spike_count) of the output."""
        if bits.ndim != 3 or bits.shape[2] != self.in_dim:
            raise DimensionError(
                f"expected bits (T, batch, {self.in_dim}), got {bits.shape}"
            )
        steps, batch, _ = bits.shape
        alpha, eta = self.lif.alpha, self.lif.eta
        reta = _reset_eta(self.lif)
        first = self.layers[0]
        flat = bits.reshape(steps * batch, self.in_dim)
        currents0 = (flat @ first.weights.T + first.bias).reshape(
            steps, batch, first.out_dim
        )
        n_layers = len(self.layers)
        v = [np.zeros((batch, layer.out_dim), dtype=bits.dtype) for layer in self.layers]
        s = [np.zeros_like(vl) for vl in v]
        mem_sum = np.zeros((batch, self.out_dim), dtype=np.float64)
        spike_count = np.zeros((batch, self.out_dim), dtype=np.float64)
        for t in range(steps):
            current = currents0[t]
            for li in range(n_layers):
                v[li] = alpha * v[li] + current - s[li] * reta
                s[li] = (v[li] > eta).astype(bits.dtype)
                if li + 1 < n_layers:
                    nxt = self.layers[li + 1]
                    current = s[li] @ nxt.weights.T + nxt.bias
            mem_sum += v[-1]
            spike_count += s[-1]
        return mem_sum, spike_count

    def loss_and_grads(self, trace: SnnTrace,
                       targets: np.ndarray) -> tuple[float, list[np.ndarray]]:
        """Time-summed softmax cross-entropy and BPTT parameter gradients.

        Loss is the sum over steps of the batch-mean cross-entropy between
        the per-step output membranes and the target rows. Gradients flow
        through every step, through the leak and through the soft reset,
        with the hard threshold replaced by surrogate_grad in the chain.
        Returned grads align with param_list().
        """
        steps = trace.steps
        batch = trace.inputs.shape[1]
        logits = trace.membranes[-1]                    # (T, B, k)
        if targets.shape != (batch, self.out_dim):
            raise DimensionError(
                f"targets must be ({batch}, {self.out_dim}), got {targets.shape}"
            )
        loss = 0.0
        dloss = np.empty_like(logits)
        for t in range(steps):
            loss_t, grad_t = softmax_cross_entropy(logits[t], targets)
            loss += loss_t
            dloss[t] = grad_t

        alpha = self.lif.alpha
        eta = _reset_eta(self.lif)
        n_layers = len(self.layers)
        sg = [surrogate_grad(trace.membranes[li], self.lif) for li in range(n_layers)]

        # adjoints of the membrane sequence, top layer first
        gv = [np.zeros_like(trace.membranes[li]) for li in range(n_layers)]
        top = n_layers - 1
        nxt = np.zeros((batch, self.out_dim), dtype=logits.dtype)
        for t in range(steps - 1, -1, -1):
            nxt = dloss[t] + alpha * nxt - eta * sg[top][t] * nxt
            gv[top][t] = nxt
        for li in range(n_layers - 2, -1, -1):
            w_next = self.layers[li + 1].weights
            width = trace.membranes[li].shape[2]
            fwd = (gv[li + 1].reshape(steps * batch, -1) @ w_next).reshape(
                steps, batch, width
            )
            nxt = np.zeros((batch, width), dtype=logits.dtype)
            for t in range(steps - 1, -1, -1):
                nxt = alpha * nxt + sg[li][t] * (fwd[t] - eta * nxt)
                gv[li][t] = nxt

        grads: list[np.ndarray] = []
        for li, layer in enumerate(self.layers):
            inp = trace.inputs if li == 0 else trace.spikes[li - 1]
            g_flat = gv[li].reshape(steps * batch, -1)
            dw = g_flat.T @ inp.reshape(steps * batch, -1)
            db = gv[li].sum(axis=(0, 1), dtype=np.float64).astype(dw.dtype)
            grads.extend([dw, db])
        return loss, grads


def snn_forward(net: SnnNet, train: SpikeTrain) -> tuple[SnnTrace, np.ndarray]:
    """Single-sample forward; returns (trace, per-step logits (T, k))."""
    trace = net.forward(train.bits[:, None, :])
    return trace, trace.logits_per_step[:, 0, :]


def snn_loss(net: SnnNet, trace: SnnTrace,
             targets: np.ndarray) -> tuple[float, list[np.ndarray]]:
    return net.loss_and_grads(trace, targets)


DECODE_MODES = ("membrane-sum", "spike-count")


def decode(logits_per_step: np.ndarray, spikes_per_step: np.ndarray | None = None,
           mode: str = "membrane-sum") -> np.ndarray:
    """Turn per-step output activity into class probabilities.

    membrane-sum: softmax of the time-summed pre-reset membranes (matches
    the training loss). spike-count: softmax of per-class spike counts,
    which needs spikes_per_step. Accepts (T, k) or (T, batch, k).
    """
    if mode == "membrane-sum":
        summed = np.asarray(logits_per_step).sum(axis=0, dtype=np.float64)
    elif mode == "spike-count":
        if spikes_per_step is None:
            raise ConfigError("spike-count decoding needs spikes_per_step")
        summed = np.asarray(spikes_per_step).sum(axis=0, dtype=np.float64)
    else:
        raise ConfigError(f"unknown decode mode {mode!r}; use one of {DECODE_MODES}")
    return softmax(summed)
