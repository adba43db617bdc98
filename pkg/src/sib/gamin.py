"""Generative black-box inversion: generator + surrogate trained in tandem.

Per iteration the surrogate S is fitted to the oracle's answers on random
inputs X_S and on generated inputs X_G under the boundary-equilibrium loss

    L_S = L_H(X_S, Y_S) - k_t * L_H(X_G, Y_G)
    k_{t+1} = clamp( k_t + lambda_k * (gamma_k * L_H(X_S, Y_S) - L_H(X_G, Y_G)) )

then the generator G takes one step minimizing L_H(S(G(z)), y_t) with S
frozen. The best (G, S) pair by the global convergence score is retained.

This module talks to the victim exclusively through the oracle's query()
interface; it must never import victim internals.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from sklearn.base import BaseEstimator

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import BudgetExhaustedError, ConfigError, ValidationError
from .numcore import Adam, Mlp, Rng, softmax, softmax_cross_entropy

M_GLOBAL_MODES = ("began", "as-written")


@dataclass
class EquilibriumState:
    """Dynamic factor balancing the surrogate's fit on random vs generated inputs."""

    k_t: float = 0.0
    lambda_k: float = 0.001
    gamma_k: float = 0.5


def update_k(eq: EquilibriumState, loss_xs: float, loss_xg: float) -> EquilibriumState:
    """Apply the equilibrium update and clamp k to [0, 1]."""
    for name, value in (("loss_xs", loss_xs), ("loss_xg", loss_xg)):
        if not np.isfinite(value) or value < 0.0:
            raise ValidationError(f"{name} must be finite and >= 0, got {value}")
    k = eq.k_t + eq.lambda_k * (eq.gamma_k * loss_xs - loss_xg)
    eq.k_t = float(min(1.0, max(0.0, k)))
    return eq


def compute_m_global(loss_xs: float, loss_xg: float, eq: EquilibriumState,
                     mode: str = "began") -> float:
    """Global convergence score; lower is better and drives snapshot retention.

    "began": L_xs + |gamma_k * L_xs - L_xg| (the convention the snapshot
    minimum assumes). "as-written": same with a minus in front of the
    absolute term.
    """
    gap = abs(eq.gamma_k * loss_xs - loss_xg)
    if mode == "began":
        return float(loss_xs + gap)
    if mode == "as-written":
        return float(loss_xs - gap)
    raise ConfigError(f"unknown m_global mode {mode!r}; use one of {M_GLOBAL_MODES}")


def build_generator(noise_dim: int, hidden, out_dim: int, rng: Rng,
                    dtype=np.float32) -> Mlp:
    """Noise to image net; the sigmoid head keeps outputs inside [0,1]."""
    dims = (noise_dim, *hidden, out_dim)
    acts = ("relu",) * len(hidden) + ("sigmoid",)
    return Mlp(dims, acts, rng, dtype=dtype)


def build_surrogate(in_dim: int, hidden, num_classes: int, rng: Rng,
                    dtype=np.float32) -> Mlp:
    dims = (in_dim, *hidden, num_classes)
    acts = ("relu",) * len(hidden) + ("linear",)
    return Mlp(dims, acts, rng, dtype=dtype)


def surrogate_probabilities(surrogate: Mlp, x: np.ndarray) -> np.ndarray:
    return softmax(surrogate.forward(x))


# ---------------------------------------------------------------------------
# one iteration
# ---------------------------------------------------------------------------

def surrogate_train_step(surrogate: Mlp, oracle, generator: Mlp,
                         eq: EquilibriumState, rng: Rng, adam: Adam,
                         batch_size: int = 64,
                         xs_oracle=None) -> tuple[float, float, float]:
    """One boundary-equilibrium step on the surrogate.

    Queries the oracle twice (random batch, generated batch), which is the
    only place the attack spends budget. xs_oracle lets the X_S batch be
    billed elsewhere; it defaults to the same oracle.
    """
    d = surrogate.in_dim
    xs = rng.stream("xs").uniform01(batch_size, d)
    ys = (xs_oracle or oracle).query(xs, phase="surrogate")

    z = rng.stream("noise").standard_normal(batch_size, generator.in_dim)
    xg = generator.forward(z)            # generator frozen here
    yg = oracle.query(xg, phase="generator")

    logits_s = surrogate.forward(xs, train=True)
    loss_xs, dlogits_s = softmax_cross_entropy(logits_s, ys)
    surrogate.backward(dlogits_s)
    grads_xs = surrogate.grad_list

    logits_g = surrogate.forward(xg, train=True)
    loss_xg, dlogits_g = softmax_cross_entropy(logits_g, yg)
    surrogate.backward(dlogits_g)
    grads_xg = surrogate.grad_list

    combined = [a - eq.k_t * b for a, b in zip(grads_xs, grads_xg)]
    adam.step(surrogate.param_list(), combined)
    loss_s = loss_xs - eq.k_t * loss_xg
    return float(loss_s), float(loss_xs), float(loss_xg)


def generator_train_step(generator: Mlp, surrogate: Mlp, target_label: int,
                         rng: Rng, adam: Adam, batch_size: int = 64) -> float:
    """One step pulling S(G(z)) toward the target label; S stays fixed.

    The surrogate argument only needs Mlp's forward/backward surface, so
    tests can swap in the true target for a white-box upper-bound run.
    """
    z = rng.stream("noise").standard_normal(batch_size, generator.in_dim)
    xg = generator.forward(z, train=True)
    logits = surrogate.forward(xg, train=True)
    onehot = np.zeros((batch_size, surrogate.out_dim), dtype=xg.dtype)
    onehot[:, int(target_label)] = 1.0
    loss, dlogits = softmax_cross_entropy(logits, onehot)
    dxg = surrogate.backward(dlogits)    # grads computed, never applied
    generator.backward(dxg)
    adam.step(generator.param_list(), generator.grad_list)
    return float(loss)


# ---------------------------------------------------------------------------
# full attack
# ---------------------------------------------------------------------------

@dataclass
class AttackConfig:
    target_label: int = 0
    batch_size: int = 64
    total_batches: int = 20_000
    noise_dim: int = 100
    generator_hidden: tuple = (512, 1024)
    surrogate_hidden: tuple = (512, 256)
    learning_rate: float = 5e-4
    beta1: float = 0.5
    beta2: float = 0.999
    lambda_k: float = 0.001
    gamma_k: float = 0.5
    k0: float = 0.0
    m_global_mode: str = "began"
    exempt_xs_from_budget: bool = False
    snapshot_every: int = 1
    seed: int = 0
    input_dim: int | None = None
    num_classes: int | None = None

    def __post_init__(self):
        if self.m_global_mode not in M_GLOBAL_MODES:
            raise ConfigError(
                f"unknown m_global mode {self.m_global_mode!r}; "
                f"use one of {M_GLOBAL_MODES}"
            )
        if self.batch_size < 1 or self.total_batches < 1:
            raise ConfigError("batch_size and total_batches must be positive")
        if not (0.0 <= self.k0 <= 1.0):
            raise ConfigError(f"k0 must lie in [0, 1], got {self.k0}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["generator_hidden"] = list(self.generator_hidden)
        out["surrogate_hidden"] = list(self.surrogate_hidden)
        return out


@dataclass
class AttackSnapshot:
    """Best-so-far pair by minimum global convergence score."""

    generator_weights: list
    surrogate_weights: list
    generator_dims: tuple
    surrogate_dims: tuple
    m_global: float
    batch_index: int


@dataclass
class AttackResult:
    snapshot: AttackSnapshot
    history: dict[str, np.ndarray]
    batches_run: int
    budget_exhausted: bool
    queries_used: int
    queries_unbilled: int
    config: AttackConfig


def _resolve_dims(config: AttackConfig, oracle) -> tuple[int, int]:
    d = config.input_dim if config.input_dim is not None else oracle.input_dim
    k = config.num_classes if config.num_classes is not None else oracle.num_classes
    if d is None or k is None:
        raise ConfigError(
            "input_dim/num_classes not derivable from the oracle; set them "
            "in the attack config"
        )
    return int(d), int(k)


def run_attack(config: AttackConfig, oracle, rng: Rng | None = None) -> AttackResult:
    """Iterate surrogate step, k update, generator step; retain the best pair.

    Stops cleanly when the oracle budget cannot fund another iteration and
    flags the result. Per iteration exactly two batches are queried, both
    inside surrogate_train_step.
    """
    d, k = _resolve_dims(config, oracle)
    if int(config.target_label) >= k:
        raise ConfigError(
            f"target_label {config.target_label} out of range for {k} classes"
        )
    if config.batch_size * config.total_batches > oracle.ledger.budget:
        raise ConfigError(
            f"batch_size * total_batches = {config.batch_size * config.total_batches} "
            f"exceeds the oracle budget {oracle.ledger.budget}"
        )
    rng = rng if rng is not None else Rng(config.seed)
    generator = build_generator(config.noise_dim, config.generator_hidden, d,
                                rng.stream("generator"))
    surrogate = build_surrogate(d, config.surrogate_hidden, k,
                                rng.stream("surrogate"))
    adam_s = Adam(lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2)
    adam_g = Adam(lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2)
    eq = EquilibriumState(k_t=config.k0, lambda_k=config.lambda_k,
                          gamma_k=config.gamma_k)
    xs_oracle = oracle.clone_unbudgeted() if config.exempt_xs_from_budget else None

    cols = ("L_S", "L_H_XS", "L_H_XG", "L_G", "k_t", "M_global")
    history: dict[str, list[float]] = {c: [] for c in cols}
    best: AttackSnapshot | None = None
    exhausted = False
    batches_run = 0

    for it in range(config.total_batches):
        try:
            loss_s, loss_xs, loss_xg = surrogate_train_step(
                surrogate, oracle, generator, eq,
                rng.stream("surrogate-step", it), adam_s,
                batch_size=config.batch_size, xs_oracle=xs_oracle,
            )
        except BudgetExhaustedError:
            exhausted = True
            break
        update_k(eq, loss_xs, loss_xg)
        loss_g = generator_train_step(
            generator, surrogate, config.target_label,
            rng.stream("generator-step", it), adam_g,
            batch_size=config.batch_size,
        )
        m_global = compute_m_global(loss_xs, loss_xg, eq, config.m_global_mode)
        history["L_S"].append(loss_s)
        history["L_H_XS"].append(loss_xs)
        history["L_H_XG"].append(loss_xg)
        history["L_G"].append(loss_g)
        history["k_t"].append(eq.k_t)
        history["M_global"].append(m_global)
        batches_run = it + 1
        if (it % config.snapshot_every == 0) and (best is None or m_global < best.m_global):
            best = AttackSnapshot(
                generator_weights=generator.get_weights(),
                surrogate_weights=surrogate.get_weights(),
                generator_dims=generator.dims,
                surrogate_dims=surrogate.dims,
                m_global=m_global,
                batch_index=it,
            )

    if best is None:
        raise BudgetExhaustedError(
            "oracle budget could not fund a single attack iteration",
            queries_used=oracle.ledger.queries_used,
            budget=oracle.ledger.budget,
        )
    unbilled = 0 if xs_oracle is None else xs_oracle.ledger.queries_used
    return AttackResult(
        snapshot=best,
        history={c: np.asarray(v, dtype=np.float64) for c, v in history.items()},
        batches_run=batches_run,
        budget_exhausted=exhausted,
        queries_used=oracle.ledger.queries_used,
        queries_unbilled=unbilled,
        config=config,
    )


def build_generator_from(snapshot: AttackSnapshot) -> Mlp:
    dims = tuple(snapshot.generator_dims)
    net = build_generator(dims[0], dims[1:-1], dims[-1], Rng(0))
    net.set_weights(snapshot.generator_weights)
    return net


def build_surrogate_from(snapshot: AttackSnapshot) -> Mlp:
    dims = tuple(snapshot.surrogate_dims)
    net = build_surrogate(dims[0], dims[1:-1], dims[-1], Rng(0))
    net.set_weights(snapshot.surrogate_weights)
    return net


def invert(snapshot: AttackSnapshot, n_samples: int, rng: Rng) -> np.ndarray:
    """Sample reconstruction candidates for the attacked label."""
    generator = build_generator_from(snapshot)
    z = rng.stream("invert").standard_normal(n_samples, generator.in_dim)
    return generator.forward(z)


def write_history_csv(history: dict[str, np.ndarray], path: str) -> None:
    """Per-batch metric table; fixed formatting so identical runs match bytes."""
    n = len(history["L_S"])
    with open(path, "w") as fh:
        fh.write("batch,L_S,L_G,k_t,M_global\n")
        for i in range(n):
            fh.write(
                f"{i},{history['L_S'][i]:.10g},{history['L_G'][i]:.10g},"
                f"{history['k_t'][i]:.10g},{history['M_global'][i]:.10g}\n"
            )


# ---------------------------------------------------------------------------
# snapshot persistence (same container as victim checkpoints)
# ---------------------------------------------------------------------------

def snapshot_to_checkpoint(result: AttackResult) -> Checkpoint:
    snap = result.snapshot
    arrays: dict[str, np.ndarray] = {}
    for prefix, weights in (("generator", snap.generator_weights),
                            ("surrogate", snap.surrogate_weights)):
        for i, arr in enumerate(weights):
            arrays[f"{prefix}.{i}"] = arr
    return Checkpoint(
        kind="gamin",
        params=result.config.to_dict(),
        arrays=arrays,
        metadata={
            "m_global": snap.m_global,
            "batch_index": snap.batch_index,
            "generator_dims": list(snap.generator_dims),
            "surrogate_dims": list(snap.surrogate_dims),
            "batches_run": result.batches_run,
            "budget_exhausted": result.budget_exhausted,
            "queries_used": result.queries_used,
            "queries_unbilled": result.queries_unbilled,
        },
    )


def save_snapshot(result: AttackResult, path: str) -> None:
    save_checkpoint(snapshot_to_checkpoint(result), path)


def load_snapshot(path: str) -> tuple[AttackSnapshot, dict]:
    ckpt = load_checkpoint(path)
    if ckpt.kind != "gamin":
        raise ConfigError(f"{path}: expected a gamin snapshot, got {ckpt.kind!r}")
    meta = ckpt.metadata

    def weights(prefix: str, dims) -> list:
        count = 2 * (len(dims) - 1)
        return [ckpt.arrays[f"{prefix}.{i}"] for i in range(count)]

    gdims = tuple(meta["generator_dims"])
    sdims = tuple(meta["surrogate_dims"])
    snapshot = AttackSnapshot(
        generator_weights=weights("generator", gdims),
        surrogate_weights=weights("surrogate", sdims),
        generator_dims=gdims,
        surrogate_dims=sdims,
        m_global=meta["m_global"],
        batch_index=meta["batch_index"],
    )
    return snapshot, {"params": ckpt.params, "metadata": meta}


# ---------------------------------------------------------------------------
# sklearn-style front end
# ---------------------------------------------------------------------------

class GaminAttack(BaseEstimator):
    """Fit-shaped wrapper: fit(oracle) runs the attack, invert() samples.

    Hyperparameters mirror AttackConfig; fitted state lands in snapshot_,
    history_ and result_.
    """

    def __init__(self, target_label: int = 0, batch_size: int = 64,
                 total_batches: int = 20_000, noise_dim: int = 100,
                 generator_hidden: tuple = (512, 1024),
                 surrogate_hidden: tuple = (512, 256),
                 learning_rate: float = 5e-4, beta1: float = 0.5,
                 beta2: float = 0.999, lambda_k: float = 0.001,
                 gamma_k: float = 0.5, k0: float = 0.0,
                 m_global_mode: str = "began",
                 exempt_xs_from_budget: bool = False,
                 snapshot_every: int = 1, seed: int = 0):
        self.target_label = target_label
        self.batch_size = batch_size
        self.total_batches = total_batches
        self.noise_dim = noise_dim
        self.generator_hidden = generator_hidden
        self.surrogate_hidden = surrogate_hidden
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.lambda_k = lambda_k
        self.gamma_k = gamma_k
        self.k0 = k0
        self.m_global_mode = m_global_mode
        self.exempt_xs_from_budget = exempt_xs_from_budget
        self.snapshot_every = snapshot_every
        self.seed = seed

    def _config(self) -> AttackConfig:
        return AttackConfig(
            target_label=self.target_label, batch_size=self.batch_size,
            total_batches=self.total_batches, noise_dim=self.noise_dim,
            generator_hidden=tuple(self.generator_hidden),
            surrogate_hidden=tuple(self.surrogate_hidden),
            learning_rate=self.learning_rate, beta1=self.beta1, beta2=self.beta2,
            lambda_k=self.lambda_k, gamma_k=self.gamma_k, k0=self.k0,
            m_global_mode=self.m_global_mode,
            exempt_xs_from_budget=self.exempt_xs_from_budget,
            snapshot_every=self.snapshot_every, seed=self.seed,
        )

    def fit(self, oracle, y=None):
        self.result_ = run_attack(self._config(), oracle)
        self.snapshot_ = self.result_.snapshot
        self.history_ = self.result_.history
        return self

    def invert(self, n_samples: int, seed: int | None = None) -> np.ndarray:
        rng = Rng(self.seed if seed is None else seed)
        return invert(self.snapshot_, n_samples, rng)
