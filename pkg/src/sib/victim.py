"""Target classifiers: a dense ANN and a rate-coded SNN with matching widths.

Both are sklearn-style estimators (fit / predict / predict_proba / score,
get_params via BaseEstimator) so they compose with the usual tooling, and
both serialize through the shared checkpoint container.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .checkpoint import Checkpoint, load_checkpoint
from .errors import ConfigError, DataError, DimensionError, TrainingError
from .numcore import DTYPE, Adam, Mlp, Rng, softmax, softmax_cross_entropy
from .spike import DECODE_MODES, LIFParams, SnnNet, rate_encode_batch
from .validation import check_labels, check_matrix

_EVAL_CHUNK = 512


def _as_xy(data) -> tuple[np.ndarray, np.ndarray]:
    """Accept a Dataset-like (images/labels attrs) or an (X, y) pair."""
    if hasattr(data, "images") and hasattr(data, "labels"):
        return data.images, data.labels
    x, y = data
    return x, y


def _one_hot(idx: np.ndarray, n_classes: int, dtype=DTYPE) -> np.ndarray:
    out = np.zeros((idx.shape[0], n_classes), dtype=dtype)
    out[np.arange(idx.shape[0]), idx] = 1.0
    return out


def _fit_common(est, X, y):
    X = check_matrix(X, "X")
    y = check_labels(y, name="y")
    if X.shape[0] != y.shape[0]:
        raise DimensionError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    est.classes_ = np.unique(y)
    est.n_features_in_ = X.shape[1]
    y_idx = np.searchsorted(est.classes_, y)
    return X, y_idx


class AnnClassifier(BaseEstimator, ClassifierMixin):
    """Single-hidden-layer dense classifier (ReLU, softmax cross-entropy)."""

    def __init__(self, hidden_dim: int = 3000, epochs: int = 10, batch_size: int = 128,
                 learning_rate: float = 1e-3, early_stop_patience: int | None = None,
                 seed: int = 0):
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.early_stop_patience = early_stop_patience
        self.seed = seed

    def fit(self, X, y, eval_set=None):
        X, y_idx = _fit_common(self, X, y)
        n_classes = len(self.classes_)
        rng = Rng(self.seed)
        self.net_ = Mlp(
            (self.n_features_in_, self.hidden_dim, n_classes),
            ("relu", "linear"),
            rng.stream("ann"),
        )
        adam = Adam(lr=self.learning_rate)
        self.history_ = []

        def forward_backward(xb, targets):
            logits = self.net_.forward(xb, train=True)
            loss, dlogits = softmax_cross_entropy(logits, targets)
            self.net_.backward(dlogits)
            return loss

        _run_epochs(
            self, X, y_idx, n_classes, rng, adam, eval_set,
            forward_backward=forward_backward,
            params=self.net_.param_list(),
            grads=lambda: self.net_.grad_list,
        )
        return self

    def predict_proba(self, X) -> np.ndarray:
        X = check_matrix(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        return softmax(self.net_.forward(X.astype(DTYPE)))

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def oracle_probabilities(self, X: np.ndarray, start_index: int = 0) -> np.ndarray:
        # deterministic model: the query index only matters for SNN encoding
        return self.predict_proba(X)

    def architecture(self) -> tuple[int, ...]:
        return self.net_.dims


class SnnClassifier(BaseEstimator, ClassifierMixin):
    """Rate-coded spiking classifier trained with surrogate-gradient BPTT.

    Inputs must lie in [0, 1]; every sample is Bernoulli-encoded into
    `steps` binary frames with a stream keyed by (seed, epoch, sample), so
    training is reproducible despite the stochastic encoding.
    """

    def __init__(self, hidden_dim: int = 3000, epochs: int = 10, batch_size: int = 128,
                 learning_rate: float = 1e-3, steps: int = 25, alpha: float = 0.7,
                 eta: float = 1.0, surrogate_slope: float = 40.0,
                 decode_mode: str = "membrane-sum",
                 early_stop_patience: int | None = None, seed: int = 0):
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.steps = steps
        self.alpha = alpha
        self.eta = eta
        self.surrogate_slope = surrogate_slope
        self.decode_mode = decode_mode
        self.early_stop_patience = early_stop_patience
        self.seed = seed

    def _lif(self) -> LIFParams:
        return LIFParams(alpha=self.alpha, eta=self.eta,
                         surrogate_slope=self.surrogate_slope)

    def fit(self, X, y, eval_set=None):
        if self.decode_mode not in DECODE_MODES:
            raise ConfigError(f"unknown decode mode {self.decode_mode!r}")
        X, y_idx = _fit_common(self, X, y)
        n_classes = len(self.classes_)
        rng = Rng(self.seed)
        self.net_ = SnnNet(
            (self.n_features_in_, self.hidden_dim, n_classes),
            lif=self._lif(),
            rng=rng.stream("snn"),
        )
        adam = Adam(lr=self.learning_rate)
        self.history_ = []
        self._last_grads: list[np.ndarray] = []

        def forward_backward(xb, targets, epoch, idx):
            keys = [(epoch, int(i)) for i in idx]
            bits = rate_encode_batch(xb, self.steps, rng, "encode", keys)
            trace = self.net_.forward(bits)
            loss, grads = self.net_.loss_and_grads(trace, targets)
            self._last_grads = grads
            return loss

        _run_epochs(
            self, X, y_idx, n_classes, rng, adam, eval_set,
            forward_backward=forward_backward,
            params=self.net_.param_list(),
            grads=lambda: self._last_grads,
            pass_batch_meta=True,
        )
        return self

    def _decode_stats(self, X: np.ndarray, rng: Rng, purpose: str, keys) -> np.ndarray:
        mem = np.empty((X.shape[0], len(self.classes_)), dtype=np.float64)
        cnt = np.empty_like(mem)
        for lo in range(0, X.shape[0], _EVAL_CHUNK):
            hi = min(lo + _EVAL_CHUNK, X.shape[0])
            bits = rate_encode_batch(X[lo:hi].astype(DTYPE), self.steps, rng,
                                     purpose, keys[lo:hi])
            mem[lo:hi], cnt[lo:hi] = self.net_.forward_decode_stats(bits)
        return softmax(mem if self.decode_mode == "membrane-sum" else cnt)

    def predict_proba(self, X) -> np.ndarray:
        X = check_matrix(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        rng = Rng(self.seed)
        keys = [(int(i),) for i in range(X.shape[0])]
        return self._decode_stats(X, rng, "eval-encode", keys)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def oracle_probabilities(self, X: np.ndarray, start_index: int = 0) -> np.ndarray:
        """One fresh stochastic encoding per query row, keyed by query index."""
        rng = Rng(self.seed)
        keys = [(int(start_index + i),) for i in range(X.shape[0])]
        return self._decode_stats(X, rng, "oracle-encode", keys)

    def architecture(self) -> tuple[int, ...]:
        return self.net_.dims


def _run_epochs(est, X, y_idx, n_classes, rng: Rng, adam: Adam, eval_set,
                forward_backward, params, grads, pass_batch_meta: bool = False):
    """Shared mini-batch loop: shuffling, NaN guard, eval tracking, early stop."""
    n = X.shape[0]
    best_acc = -1.0
    stale = 0
    est.epochs_run_ = 0
    for epoch in range(est.epochs):
        order = rng.stream("shuffle", epoch).permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, n, est.batch_size):
            idx = order[lo:lo + est.batch_size]
            xb = X[idx].astype(DTYPE)
            targets = _one_hot(y_idx[idx], n_classes)
            if pass_batch_meta:
                loss = forward_backward(xb, targets, epoch, idx)
            else:
                loss = forward_backward(xb, targets)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} batch {n_batches}"
                )
            adam.step(params, grads())
            epoch_loss += loss
            n_batches += 1
        est.epochs_run_ = epoch + 1
        record = {"epoch": epoch, "train_loss": epoch_loss / max(n_batches, 1)}
        if eval_set is not None:
            ex, ey = _as_xy(eval_set)
            acc = float(np.mean(est.predict(ex) == ey))
            record["test_accuracy"] = acc
            est.history_.append(record)
            if est.early_stop_patience is not None:
                if acc > best_acc + 1e-12:
                    best_acc = acc
                    stale = 0
                else:
                    stale += 1
                    if stale >= est.early_stop_patience:
                        return
        else:
            est.history_.append(record)


def assert_matched_architecture(ann: AnnClassifier, snn: SnnClassifier) -> None:
    """Both victims must expose identical layer widths for a fair comparison."""
    if ann.architecture() != snn.architecture():
        raise ConfigError(
            f"victim architectures differ: ann {ann.architecture()} "
            f"vs snn {snn.architecture()}"
        )


# ---------------------------------------------------------------------------
# config + training entry points
# ---------------------------------------------------------------------------

VICTIM_KINDS = ("ann", "snn")


@dataclass
class VictimConfig:
    kind: str = "ann"
    hidden_dim: int = 3000
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 1e-3
    steps: int = 25
    alpha: float = 0.7
    eta: float = 1.0
    surrogate_slope: float = 40.0
    decode_mode: str = "membrane-sum"
    early_stop_patience: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in VICTIM_KINDS:
            raise ConfigError(
                f"victim kind must be one of {VICTIM_KINDS}, got {self.kind!r}"
            )
        if self.hidden_dim <= 0:
            raise ConfigError(f"hidden_dim must be positive, got {self.hidden_dim}")
        if self.kind == "snn" and self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")

    def build(self):
        if self.kind == "ann":
            return AnnClassifier(
                hidden_dim=self.hidden_dim, epochs=self.epochs,
                batch_size=self.batch_size, learning_rate=self.learning_rate,
                early_stop_patience=self.early_stop_patience, seed=self.seed,
            )
        return SnnClassifier(
            hidden_dim=self.hidden_dim, epochs=self.epochs,
            batch_size=self.batch_size, learning_rate=self.learning_rate,
            steps=self.steps, alpha=self.alpha, eta=self.eta,
            surrogate_slope=self.surrogate_slope, decode_mode=self.decode_mode,
            early_stop_patience=self.early_stop_patience, seed=self.seed,
        )


def train_victim(config: VictimConfig, train_set, test_set=None) -> Checkpoint:
    """Train a victim to a checkpoint, recording per-epoch test accuracy."""
    x_train, y_train = _as_xy(train_set)
    est = config.build()
    est.fit(x_train, y_train, eval_set=test_set)
    metadata = {
        "epochs_run": est.epochs_run_,
        "seed": config.seed,
        "history": est.history_,
    }
    if test_set is not None:
        ex, ey = _as_xy(test_set)
        metadata["final_test_accuracy"] = float(np.mean(est.predict(ex) == ey))
    return checkpoint_from_estimator(est, metadata)


def evaluate_accuracy(model, dataset) -> float:
    """Argmax accuracy of a victim (estimator or checkpoint) on a dataset."""
    if isinstance(model, Checkpoint):
        model = estimator_from_checkpoint(model)
    x, y = _as_xy(dataset)
    return float(np.mean(model.predict(x) == np.asarray(y)))


# ---------------------------------------------------------------------------
# checkpoint glue
# ---------------------------------------------------------------------------

def _net_arrays(net) -> dict[str, np.ndarray]:
    out = {}
    for i, layer in enumerate(net.layers):
        out[f"layer{i}.weights"] = layer.weights
        out[f"layer{i}.bias"] = layer.bias
    return out


def checkpoint_from_estimator(est, metadata: dict | None = None) -> Checkpoint:
    if isinstance(est, AnnClassifier):
        kind = "ann"
    elif isinstance(est, SnnClassifier):
        kind = "snn"
    else:
        raise ConfigError(f"cannot checkpoint {type(est).__name__}")
    meta = dict(metadata or {})
    meta["classes"] = [int(c) for c in est.classes_]
    meta["n_features_in"] = int(est.n_features_in_)
    return Checkpoint(kind=kind, params=est.get_params(),
                      arrays=dict(_net_arrays(est.net_)), metadata=meta)


def estimator_from_checkpoint(ckpt: Checkpoint):
    if ckpt.kind == "ann":
        est = AnnClassifier(**ckpt.params)
    elif ckpt.kind == "snn":
        est = SnnClassifier(**ckpt.params)
    else:
        raise DataError(f"checkpoint kind {ckpt.kind!r} is not a victim")
    est.classes_ = np.asarray(ckpt.metadata["classes"], dtype=np.int64)
    est.n_features_in_ = int(ckpt.metadata["n_features_in"])
    n_classes = len(est.classes_)
    dims = (est.n_features_in_, est.hidden_dim, n_classes)
    if ckpt.kind == "ann":
        est.net_ = Mlp(dims, ("relu", "linear"), Rng(0))
    else:
        est.net_ = SnnNet(dims, lif=est._lif(), rng=Rng(0))
    for i, layer in enumerate(est.net_.layers):
        layer.weights[...] = ckpt.arrays[f"layer{i}.weights"]
        layer.bias[...] = ckpt.arrays[f"layer{i}.bias"]
    est.history_ = ckpt.metadata.get("history", [])
    est.epochs_run_ = ckpt.metadata.get("epochs_run", 0)
    return est


def load_victim(path: str):
    """Load a victim checkpoint file straight to a ready estimator."""
    return estimator_from_checkpoint(load_checkpoint(path))
