"""Attack evaluation: fidelity, accuracy metrics, and the report table.

All query-based metrics take an oracle; pass an unbudgeted clone so that
measuring the attack never eats into the attack's own budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .numcore import Rng, softmax
from .validation import check_matrix

_GEN_CHUNK = 256


def _probabilities(model, x: np.ndarray) -> np.ndarray:
    """Probability rows from an estimator (predict_proba) or a raw Mlp."""
    if hasattr(model, "predict_proba"):
        return model.predict_proba(x)
    return softmax(model.forward(x))


def fidelity(oracle, surrogate, n_batches: int = 100, batch_size: int = 64,
             rng: Rng | None = None) -> float:
    """1 - mean absolute difference between oracle and surrogate probabilities,
    averaged elementwise over random uniform batches."""
    rng = rng if rng is not None else Rng(0)
    d = oracle.input_dim
    total = 0.0
    count = 0
    for i in range(n_batches):
        x = rng.stream("fidelity", i).uniform01(batch_size, d)
        y = oracle.query(x, phase="evaluation")
        y_hat = _probabilities(surrogate, x)
        total += np.abs(y - y_hat).sum(dtype=np.float64)
        count += y.size
    return float(1.0 - total / count)


def surrogate_test_accuracy(surrogate, test_set) -> float:
    """Argmax accuracy (percent) of the surrogate on held-out real data."""
    if hasattr(test_set, "images"):
        x, y = test_set.images, test_set.labels
    else:
        x, y = test_set
    x = check_matrix(x, "test images")
    probs = _probabilities(surrogate, x.astype(np.float32))
    pred = np.argmax(probs, axis=1)
    return float(np.mean(pred == np.asarray(y)) * 100.0)


def combined_accuracy(generator, surrogate, target_label: int, n: int = 640,
                      rng: Rng | None = None) -> float:
    """Percent of generated samples the surrogate assigns to the target label."""
    rng = rng if rng is not None else Rng(0)
    hits = 0
    done = 0
    chunk_id = 0
    while done < n:
        take = min(_GEN_CHUNK, n - done)
        z = rng.stream("combined", chunk_id).standard_normal(take, generator.in_dim)
        xg = generator.forward(z)
        pred = np.argmax(_probabilities(surrogate, xg), axis=1)
        hits += int(np.sum(pred == int(target_label)))
        done += take
        chunk_id += 1
    return float(hits / n * 100.0)


def target_accuracy_on_inversions(oracle, reconstructions: np.ndarray,
                                  target_label: int) -> float:
    """Percent of reconstructions the target itself classifies as the label."""
    reconstructions = check_matrix(reconstructions, "reconstructions")
    probs = oracle.query(reconstructions, phase="evaluation")
    pred = np.argmax(probs, axis=1)
    return float(np.mean(pred == int(target_label)) * 100.0)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class AttackReport:
    """One attack run's metric row (percent accuracies, fidelity in [0,1])."""

    dataset: str
    model_type: str
    m_global: float
    fidelity: float
    surrogate_accuracy: float
    combined_accuracy: float
    target_accuracy: float
    seed: int = 0
    labels: list = field(default_factory=list)

    def __post_init__(self):
        for name in ("surrogate_accuracy", "combined_accuracy", "target_accuracy"):
            v = getattr(self, name)
            if not (0.0 <= v <= 100.0):
                raise ValidationError(f"{name} must lie in [0, 100], got {v}")
        if not (0.0 <= self.fidelity <= 1.0):
            raise ValidationError(f"fidelity must lie in [0, 1], got {self.fidelity}")


_COLUMNS = ("M_global", "F_S", "A_S", "A_SoG", "A_T")


def _fmt(mean: float, std: float | None, decimals: int) -> str:
    if std is None:
        return f"{mean:.{decimals}f}"
    return f"{mean:.{decimals}f} ± {std:.2f}"


def _aggregate(group: list[AttackReport]) -> dict[str, str]:
    fields = {
        "M_global": ([r.m_global for r in group], 4),
        "F_S": ([r.fidelity for r in group], 4),
        "A_S": ([r.surrogate_accuracy for r in group], 2),
        "A_SoG": ([r.combined_accuracy for r in group], 2),
        "A_T": ([r.target_accuracy for r in group], 2),
    }
    out = {}
    for name, (values, decimals) in fields.items():
        mean = float(np.mean(values))
        std = float(np.std(values, ddof=1)) if len(values) > 1 else None
        out[name] = _fmt(mean, std, decimals)
    return out


def render_report(reports: list[AttackReport]) -> str:
    """Aligned text table grouped by dataset then model type.

    Dispersions are across-seed sample standard deviations; a single run
    gets no ± column.
    """
    if not reports:
        raise ValidationError("render_report needs at least one report")
    groups: dict[tuple[str, str], list[AttackReport]] = {}
    for r in reports:
        groups.setdefault((r.dataset, r.model_type), []).append(r)
    rows = []
    for (dataset, model_type) in sorted(groups):
        agg = _aggregate(groups[(dataset, model_type)])
        rows.append([dataset, model_type] + [agg[c] for c in _COLUMNS])
    header = ["Dataset", "Model Type"] + list(_COLUMNS)
    widths = [max(len(header[i]), *(len(row[i]) for row in rows))
              for i in range(len(header))]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip(),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def report_csv(reports: list[AttackReport]) -> str:
    """Machine-readable per-run rows (no aggregation)."""
    lines = ["dataset,model_type,seed,m_global,fidelity,"
             "surrogate_accuracy,combined_accuracy,target_accuracy"]
    for r in reports:
        lines.append(
            f"{r.dataset},{r.model_type},{r.seed},{r.m_global:.10g},"
            f"{r.fidelity:.10g},{r.surrogate_accuracy:.10g},"
            f"{r.combined_accuracy:.10g},{r.target_accuracy:.10g}"
        )
    return "\n".join(lines) + "\n"
