"""The black-box boundary around a victim.

Attack code sees exactly one thing: probability vectors from query().
Weights, gradients, spike traces never cross this line. Every query is
counted against a hard budget before the victim runs, so a rejected batch
leaves the ledger untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExhaustedError, ValidationError
from .validation import check_matrix, check_unit_range

DEFAULT_BUDGET = 1_280_000


@dataclass
class QueryLedger:
    """Monotone query accountant with per-phase tallies."""

    budget: int = DEFAULT_BUDGET
    queries_used: int = 0
    phase_tallies: dict[str, int] = field(default_factory=dict)

    def remaining(self) -> int:
        return self.budget - self.queries_used

    def charge(self, rows: int, phase: str) -> None:
        if rows > self.remaining():
            raise BudgetExhaustedError(
                f"budget cannot cover {rows} more queries "
                f"({self.queries_used}/{self.budget} used)",
                queries_used=self.queries_used,
                budget=self.budget,
            )
        self.queries_used += rows
        self.phase_tallies[phase] = self.phase_tallies.get(phase, 0) + rows


class Oracle:
    """Budgeted query interface over anything with oracle_probabilities().

    The wrapped model is called as model.oracle_probabilities(X, start_index)
    where start_index is a monotone per-row query counter; the SNN victim
    keys its stochastic encoding streams off it so runs replay exactly.
    """

    def __init__(self, model, budget: int | None = DEFAULT_BUDGET,
                 input_dim: int | None = None, num_classes: int | None = None,
                 log_path: str | None = None):
        self._model = model
        if budget is None:
            budget = np.iinfo(np.int64).max
        self.ledger = QueryLedger(budget=int(budget))
        self.input_dim = input_dim if input_dim is not None else getattr(
            model, "n_features_in_", None)
        if num_classes is not None:
            self.num_classes = num_classes
        else:
            classes = getattr(model, "classes_", None)
            self.num_classes = None if classes is None else len(classes)
        self._query_index = 0
        self._batch_index = 0
        self._log_path = log_path
        if log_path:
            with open(log_path, "w") as fh:
                fh.write("index,size,phase\n")

    def query(self, batch: np.ndarray, phase: str = "surrogate") -> np.ndarray:
        """Return one probability row per input row; rows count against budget."""
        batch = check_matrix(batch, "batch")
        if self.input_dim is not None and batch.shape[1] != self.input_dim:
            raise ValidationError(
                f"oracle expects {self.input_dim} features, got {batch.shape[1]}"
            )
        check_unit_range(batch, "batch")
        rows = batch.shape[0]
        self.ledger.charge(rows, phase)          # raises before the victim runs
        probs = self._model.oracle_probabilities(batch, start_index=self._query_index)
        self._query_index += rows
        if self._log_path:
            with open(self._log_path, "a") as fh:
                fh.write(f"{self._batch_index},{rows},{phase}\n")
        self._batch_index += 1
        return probs

    def remaining(self) -> int:
        return self.ledger.remaining()

    def clone_unbudgeted(self) -> "Oracle":
        """Fresh unlimited oracle over the same victim, for evaluation only."""
        return Oracle(self._model, budget=None, input_dim=self.input_dim,
                      num_classes=self.num_classes)
