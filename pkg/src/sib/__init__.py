"""sib: spiking inversion benchmark.

Train ANN and SNN victim classifiers, mount a query-budgeted black-box
generative inversion attack against them through an audited oracle, and
report the comparative metrics.
"""

__version__ = "0.1.0"

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import (BudgetExhaustedError, ConfigError, DataError,
                     DimensionError, SibError, TrainingError, ValidationError)
from .gamin import (AttackConfig, AttackResult, AttackSnapshot,
                    EquilibriumState, GaminAttack, compute_m_global,
                    generator_train_step, invert, load_snapshot, run_attack,
                    save_snapshot, surrogate_train_step, update_k)
from .metrics import (AttackReport, combined_accuracy, fidelity, render_report,
                      report_csv, surrogate_test_accuracy,
                      target_accuracy_on_inversions)
from .numcore import Adam, DenseLayer, Mlp, Rng, softmax, softmax_cross_entropy
from .oracle import Oracle, QueryLedger
from .spike import (LIFParams, LIFState, SnnNet, SnnTrace, SpikeTrain, decode,
                    fast_sigmoid, lif_step, rate_encode, snn_forward, snn_loss,
                    surrogate_grad)
from .victim import (AnnClassifier, SnnClassifier, VictimConfig,
                     assert_matched_architecture, checkpoint_from_estimator,
                     estimator_from_checkpoint, evaluate_accuracy, load_victim,
                     train_victim)
from .dataio import (Dataset, load_mnist, load_orl, read_pgm, stratified_split,
                     write_image_grid, write_pgm)

__all__ = [
    "Adam", "AnnClassifier", "AttackConfig", "AttackReport", "AttackResult",
    "AttackSnapshot", "BudgetExhaustedError", "Checkpoint", "ConfigError",
    "DataError", "Dataset", "DenseLayer", "DimensionError", "EquilibriumState",
    "GaminAttack", "LIFParams", "LIFState", "Mlp", "Oracle", "QueryLedger",
    "Rng", "SibError", "SnnClassifier", "SnnNet", "SnnTrace", "SpikeTrain",
    "TrainingError", "ValidationError", "VictimConfig",
    "assert_matched_architecture", "checkpoint_from_estimator",
    "combined_accuracy", "compute_m_global", "decode", "estimator_from_checkpoint",
    "evaluate_accuracy", "fast_sigmoid", "fidelity", "generator_train_step",
    "invert", "lif_step", "load_checkpoint", "load_mnist", "load_orl",
    "load_snapshot", "load_victim", "rate_encode", "read_pgm", "render_report",
    "report_csv", "run_attack", "save_checkpoint", "save_snapshot",
    "snn_forward", "snn_loss", "softmax", "softmax_cross_entropy",
    "stratified_split", "surrogate_grad", "surrogate_test_accuracy",
    "surrogate_train_step", "target_accuracy_on_inversions", "train_victim",
    "update_k", "write_image_grid", "write_pgm",
]
