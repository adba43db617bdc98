"""Command-line front end: train-target, attack, evaluate, reconstruct.

Runs are driven by a JSON config with sections data / victim / attack /
eval. Every run writes a manifest (config hash, master seed, timings,
artifact paths, ledger totals) so it can be audited and resumed. Exit
codes: 0 ok, 2 config, 3 data, 4 budget, 5 numeric, 1 anything else.
"""

from __future__ import annotations

import argparse
import copy
import difflib
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint
from .dataio import Dataset, load_mnist, load_orl, stratified_split, write_image_grid
from .errors import (BudgetExhaustedError, ConfigError, DataError,
                     DimensionError, SibError, TrainingError, ValidationError)
from .gamin import (AttackConfig, build_surrogate_from, build_generator_from,
                    invert, load_snapshot, run_attack, save_snapshot,
                    write_history_csv)
from .metrics import (AttackReport, combined_accuracy, fidelity, render_report,
                      report_csv, surrogate_test_accuracy,
                      target_accuracy_on_inversions)
from .numcore import Rng
from .oracle import Oracle
from .victim import (VictimConfig, estimator_from_checkpoint, evaluate_accuracy,
                     train_victim)
from .checkpoint import save_checkpoint
from .victim import checkpoint_from_estimator  # noqa: F401  (re-export for scripts)

log = logging.getLogger("sib")

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BUDGET = 4
EXIT_NUMERIC = 5

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "out_dir": "runs",
    "data": {
        "dataset": "mnist",
        "train_images": None,
        "train_labels": None,
        "test_images": None,
        "test_labels": None,
        "root": None,
        "test_per_class": 1,
        "split_seed": 0,
    },
    "victim": {
        "kind": "ann",
        "hidden_dim": 3000,
        "epochs": 10,
        "batch_size": 128,
        "learning_rate": 1e-3,
        "steps": 25,
        "alpha": 0.7,
        "eta": 1.0,
        "surrogate_slope": 40.0,
        "decode_mode": "membrane-sum",
        "early_stop_patience": None,
        "checkpoint": None,
    },
    "attack": {
        "checkpoint": None,
        "labels": [0],
        "batch_size": 64,
        "total_batches": 20_000,
        "budget": 1_280_000,
        "noise_dim": 100,
        "generator_hidden": [512, 1024],
        "surrogate_hidden": [512, 256],
        "learning_rate": 5e-4,
        "beta1": 0.5,
        "beta2": 0.999,
        "lambda_k": 0.001,
        "gamma_k": 0.5,
        "k0": 0.0,
        "m_global_mode": "began",
        "exempt_xs_from_budget": False,
        "snapshot_every": 1,
        "query_log": False,
    },
    "eval": {
        "runs": [],
        "fidelity_batches": 100,
        "fidelity_batch_size": 64,
        "n_inversions": 640,
        "n_reconstructions": 1,
        "grid_cols": 10,
    },
}

_RUN_ENTRY_KEYS = {
    "dataset": None,
    "model_type": None,
    "victim_checkpoint": None,
    "snapshot_dir": None,
    "labels": None,
    "seeds": None,
    "data": None,
}


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

def _collect_unknown_keys(user: dict, defaults: dict, prefix: str,
                          problems: list[str]) -> None:
    for key, value in user.items():
        if key not in defaults:
            hint = difflib.get_close_matches(key, defaults.keys(), n=1)
            suggestion = f"; did you mean {hint[0]!r}?" if hint else ""
            problems.append(f"unknown config key {prefix}{key!r}{suggestion}")
        elif isinstance(value, dict) and isinstance(defaults[key], dict):
            _collect_unknown_keys(value, defaults[key], f"{prefix}{key}.", problems)


def _merge(defaults: dict, user: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str) -> dict:
    """Parse, validate against the schema, and materialize all defaults."""
    try:
        with open(path) as fh:
            user = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}")
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: config root must be an object")
    problems: list[str] = []
    _collect_unknown_keys(user, DEFAULT_CONFIG, "", problems)
    for i, entry in enumerate(user.get("eval", {}).get("runs", []) or []):
        if isinstance(entry, dict):
            _collect_unknown_keys(entry, _RUN_ENTRY_KEYS, f"eval.runs[{i}].", problems)
    if problems:
        raise ConfigError(f"{path}: " + "; ".join(problems))
    return _merge(DEFAULT_CONFIG, user)


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _parse_labels(text: str) -> list[int]:
    labels: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part and not part.startswith("-"):
            lo, hi = part.split("-", 1)
            labels.extend(range(int(lo), int(hi) + 1))
        elif part:
            labels.append(int(part))
    if not labels:
        raise ConfigError(f"could not parse any labels from {text!r}")
    return labels


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

class Manifest:
    def __init__(self, command: str, config: dict, out_dir: str):
        self.data = {
            "command": command,
            "code_version": __version__,
            "config_hash": config_hash(config),
            "config": config,
            "master_seed": config["seed"],
            "timings": {},
            "artifacts": [],
            "ledger": {},
        }
        self.path = os.path.join(out_dir, f"manifest-{command}.json")

    def add_artifact(self, path: str) -> None:
        if path not in self.data["artifacts"]:
            self.data["artifacts"].append(path)

    def write(self) -> None:
        tmp = self.path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, self.path)


class _Stage:
    """Context manager recording wall time per pipeline stage."""

    def __init__(self, manifest: Manifest, name: str):
        self.manifest = manifest
        self.name = name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.manifest.data["timings"][self.name] = round(
            time.perf_counter() - self.t0, 3
        )
        return False


# ---------------------------------------------------------------------------
# dataset resolution
# ---------------------------------------------------------------------------

def _require(section: dict, key: str, what: str) -> str:
    value = section.get(key)
    if not value:
        raise ConfigError(f"data.{key} is required for {what}")
    return value


def load_datasets(data_cfg: dict) -> tuple[Dataset, Dataset | None]:
    """Resolve the config's data section to (train, test) datasets."""
    name = data_cfg["dataset"]
    if name == "mnist":
        train = load_mnist(_require(data_cfg, "train_images", "mnist"),
                           _require(data_cfg, "train_labels", "mnist"))
        test = None
        if data_cfg.get("test_images"):
            test = load_mnist(data_cfg["test_images"],
                              _require(data_cfg, "test_labels", "mnist test"))
        return train, test
    if name == "orl":
        full = load_orl(_require(data_cfg, "root", "orl"))
        return stratified_split(full, data_cfg["test_per_class"],
                                data_cfg["split_seed"])
    raise ConfigError(f"unknown dataset {data_cfg['dataset']!r}; use mnist or orl")


def _preflight_file(path: str | None, what: str) -> str:
    if not path:
        raise ConfigError(f"{what} path is not configured")
    if not os.path.isfile(path):
        raise DataError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train_target(config: dict) -> int:
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    manifest = Manifest("train-target", config, out_dir)
    vcfg_dict = dict(config["victim"])
    vcfg_dict.pop("checkpoint", None)
    vcfg = VictimConfig(seed=config["seed"], **vcfg_dict)
    with _Stage(manifest, "load-data"):
        train, test = load_datasets(config["data"])
    log.info("training %s victim on %d samples", vcfg.kind, len(train))
    with _Stage(manifest, "train"):
        ckpt = train_victim(vcfg, train, test)
    path = config["victim"]["checkpoint"] or os.path.join(
        out_dir, f"victim-{config['data']['dataset']}-{vcfg.kind}-seed{config['seed']}.ckpt"
    )
    save_checkpoint(ckpt, path)
    manifest.add_artifact(path)
    acc = ckpt.metadata.get("final_test_accuracy")
    if acc is not None:
        print(f"test_accuracy {acc:.4f}")
    else:
        print("test_accuracy n/a (no test set configured)")
    manifest.write()
    return EXIT_OK


def _attack_one_label(args: tuple) -> dict:
    """Worker for one label's attack; must stay picklable for --parallel."""
    config, label, ckpt_path, out_dir = args
    victim = estimator_from_checkpoint(load_checkpoint(ckpt_path))
    acfg_dict = dict(config["attack"])
    budget = acfg_dict.pop("budget")
    acfg_dict.pop("checkpoint", None)
    query_log = acfg_dict.pop("query_log", False)
    seed = config["seed"]
    log_path = (os.path.join(out_dir, f"queries-seed{seed}-label{label}.csv")
                if query_log else None)
    oracle = Oracle(victim, budget=budget, log_path=log_path)
    acfg = AttackConfig(target_label=label, seed=seed, **{
        k: (tuple(v) if isinstance(v, list) else v) for k, v in acfg_dict.items()
        if k != "labels"
    })
    result = run_attack(acfg, oracle)
    snap_path = os.path.join(out_dir, f"snapshot-seed{seed}-label{label}.ckpt")
    hist_path = os.path.join(out_dir, f"history-seed{seed}-label{label}.csv")
    save_snapshot(result, snap_path)
    write_history_csv(result.history, hist_path)
    return {
        "label": label,
        "snapshot": snap_path,
        "history": hist_path,
        "batches_run": result.batches_run,
        "budget_exhausted": result.budget_exhausted,
        "queries_used": result.queries_used,
        "queries_unbilled": result.queries_unbilled,
        "m_global": result.snapshot.m_global,
    }


def cmd_attack(config: dict, parallel: int = 1, resume: bool = False) -> int:
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    manifest = Manifest("attack", config, out_dir)
    ckpt_path = _preflight_file(config["attack"]["checkpoint"], "victim checkpoint")
    labels = list(config["attack"]["labels"])
    seed = config["seed"]

    done: set[int] = set()
    if resume and os.path.isfile(manifest.path):
        with open(manifest.path) as fh:
            previous = json.load(fh)
        manifest.data["ledger"] = previous.get("ledger", {})
        for entry in previous.get("ledger", {}).get("labels", []):
            if os.path.isfile(entry.get("snapshot", "")):
                done.add(entry["label"])
                manifest.add_artifact(entry["snapshot"])
                manifest.add_artifact(entry["history"])
        log.info("resume: skipping labels %s", sorted(done))

    todo = [lab for lab in labels if lab not in done]
    results = list(manifest.data["ledger"].get("labels", []))
    with _Stage(manifest, "attack"):
        if parallel > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=parallel) as pool:
                for res in pool.map(
                    _attack_one_label,
                    [(config, lab, ckpt_path, out_dir) for lab in todo],
                ):
                    results.append(res)
        else:
            for lab in todo:
                try:
                    results.append(_attack_one_label((config, lab, ckpt_path, out_dir)))
                except SibError as exc:
                    raise type(exc)(f"label {lab}: {exc}", *getattr(exc, "args", [])[1:])
    results.sort(key=lambda r: r["label"])
    for res in results:
        manifest.add_artifact(res["snapshot"])
        manifest.add_artifact(res["history"])
        print(
            f"label {res['label']}: batches={res['batches_run']} "
            f"queries={res['queries_used']} best_m_global={res['m_global']:.6g}"
        )
    manifest.data["ledger"] = {
        "labels": results,
        "total_queries": sum(r["queries_used"] for r in results),
        "total_unbilled": sum(r["queries_unbilled"] for r in results),
    }
    manifest.write()
    return EXIT_OK


def _resolve_eval_runs(config: dict) -> list[dict]:
    runs = config["eval"]["runs"]
    if not runs:
        runs = [{}]
    resolved = []
    for entry in runs:
        entry = dict(entry or {})
        run = {
            "dataset": entry.get("dataset") or config["data"]["dataset"],
            "model_type": entry.get("model_type"),
            "victim_checkpoint": entry.get("victim_checkpoint")
                                 or config["attack"]["checkpoint"],
            "snapshot_dir": entry.get("snapshot_dir") or config["out_dir"],
            "labels": entry.get("labels") or config["attack"]["labels"],
            "seeds": entry.get("seeds") or [config["seed"]],
            "data": entry.get("data") or config["data"],
        }
        resolved.append(run)
    return resolved


def cmd_evaluate(config: dict) -> int:
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    manifest = Manifest("evaluate", config, out_dir)
    ecfg = config["eval"]
    reports: list[AttackReport] = []
    with _Stage(manifest, "evaluate"):
        for run in _resolve_eval_runs(config):
            ckpt_path = _preflight_file(run["victim_checkpoint"], "victim checkpoint")
            victim = estimator_from_checkpoint(load_checkpoint(ckpt_path))
            model_type = run["model_type"] or (
                "SNN" if type(victim).__name__.startswith("Snn") else "ANN"
            )
            _, test = load_datasets(run["data"])
            oracle = Oracle(victim, budget=None)
            for seed in run["seeds"]:
                per_label = {"m": [], "comb": [], "at": []}
                surrogate = None
                fid = None
                for label in run["labels"]:
                    snap_path = os.path.join(
                        run["snapshot_dir"], f"snapshot-seed{seed}-label{label}.ckpt"
                    )
                    if not os.path.isfile(snap_path):
                        raise DataError(
                            f"label {label}: snapshot not found: {snap_path}"
                        )
                    snapshot, info = load_snapshot(snap_path)
                    generator = build_generator_from(snapshot)
                    surrogate = build_surrogate_from(snapshot)
                    rng = Rng(seed)
                    per_label["m"].append(snapshot.m_global)
                    per_label["comb"].append(combined_accuracy(
                        generator, surrogate, label,
                        n=ecfg["n_inversions"], rng=rng.stream("comb", label),
                    ))
                    recon = invert(snapshot, ecfg["n_inversions"],
                                   rng.stream("recon", label))
                    per_label["at"].append(target_accuracy_on_inversions(
                        oracle, recon, label,
                    ))
                # fidelity and A_S describe the surrogate; use the last label's
                # surrogate (every label trains its own) and report the mean of
                # per-label values for the rest
                fid = fidelity(oracle, surrogate,
                               n_batches=ecfg["fidelity_batches"],
                               batch_size=ecfg["fidelity_batch_size"],
                               rng=Rng(seed).stream("fidelity"))
                a_s = (surrogate_test_accuracy(surrogate, test)
                       if test is not None else 0.0)
                reports.append(AttackReport(
                    dataset=run["dataset"],
                    model_type=model_type,
                    m_global=float(np.mean(per_label["m"])),
                    fidelity=fid,
                    surrogate_accuracy=a_s,
                    combined_accuracy=float(np.mean(per_label["comb"])),
                    target_accuracy=float(np.mean(per_label["at"])),
                    seed=seed,
                    labels=list(run["labels"]),
                ))
    table = render_report(reports)
    print(table, end="")
    table_path = os.path.join(out_dir, "report.txt")
    csv_path = os.path.join(out_dir, "report.csv")
    with open(table_path, "w") as fh:
        fh.write(table)
    with open(csv_path, "w") as fh:
        fh.write(report_csv(reports))
    manifest.add_artifact(table_path)
    manifest.add_artifact(csv_path)
    manifest.write()
    return EXIT_OK


def cmd_reconstruct(config: dict) -> int:
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    manifest = Manifest("reconstruct", config, out_dir)
    ecfg = config["eval"]
    labels = list(config["attack"]["labels"])
    seed = config["seed"]
    n_samples = ecfg["n_reconstructions"]

    originals = None
    width = height = None
    data_cfg = config["data"]
    has_data = (data_cfg.get("train_images") or data_cfg.get("root"))
    with _Stage(manifest, "reconstruct"):
        if has_data:
            train, _ = load_datasets(data_cfg)
            prov = train.provenance
            if "rows" in prov:
                height, width = prov["rows"], prov["cols"]
            else:
                from .dataio import ORL_HEIGHT, ORL_WIDTH
                height, width = ORL_HEIGHT, ORL_WIDTH
            originals = {}
            for label in labels:
                members = np.flatnonzero(train.labels == label)
                if len(members):
                    originals[label] = train.images[members[0]]
        rows = []
        for label in labels:
            snap_path = os.path.join(
                out_dir, f"snapshot-seed{seed}-label{label}.ckpt"
            )
            _preflight_file(snap_path, f"label {label} snapshot")
            snapshot, _ = load_snapshot(snap_path)
            recon = invert(snapshot, n_samples, Rng(seed).stream("recon", label))
            if width is None:
                d = recon.shape[1]
                side = int(round(d ** 0.5))
                if side * side != d:
                    raise ConfigError(
                        f"cannot infer image shape for dim {d}; configure data"
                    )
                width = height = side
            rows.append((label, recon))

        if originals is not None:
            # originals on the top row, one reconstruction per label below
            images = np.stack(
                [originals[lab] for lab, _ in rows] + [rec[0] for _, rec in rows]
            )
            grid_cols = len(rows)
        else:
            images = np.concatenate([rec for _, rec in rows], axis=0)
            grid_cols = n_samples if n_samples > 1 else ecfg["grid_cols"]
        path = os.path.join(out_dir, f"reconstructions-seed{seed}.pgm")
        write_image_grid(np.clip(images, 0.0, 1.0), width, height, grid_cols, path)
        manifest.add_artifact(path)
        print(f"wrote {path}")
    manifest.write()
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sib",
        description="Train victim classifiers and run the query-budgeted "
                    "black-box inversion benchmark against them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train-target", "attack", "evaluate", "reconstruct"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--out-dir", default=None, help="override output directory")
        p.add_argument("--labels", default=None,
                       help="override attack labels, e.g. 0,3,7 or 0-9")
        if name == "attack":
            p.add_argument("--parallel", type=int, default=1,
                           help="number of parallel label processes")
            p.add_argument("--resume", action="store_true",
                           help="skip labels already recorded in the manifest")
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("SIB_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config["seed"] = args.seed
        if args.out_dir is not None:
            config["out_dir"] = args.out_dir
        if args.labels is not None:
            config["attack"]["labels"] = _parse_labels(args.labels)
        if args.command == "train-target":
            return cmd_train_target(config)
        if args.command == "attack":
            return cmd_attack(config, parallel=args.parallel, resume=args.resume)
        if args.command == "evaluate":
            return cmd_evaluate(config)
        return cmd_reconstruct(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BudgetExhaustedError as exc:
        print(f"budget error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (TrainingError, ValidationError, DimensionError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SibError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
