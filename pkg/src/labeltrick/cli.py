"""Command-line entry point: ``labeltrick {run,verify,sweep-alpha,ingest}``.

Configuration is a flat JSON object (see ``DEFAULT_CONFIG``); any key can
be overridden with ``--key=value`` where the value is parsed as JSON when
possible and kept as a string otherwise.

Exit codes: 0 success, 1 usage or configuration error, 2 verification
failure, 3 numerical-integrity error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .data_io import Dataset, ingest_raw, load_dataset, make_sbm, write_metrics_csv
from .errors import DenseModeRequired, EnumerationTooLarge, NumericalIntegrityError
from .objectives import softmax
from .predictors import cs_vanilla_predict, lp_predict, self_excluded_labels
from .propagation import closed_form_operator, series_operator
from .training import (TrainConfig, accuracy, fit_feature_baseline, fit_linear_model, fit_trainable_cs,
                       fit_trainable_lp, save_checkpoint)
from .verify import SUITES, run_suite, write_report

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "LABELTRICK_THREADS"
METHODS = ("lp", "selp", "trainable_lp", "linear", "linear_trick_s", "linear_trick_d", "cs", "trainable_cs")

DEFAULT_CONFIG = {
    # dataset: "sbm" for the synthetic generator, otherwise a dataset directory
    "dataset": "sbm",
    "n_per_block": 100,
    "p_in": 0.1,
    "p_out": 0.01,
    "self_loops": False,
    # propagation operator
    "operator": "closed_form",
    "lambda": 0.6,
    "steps": 50,
    "method": "lp",
    # training
    "trick": "deterministic",
    "lr": 0.01,
    "epochs": 200,
    "weight_decay": 0.0,
    "alpha": 0.5,
    "loss": "cross_entropy",
    "early_stop_patience": 0,
    "resample_every": 1,
    # correct & smooth
    "cs_lambda_correct": 0.8,
    "cs_splits": 10,
    "cs_gamma": "autoscale",
    "base_temperature": 1.0,
    "base_bias": 0.0,
    # output
    "output": "metrics.csv",
    "checkpoint": None,
    "run_id": "run",
    "seed": 0,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# config -----------------------------------------------------------------------------

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(path: Optional[str], overrides: list) -> dict:
    cfg = dict(DEFAULT_CONFIG)
    if path:
        try:
            loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"config file {path} not found") from None
        except json.JSONDecodeError as e:
            raise UsageError(f"config file {path}: {e}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        cfg.update(loaded)
    for item in overrides:
        if not item.startswith("--") or "=" not in item:
            raise UsageError(f"unrecognized argument {item!r}; overrides take the form --key=value")
        key, value = item[2:].split("=", 1)
        cfg[key.replace("-", "_")] = _parse_value(value)
    unknown = sorted(set(cfg) - set(DEFAULT_CONFIG))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    if cfg["method"] not in METHODS:
        raise UsageError(f"unknown method {cfg['method']!r}; choose from {', '.join(METHODS)}")
    if cfg["dataset"] != "sbm" and not Path(cfg["dataset"]).is_dir():
        raise UsageError(f"dataset directory {cfg['dataset']} does not exist")
    return cfg


def train_config(cfg: dict, trick: Optional[str] = None) -> TrainConfig:
    try:
        return TrainConfig(lr=float(cfg["lr"]), epochs=int(cfg["epochs"]),
                           weight_decay=float(cfg["weight_decay"]), alpha=float(cfg["alpha"]),
                           trick=trick or cfg["trick"], seed=int(cfg["seed"]), loss=cfg["loss"],
                           early_stop_patience=int(cfg["early_stop_patience"]),
                           resample_every=int(cfg["resample_every"]))
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid training config: {e}") from None


def load_data(cfg: dict) -> Dataset:
    if cfg["dataset"] == "sbm":
        return make_sbm(int(cfg["n_per_block"]), float(cfg["p_in"]), float(cfg["p_out"]), int(cfg["seed"]))
    return load_dataset(cfg["dataset"], self_loops=bool(cfg["self_loops"]))


def build_operator(ds: Dataset, cfg: dict, lam: Optional[float] = None):
    s = ds.graph.normalized_adjacency
    lam = float(cfg["lambda"] if lam is None else lam)
    if cfg["operator"] == "closed_form":
        return closed_form_operator(s, lam)
    if cfg["operator"] == "series":
        return series_operator(s, lam, int(cfg["steps"]))
    raise UsageError(f"unknown operator {cfg['operator']!r}; use closed_form or series")


def base_predictions(ds: Dataset, cfg: dict) -> np.ndarray:
    """Feature-only base model, optionally miscalibrated by a temperature and a class-0 bias."""
    if ds.features is None:
        raise UsageError("C&S needs node features for its base model")
    probs = fit_feature_baseline(ds.features, ds.labels)
    logits = np.log(np.clip(probs, 1e-300, None)) / float(cfg["base_temperature"])
    logits[:, 0] += float(cfg["base_bias"])
    return softmax(logits)


# commands ----------------------------------------------------------------------------------

def run_method(cfg: dict, ds: Optional[Dataset] = None) -> dict:
    """Train/evaluate one method; returns accuracies, per-node training loss and weights (if any)."""
    ds = ds or load_data(cfg)
    labels, val, test = ds.labels, ds.val_idx, ds.test_idx
    op = build_operator(ds, cfg)
    method = cfg["method"]
    weights, curve = None, []
    if method in ("lp", "selp"):
        pred = lp_predict(op, labels) if method == "lp" else self_excluded_labels(op, labels)
        val_acc, test_acc = accuracy(pred, labels, val), accuracy(pred, labels, test)
    elif method in ("cs", "trainable_cs"):
        p_c = build_operator(ds, cfg, cfg["cs_lambda_correct"])
        base = base_predictions(ds, cfg)
        if method == "cs":
            pred = cs_vanilla_predict(p_c, op, base, labels, cfg["cs_gamma"])
            val_acc, test_acc = accuracy(pred, labels, val), accuracy(pred, labels, test)
        else:
            res = fit_trainable_cs(p_c, op, base, labels, train_config(cfg, "stochastic"), val, test,
                                   int(cfg["cs_splits"]), cfg["cs_gamma"])
            weights, curve, val_acc, test_acc = res.weights, res.train_curve, res.val_accuracy, res.test_accuracy
    else:
        if method == "trainable_lp":
            res = fit_trainable_lp(op, labels, train_config(cfg), val, test)
        else:
            trick = {"linear": "none", "linear_trick_s": "stochastic", "linear_trick_d": "deterministic"}[method]
            res = fit_linear_model(op, ds.features, labels, train_config(cfg, trick), val, test)
        weights, curve, val_acc, test_acc = res.weights, res.train_curve, res.val_accuracy, res.test_accuracy
    loss = curve[-1] / max(1, labels.m) if curve else float("nan")
    return {"val": val_acc, "test": test_acc, "loss": loss, "weights": weights}


def _sidecar(output: Path, cfg: dict) -> None:
    output.with_name(output.name + ".config.json").write_text(
        json.dumps(cfg, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def cmd_run(cfg: dict) -> int:
    out = run_method(cfg)
    rows = [{"run_id": cfg["run_id"], "method": cfg["method"], "alpha": cfg["alpha"], "seed": cfg["seed"],
             "split": split, "accuracy": out[split], "loss": out["loss"]} for split in ("val", "test")]
    output = Path(cfg["output"])
    write_metrics_csv(output, rows)
    _sidecar(output, cfg)
    if out["weights"] is not None:
        ckpt = Path(cfg["checkpoint"]) if cfg["checkpoint"] else output.with_suffix(".ckpt.json")
        tc = None if cfg["method"] == "trainable_cs" else train_config(cfg, _method_trick(cfg))
        save_checkpoint(ckpt, out["weights"], tc, seed=int(cfg["seed"]))
    print(f"method={cfg['method']} val_acc={out['val']:.6f} test_acc={out['test']:.6f}")
    return EXIT_OK


def _method_trick(cfg):
    return {"linear": "none", "linear_trick_s": "stochastic", "linear_trick_d": "deterministic"}.get(
        cfg["method"], cfg["trick"])


def parse_alphas(text: str) -> list:
    try:
        alphas = sorted(float(a) for a in text.split(",") if a.strip())
    except ValueError:
        raise UsageError(f"bad alpha list {text!r}") from None
    if not alphas:
        raise UsageError("empty alpha list")
    bad = [a for a in alphas if not 0.0 < a < 1.0]
    if bad:
        raise UsageError(f"alpha must lie in (0, 1), got {bad}")
    return alphas


def cmd_sweep_alpha(cfg: dict, alphas: list) -> int:
    ds = load_data(cfg)
    rows = []
    for a in alphas:
        run = dict(cfg, alpha=a)
        out = run_method(run, ds)
        rows.append({"run_id": cfg["run_id"], "method": cfg["method"], "alpha": a, "seed": cfg["seed"],
                     "split": "val", "accuracy": out["val"], "loss": out["loss"]})
        print(f"alpha={a:.6g} val_acc={out['val']:.6f} test_acc={out['test']:.6f}")
    output = Path(cfg["output"])
    write_metrics_csv(output, rows)
    _sidecar(output, dict(cfg, alphas=alphas))
    return EXIT_OK


def cmd_verify(suite: str, n: Optional[int], seed: int, report_path: Optional[str]) -> int:
    reports = run_suite(suite, n, seed)
    path = Path(report_path or f"verify-{suite}-report.txt")
    write_report(path, reports)
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.suite}: {status} instances={r.instances} max_gap={r.max_rel_gap:.3e} "
              f"failures={len(r.failures)} time={r.wall_time:.2f}s")
        if r.suite == "thm3":
            for note in r.notes:
                print(f"  {note}")
    print(f"report: {path}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VERIFY


def cmd_ingest(args) -> int:
    ds = ingest_raw(args.edges, args.out, args.labels, args.features, args.seed)
    print(f"ingested n={ds.graph.n} edges={ds.graph.num_edges} classes={ds.labels.c} "
          f"train={ds.labels.m} val={len(ds.val_idx)} test={len(ds.test_idx)} sha256={ds.provenance}")
    return EXIT_OK


# entry point -------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="labeltrick", description="Label propagation and the label trick.")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"BLAS/OpenMP threads (default: ${THREADS_ENV} or library default); "
                             "1 gives bitwise-reproducible output")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="train/evaluate one method; extra --key=value pairs override the config")
    run.add_argument("--config", help="JSON config file")
    sweep = sub.add_parser("sweep-alpha", help="rerun the configured method for each alpha")
    sweep.add_argument("--config", help="JSON config file")
    sweep.add_argument("--alphas", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
                       help="comma-separated values in (0, 1)")
    ver = sub.add_parser("verify", help="run a verification suite")
    ver.add_argument("suite", choices=sorted(SUITES) + ["all"])
    ver.add_argument("--n", type=int, default=None, help="instances per suite (default: suite default)")
    ver.add_argument("--seed", type=int, default=0, help="master seed")
    ver.add_argument("--report", default=None, help="report path (default verify-<suite>-report.txt)")
    ing = sub.add_parser("ingest", help="validate a raw dataset, remap ids to 0..n-1, write a dataset directory")
    ing.add_argument("--edges", required=True)
    ing.add_argument("--labels", required=True, help="CSV with header node_id,label")
    ing.add_argument("--features", default=None, help="CSV with header node_id,c0,...")
    ing.add_argument("--out", required=True)
    ing.add_argument("--seed", type=int, default=0)
    return parser


def _dispatch(args, extra) -> int:
    if args.command in ("verify", "ingest") and extra:
        raise UsageError(f"unrecognized arguments: {' '.join(extra)}")
    if args.command == "verify":
        if args.n is not None and args.n < 0:
            raise UsageError("--n must be non-negative")
        return cmd_verify(args.suite, args.n, args.seed, args.report)
    if args.command == "ingest":
        return cmd_ingest(args)
    cfg = resolve_config(args.config, extra)
    if args.command == "run":
        return cmd_run(cfg)
    return cmd_sweep_alpha(cfg, parse_alphas(args.alphas))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        threads = args.threads
        if threads is None and os.environ.get(THREADS_ENV):
            threads = int(os.environ[THREADS_ENV])
        if threads is not None and threads < 1:
            raise UsageError("--threads must be at least 1")
        if threads is None:
            return _dispatch(args, extra)
        with threadpool_limits(limits=threads):
            return _dispatch(args, extra)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalIntegrityError as e:
        print(f"numerical integrity error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FileNotFoundError, DenseModeRequired, EnumerationTooLarge) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
