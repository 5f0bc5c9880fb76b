"""Command-line front end: training, evaluation, and the diagnostic suites.

Every option can also come from a flat JSON config file (--config); explicit
flags win over config values, which win over built-in defaults.  All CSV
output is UTF-8 with deterministic float formatting, so identical
configuration and seed produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from ..operators import SamplingConfig
from .metrics import calibration_report, pearson
from .model import MLPModel
from .suites import distcheck_suite, gradcheck_suite, variance_compare
from .tasks import SPLITS, TASK_KINDS, SyntheticTask
from .training import LOSSES, RunConfig, evaluate, train

__all__ = ["main"]


# ---------------------------------------------------------------------------
# Formatting


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def write_csv(path: str, header: list[str], rows: list[tuple]) -> None:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def format_table(header: list[str], rows: list[tuple]) -> str:
    cells = [[_cell(v) for v in row] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in cells:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Config handling


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise SystemExit(f"config file {path} must hold a flat JSON object")
    return data


def _merge(args: argparse.Namespace, config: dict, defaults: dict) -> dict:
    """flag > config file > default, with unknown config keys rejected."""
    merged = dict(defaults)
    unknown = set(config) - set(defaults)
    if unknown:
        raise SystemExit(f"unknown config keys: {sorted(unknown)}")
    merged.update(config)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


_TRAIN_DEFAULTS = {
    "task": "signal1d",
    "task_size": None,
    "task_noise": 0.5,
    "train_count": 256,
    "val_count": 64,
    "test_count": 128,
    "loss": "samp",
    "basis": "triangular",
    "num_samples": 5,
    "tau_start": 1.0,
    "tau_end": 0.1,
    "anneal": "exponential",
    "distance": "l1",
    "sigma_t_sq": 4.0,
    "reg_weight": None,
    "epochs": 30,
    "batch": 16,
    "lr": 0.05,
    "lr_schedule": "cosine",
    "hidden": 64,
    "seed": 0,
    "out": "history.csv",
    "model_out": None,
}


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config file; flags override its values")
    p.add_argument("--task", choices=TASK_KINDS)
    p.add_argument("--task-size", type=int)
    p.add_argument("--task-noise", type=float)
    p.add_argument("--train-count", type=int)
    p.add_argument("--val-count", type=int)
    p.add_argument("--test-count", type=int)
    p.add_argument("--loss", choices=LOSSES)
    p.add_argument("--basis", choices=("uniform", "triangular", "gaussian"))
    p.add_argument("--num-samples", type=int)
    p.add_argument("--tau-start", type=float)
    p.add_argument("--tau-end", type=float)
    p.add_argument("--anneal", choices=("exponential", "linear"))
    p.add_argument("--distance", choices=("l1", "l2-squared"))
    p.add_argument("--sigma-t-sq", type=float)
    p.add_argument("--reg-weight", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-schedule", choices=("constant", "cosine"))
    p.add_argument("--hidden", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--model-out")


def _run_config_from(opts: dict) -> RunConfig:
    task = SyntheticTask(
        kind=opts["task"],
        size=opts["task_size"],
        noise=opts["task_noise"],
        train_count=opts["train_count"],
        val_count=opts["val_count"],
        test_count=opts["test_count"],
        seed=opts["seed"],
    )
    sampling = SamplingConfig(
        num_samples=opts["num_samples"],
        tau_start=opts["tau_start"],
        tau_end=opts["tau_end"],
        anneal=opts["anneal"],
        distance=opts["distance"],
    )
    return RunConfig(
        task=task,
        loss=opts["loss"],
        basis=opts["basis"],
        sampling=sampling,
        sigma_t_sq=opts["sigma_t_sq"],
        reg_weight=opts["reg_weight"],
        lr=opts["lr"],
        lr_schedule=opts["lr_schedule"],
        epochs=opts["epochs"],
        batch_size=opts["batch"],
        hidden_dim=opts["hidden"],
        seed=opts["seed"],
        out_path=opts["out"],
    )


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_train(args) -> int:
    opts = _merge(args, _load_config(args.config), _TRAIN_DEFAULTS)
    config = _run_config_from(opts)
    model, history = train(config)
    rows = [(h.epoch, h.loss, h.val_mean_err, h.tau) for h in history]
    write_csv(opts["out"], ["epoch", "loss", "val_mean_err", "tau"], rows)
    print(format_table(["epoch", "loss", "val_mean_err", "tau"], rows[-5:]))
    print(f"history written to {opts['out']}")
    if opts["model_out"]:
        _ensure_parent(opts["model_out"])
        model.save(opts["model_out"])
        _save_run_meta(opts["model_out"], opts)
        print(f"model written to {opts['model_out']}")
    return 0


def _save_run_meta(model_path: str, opts: dict) -> None:
    meta_path = model_path + ".json"
    keep = {k: opts[k] for k in _TRAIN_DEFAULTS}
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(keep, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_eval(args) -> int:
    file_config = _load_config(args.config)
    opts = _merge(args, file_config, dict(_TRAIN_DEFAULTS, split="test", out="eval.csv"))
    # Task identity defaults to what the model was trained on.
    try:
        with open(args.model + ".json", "r", encoding="utf-8") as fh:
            saved = json.load(fh)
        for key in ("task", "task_size", "task_noise", "train_count", "val_count", "test_count", "seed"):
            if getattr(args, key, None) is None and key not in file_config:
                opts[key] = saved[key]
    except FileNotFoundError:
        pass
    task = SyntheticTask(
        kind=opts["task"],
        size=opts["task_size"],
        noise=opts["task_noise"],
        train_count=opts["train_count"],
        val_count=opts["val_count"],
        test_count=opts["test_count"],
        seed=opts["seed"],
    )
    model = MLPModel.load(args.model)
    records, summary = evaluate(model, task, split=opts["split"])
    ndim = records[0].pred.shape[0]
    header = (
        ["idx"]
        + [f"pred_{d}" for d in range(ndim)]
        + [f"gt_{d}" for d in range(ndim)]
        + ["peak", "err"]
    )
    rows = [
        (r.index, *r.pred.tolist(), *r.target.tolist(), r.peak, r.error)
        for r in records
    ]
    write_csv(opts["out"], header, rows)
    cal = calibration_report(records)
    print(
        format_table(
            ["count", "mean_err", "median_err", "within_one_cell", "calibration_r"],
            [(summary.count, summary.mean_error, summary.median_error,
              summary.within_one_cell, "undefined" if cal.r is None else cal.r)],
        )
    )
    print(f"records written to {opts['out']}")
    return 0


def _cmd_calibrate(args) -> int:
    with open(args.records, "r", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        peaks, errors = [], []
        for row in reader:
            peaks.append(float(row["peak"]))
            errors.append(float(row["err"]))
    if len(peaks) < 2:
        raise SystemExit("need at least two records to correlate")
    r = pearson(peaks, [-e for e in errors])
    rows = [("calibration_r", "undefined" if r is None else r), ("count", len(peaks))]
    print(format_table(["metric", "value"], rows))
    if args.out:
        write_csv(args.out, ["metric", "value"], rows)
        print(f"report written to {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    report = gradcheck_suite(seeds=args.seeds if args.seeds else 20)
    header = ["loss", "basis", "ndim", "seed", "max_rel_error", "passed"]
    rows = [(r.loss, r.basis, r.ndim, r.seed, r.max_rel_error, r.passed) for r in report.rows]
    if args.out:
        write_csv(args.out, header, rows)
        print(f"rows written to {args.out}")
    failing = [r for r in rows if not r[5]]
    show = failing[:10] if failing else sorted(rows, key=lambda r: -r[4])[:5]
    print(format_table(header, show))
    print(f"{len(rows)} checks, worst rel error {report.worst!r}")
    print("gradcheck: PASS" if report.passed else "gradcheck: FAIL")
    return 0 if report.passed else 1


def _cmd_distcheck(args) -> int:
    kwargs = {}
    if args.maps:
        kwargs["num_maps"] = args.maps
    if args.draws:
        kwargs["draws"] = args.draws
    if args.seed is not None:
        kwargs["seed"] = args.seed
    report = distcheck_suite(**kwargs)
    ref_header = ["map", "basis", "ks", "ks_crit", "ks_passed", "mean_gap", "var_gap"]
    ref_rows = [
        (r.map_index, r.basis, r.ks, r.ks_crit, r.ks_passed, r.mean_gap, r.var_gap)
        for r in report.reference
    ]
    rel_header = ["map", "basis", "freq_gap", "freq_passed", "ks_sharp", "ks_smooth", "ordered"]
    rel_rows = [
        (r.map_index, r.basis, r.freq_gap, r.freq_passed, r.ks_sharp, r.ks_smooth, r.ordered)
        for r in report.relaxed
    ]
    if args.out:
        write_csv(args.out, ref_header, ref_rows)
        rel_path = args.out.replace(".csv", "") + "_relaxed.csv"
        write_csv(rel_path, rel_header, rel_rows)
        print(f"rows written to {args.out} and {rel_path}")
    print(format_table(ref_header, ref_rows[:6]))
    print(format_table(rel_header, rel_rows[:6]))
    print(f"{len(ref_rows)} reference rows, {len(rel_rows)} relaxed rows, {report.draws} draws each")
    print("distcheck: PASS" if report.passed else "distcheck: FAIL")
    return 0 if report.passed else 1


def _cmd_varcompare(args) -> int:
    kwargs = {}
    if args.seeds:
        kwargs["num_seeds"] = args.seeds
    if args.draws:
        kwargs["draws"] = args.draws
    if args.tau:
        kwargs["tau"] = args.tau
    report = variance_compare(**kwargs)
    header = ["seed", "trace_score", "trace_reparam", "coord_greater_frac", "trace_ordered"]
    rows = [
        (r.seed, r.trace_score, r.trace_reparam, r.coord_greater_frac, r.trace_ordered)
        for r in report.rows
    ]
    if args.out:
        write_csv(args.out, header, rows)
        print(f"rows written to {args.out}")
    print(format_table(header, rows))
    print("varcompare: PASS" if report.passed else "varcompare: FAIL")
    return 0 if report.passed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="diffloc",
        description="train and probe differentiable localization on synthetic tasks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write its history CSV")
    _add_train_flags(p_train)

    p_eval = sub.add_parser("eval", help="evaluate a saved model on one split")
    _add_train_flags(p_eval)
    p_eval.add_argument("--model", required=True, help="model .npz written by train --model-out")
    p_eval.add_argument("--split", choices=SPLITS)

    p_cal = sub.add_parser("calibrate", help="correlate confidence with accuracy from an eval CSV")
    p_cal.add_argument("--records", required=True, help="eval CSV with peak and err columns")
    p_cal.add_argument("--out")

    p_gc = sub.add_parser("gradcheck", help="finite-difference checks for all losses")
    p_gc.add_argument("--seeds", type=int)
    p_gc.add_argument("--out")

    p_dc = sub.add_parser("distcheck", help="sampler distribution checks")
    p_dc.add_argument("--maps", type=int)
    p_dc.add_argument("--draws", type=int)
    p_dc.add_argument("--seed", type=int)
    p_dc.add_argument("--out")

    p_vc = sub.add_parser("varcompare", help="score-function vs pathwise gradient variance")
    p_vc.add_argument("--seeds", type=int)
    p_vc.add_argument("--draws", type=int)
    p_vc.add_argument("--tau", type=float)
    p_vc.add_argument("--out")

    args = parser.parse_args(argv)
    commands = {
        "train": _cmd_train,
        "eval": _cmd_eval,
        "calibrate": _cmd_calibrate,
        "gradcheck": _cmd_gradcheck,
        "distcheck": _cmd_distcheck,
        "varcompare": _cmd_varcompare,
    }
    return commands[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
