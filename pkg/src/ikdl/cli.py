"""Command-line interface.

Subcommands: train, eval, classify, heatmap, synth, bench. Every command
that produces artifacts also writes a manifest.json recording the
effective configuration, seeds, timings and output paths, so a run can be
reproduced bit-for-bit from its manifest. Errors print one machine-readable
JSON line to stderr; exit codes are 0 (success), 2 (input error) and
3 (numerical failure). The IKDL_LOG environment variable sets the log
level (DEBUG/INFO/WARNING/ERROR).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .classify import (
    ClassifierModel,
    classify_signal,
    discriminative_matrix,
    error_matrix,
    evaluate,
    train,
)
from .data import (
    LabeledDataset,
    RunSpec,
    kernel_spec_from_dict,
    kernel_spec_to_dict,
    load_dataset,
    load_model,
    load_run_config,
    parse_run_config,
    save_dataset,
    save_model,
    split,
    synth_dataset,
    train_config_to_dict,
)
from .errors import InputError, NumericalError
from .learning import TrainConfig

log = logging.getLogger("ikdl.cli")

REPORT_COLUMNS = ["dataset", "algorithm", "kernel", "train_s", "test_s", "accuracy"]


@dataclasses.dataclass
class RunManifest:
    """Reproducibility record written next to every artifact."""

    command: str
    version: str
    config: dict
    seed: object
    timings: dict
    outputs: dict
    created_utc: str = ""

    def write(self, path: Path) -> None:
        doc = dataclasses.asdict(self)
        if not doc["created_utc"]:
            doc["created_utc"] = datetime.now(timezone.utc).isoformat()
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _setup_logging() -> None:
    level = os.environ.get("IKDL_LOG", "WARNING").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("ikdl").setLevel(level)


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt_seconds(v: float) -> str:
    return "" if v != v else f"{v:.3f}"  # NaN-safe


def _fmt_accuracy(v: float) -> str:
    return f"{100.0 * v:.2f}"


def _load_config_dataset(spec: RunSpec) -> LabeledDataset:
    if spec.dataset is None:
        raise InputError("config has no dataset section")
    return load_dataset(spec.dataset.signals, spec.dataset.labels, spec.dataset.format)


def _config_train_test(spec: RunSpec) -> tuple[LabeledDataset, LabeledDataset | None]:
    ds = _load_config_dataset(spec)
    if spec.split is None:
        return ds, None
    return split(ds, spec.split)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _print_table(header: list[str], rows: list[list[str]]) -> None:
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
              for i, h in enumerate(header)]
    print("  ".join(str(h).ljust(w) for h, w in zip(header, widths)))
    for r in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)))


def _kernel_label(cfg: TrainConfig) -> str:
    return "none" if cfg.kernel is None else cfg.kernel.kind.value


def _effective_config(spec: RunSpec) -> dict:
    doc = train_config_to_dict(spec.train)
    if spec.dataset is not None:
        doc["dataset"] = {
            "signals": spec.dataset.signals,
            "labels": spec.dataset.labels,
            "format": spec.dataset.format,
        }
    if spec.split is not None:
        doc["split"] = {
            "per_class_train": spec.split.per_class_train,
            "seed": spec.split.seed,
        }
    return doc


def _apply_seed_override(spec: RunSpec, seed: int | None) -> RunSpec:
    if seed is None:
        return spec
    cfg = dataclasses.replace(spec.train, seed=int(seed))
    return RunSpec(cfg, spec.dataset, spec.split)


# --- subcommands -------------------------------------------------------------

def cmd_train(args) -> int:
    if not args.config:
        raise InputError("train needs --config")
    spec = _apply_seed_override(load_run_config(args.config), args.seed)
    train_ds, _ = _config_train_test(spec)
    model = train(train_ds.by_class(), spec.train, labels=list(train_ds.class_ids))
    out = _out_dir(args)
    model_path = out / "model.bin"
    save_model(model, model_path)
    objective_path = out / "objective.csv"
    _write_csv(objective_path, ["iteration", "objective"],
               [[i, f"{v:.17g}"] for i, v in enumerate(model.objective)])
    manifest = RunManifest(
        command="train",
        version=__version__,
        config=_effective_config(spec),
        seed=spec.train.seed,
        timings={"train_s": model.train_time_s},
        outputs={"model": str(model_path), "objective": str(objective_path)},
    )
    manifest.write(out / "manifest.json")
    print(f"trained {model.kind} model: {model.n_classes} classes, "
          f"{spec.train.n_atoms} atoms, {spec.train.iterations} iterations "
          f"({model.train_time_s:.3f}s)")
    print(f"model written to {model_path}")
    return 0


def _resolve_eval_data(args) -> tuple[LabeledDataset, str]:
    """Test data either from explicit files or from the config's split."""
    if args.signals:
        ds = load_dataset(args.signals, args.labels, args.format)
        return ds, str(args.signals)
    if args.config:
        spec = load_run_config(args.config)
        if spec.split is None:
            ds = _load_config_dataset(spec)
        else:
            _, ds = _config_train_test(spec)
        if ds is None:
            raise InputError("config split produced no test data")
        return ds, str(spec.dataset.signals)
    raise InputError("eval needs either --signals or --config")


def _check_model_dataset(model: ClassifierModel, ds: LabeledDataset) -> None:
    if list(ds.class_ids) != list(model.labels):
        raise InputError(
            f"dataset classes {list(ds.class_ids)} do not match model classes {model.labels}"
        )
    if ds.dim != model.signal_dim:
        raise InputError(
            f"dataset dimension {ds.dim} does not match model dimension {model.signal_dim}"
        )


def _eval_once(model: ClassifierModel, ds: LabeledDataset, threads: int):
    _check_model_dataset(model, ds)
    report = evaluate(ds.by_class(), model, threads=threads)
    # Scatter per-class predictions back to dataset column order.
    preds = np.empty(ds.labels.shape[0], dtype=np.int64)
    for i in range(ds.n_classes):
        preds[np.flatnonzero(ds.labels == i)] = report.predictions[i]
    return report, preds


def cmd_eval(args) -> int:
    out = _out_dir(args)
    threads = args.threads or 1
    rows = []
    if args.seeds and args.seeds > 1:
        if not args.config:
            raise InputError("--seeds needs --config (models are retrained per seed)")
        spec0 = _apply_seed_override(load_run_config(args.config), args.seed)
        accs = []
        for k in range(args.seeds):
            spec = _apply_seed_override(spec0, spec0.train.seed + k)
            train_ds, test_ds = _config_train_test(spec)
            if test_ds is None:
                raise InputError("--seeds needs a config with a split")
            model = train(train_ds.by_class(), spec.train, labels=list(train_ds.class_ids))
            report, _ = _eval_once(model, test_ds, threads)
            accs.append(report.accuracy)
            rows.append([
                str(spec.dataset.signals), spec.train.mode.value, _kernel_label(spec.train),
                _fmt_seconds(report.train_time_s), _fmt_seconds(report.test_time_s),
                _fmt_accuracy(report.accuracy),
            ])
        report_path = out / "report.csv"
        _write_csv(report_path, REPORT_COLUMNS, rows)
        _print_table(REPORT_COLUMNS, rows)
        accs = np.asarray(accs)
        print(f"accuracy over {args.seeds} seeds: mean {_fmt_accuracy(accs.mean())}% "
              f"min {_fmt_accuracy(accs.min())}% max {_fmt_accuracy(accs.max())}%")
        manifest = RunManifest(
            command="eval", version=__version__,
            config=_effective_config(spec0), seed=[spec0.train.seed + k for k in range(args.seeds)],
            timings={}, outputs={"report": str(report_path)},
        )
        manifest.write(out / "manifest.json")
        return 0

    if not args.model:
        raise InputError("eval needs a model path")
    model = load_model(args.model)
    ds, ds_name = _resolve_eval_data(args)
    train_s = float("nan")
    if args.manifest:
        try:
            train_s = float(json.loads(Path(args.manifest).read_text())["timings"]["train_s"])
        except (OSError, KeyError, TypeError, ValueError) as exc:
            raise InputError(f"cannot read train time from {args.manifest}: {exc}") from exc
    report, preds = _eval_once(model, ds, threads)
    if train_s == train_s:
        report.train_time_s = train_s
    row = [ds_name, model.cfg.mode.value, _kernel_label(model.cfg),
           _fmt_seconds(report.train_time_s), _fmt_seconds(report.test_time_s),
           _fmt_accuracy(report.accuracy)]
    report_path = out / "report.csv"
    _write_csv(report_path, REPORT_COLUMNS, [row])
    confusion_path = out / "confusion.csv"
    _write_csv(confusion_path, ["true\\pred"] + [str(l) for l in model.labels],
               [[str(model.labels[i])] + [int(v) for v in report.confusion[i]]
                for i in range(model.n_classes)])
    predictions_path = out / "predictions.csv"
    _write_csv(predictions_path, ["index", "true", "predicted"],
               [[i, model.labels[ds.labels[i]], model.labels[int(preds[i])]]
                for i in range(len(preds))])
    _print_table(REPORT_COLUMNS, [row])
    print(f"accuracy: {_fmt_accuracy(report.accuracy)}%")
    manifest = RunManifest(
        command="eval", version=__version__,
        config={"model": str(args.model), "dataset": ds_name},
        seed=model.cfg.seed,
        timings={"train_s": report.train_time_s if report.train_time_s == report.train_time_s else None,
                 "test_s": report.test_time_s},
        outputs={"report": str(report_path), "confusion": str(confusion_path),
                 "predictions": str(predictions_path)},
    )
    manifest.write(out / "manifest.json")
    return 0


def cmd_classify(args) -> int:
    model = load_model(args.model)
    ds_signals = None
    if args.labels is not None or args.format == "bin":
        ds = load_dataset(args.signals, args.labels, args.format)
        ds_signals = ds.signals
    else:
        try:
            ds_signals = np.loadtxt(args.signals, delimiter=",", dtype=np.float64, ndmin=2)
        except OSError as exc:
            raise InputError(f"cannot read {args.signals}: {exc}") from exc
        except ValueError as exc:
            raise InputError(f"{args.signals}: {exc}") from exc
        if not np.all(np.isfinite(ds_signals)):
            raise InputError(f"{args.signals}: non-finite entries")
    if ds_signals.shape[0] != model.signal_dim:
        raise InputError(
            f"signal dimension {ds_signals.shape[0]} does not match model "
            f"dimension {model.signal_dim}"
        )
    rows = []
    for l in range(ds_signals.shape[1]):
        cls, res = classify_signal(ds_signals[:, l], model)
        rows.append([l, model.labels[cls], f"{res[cls]:.6g}"])
        print(f"signal {l}: class {model.labels[cls]} (residual {res[cls]:.6g})")
    if args.out:
        out = _out_dir(args)
        path = out / "predictions.csv"
        _write_csv(path, ["index", "predicted", "residual"], rows)
        manifest = RunManifest(
            command="classify", version=__version__,
            config={"model": str(args.model), "signals": str(args.signals)},
            seed=model.cfg.seed, timings={}, outputs={"predictions": str(path)},
        )
        manifest.write(out / "manifest.json")
    return 0


def cmd_heatmap(args) -> int:
    model = load_model(args.model)
    out = _out_dir(args)
    if args.which == "discriminative":
        M = discriminative_matrix(model)
        path = out / "heatmap_discriminative.csv"
        _write_csv(path, ["class"] + [str(l) for l in model.labels],
                   [[str(model.labels[i])] + [f"{v:.17g}" for v in M[i]]
                    for i in range(model.n_classes)])
    else:
        if not args.signals:
            raise InputError("heatmap reconstruction needs --signals")
        ds = load_dataset(args.signals, args.labels, args.format) if args.labels or args.format == "bin" else None
        if ds is not None:
            signals = ds.signals
        else:
            try:
                signals = np.loadtxt(args.signals, delimiter=",", dtype=np.float64, ndmin=2)
            except (OSError, ValueError) as exc:
                raise InputError(f"cannot read {args.signals}: {exc}") from exc
        M = error_matrix(signals, model, threads=args.threads or 1)
        path = out / "heatmap_reconstruction.csv"
        _write_csv(path, ["signal"] + [str(l) for l in model.labels],
                   [[i] + [f"{v:.17g}" for v in M[i]] for i in range(M.shape[0])])
    print(f"heatmap written to {path}")
    manifest = RunManifest(
        command="heatmap", version=__version__,
        config={"model": str(args.model), "which": args.which},
        seed=model.cfg.seed, timings={}, outputs={"heatmap": str(path)},
    )
    manifest.write(out / "manifest.json")
    return 0


def cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else 0
    ds = synth_dataset(args.classes, args.per_class, args.dim, args.subspace_dim,
                       args.noise, seed)
    out = _out_dir(args)
    if args.format == "bin":
        signals_path = out / "synth.bin"
        save_dataset(ds, signals_path, fmt="bin")
        outputs = {"dataset": str(signals_path)}
    else:
        signals_path = out / "synth_signals.csv"
        labels_path = out / "synth_labels.csv"
        save_dataset(ds, signals_path, labels_path, fmt="csv")
        outputs = {"signals": str(signals_path), "labels": str(labels_path)}
    manifest = RunManifest(
        command="synth", version=__version__,
        config={"classes": args.classes, "per_class": args.per_class, "dim": args.dim,
                "subspace_dim": args.subspace_dim, "noise": args.noise, "format": args.format},
        seed=seed, timings={}, outputs=outputs,
    )
    manifest.write(out / "manifest.json")
    print(f"synthetic dataset written to {signals_path}")
    return 0


def _parse_bench_config(path) -> tuple[RunSpec, list[dict]]:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "grid" not in doc:
        raise InputError("bench config needs a 'grid' object")
    grid = doc.pop("grid")
    base = parse_run_config(doc)
    if not isinstance(grid, dict):
        raise InputError("grid must be an object")
    unknown = set(grid) - {"mode", "kernel", "gamma", "seed"}
    if unknown:
        raise InputError(f"unknown grid keys: {sorted(unknown)}")
    modes = grid.get("mode", [base.train.mode.value])
    kernels = grid.get("kernel", [kernel_spec_to_dict(base.train.kernel)])
    gammas = grid.get("gamma", [base.train.gamma])
    seeds = grid.get("seed", [base.train.seed])
    for name, vals in (("mode", modes), ("kernel", kernels), ("gamma", gammas), ("seed", seeds)):
        if not isinstance(vals, list) or not vals:
            raise InputError(f"grid '{name}' must be a nonempty list")
    # Kernel grid entries may carry lists of hyperparameters; expand them.
    expanded_kernels: list[dict | None] = []
    for entry in kernels:
        if entry is None:
            expanded_kernels.append(None)
            continue
        if not isinstance(entry, dict):
            raise InputError(f"grid kernel entries must be objects or null, got {entry!r}")
        lists = {k: v for k, v in entry.items() if isinstance(v, list)}
        if not lists:
            expanded_kernels.append(entry)
            continue
        keys = sorted(lists)
        for combo in itertools.product(*(lists[k] for k in keys)):
            e = dict(entry)
            e.update(dict(zip(keys, combo)))
            expanded_kernels.append(e)
    cells = []
    for mode, kernel, gamma, seed in itertools.product(modes, expanded_kernels, gammas, seeds):
        cells.append({"mode": mode, "kernel": kernel, "gamma": gamma, "seed": seed})
    return base, cells


def cmd_bench(args) -> int:
    if not args.config:
        raise InputError("bench needs --config")
    base, cells = _parse_bench_config(args.config)
    if base.dataset is None:
        raise InputError("bench config needs a dataset")
    train_ds, test_ds = _config_train_test(base)
    if test_ds is None:
        raise InputError("bench config needs a split")
    out = _out_dir(args)
    header = ["dataset", "algorithm", "kernel", "gamma", "seed",
              "train_s", "test_s", "accuracy", "status"]
    rows = []
    for cell in cells:
        label = kernel_spec_from_dict(cell["kernel"])
        row_id = [str(base.dataset.signals), str(cell["mode"]),
                  "none" if label is None else label.kind.value,
                  str(cell["gamma"]), str(cell["seed"])]
        try:
            cfg = dataclasses.replace(
                base.train,
                mode=base.train.mode.__class__(cell["mode"]),
                kernel=label,
                gamma=float(cell["gamma"]),
                seed=int(cell["seed"]),
            )
            model = train(train_ds.by_class(), cfg, labels=list(train_ds.class_ids))
            report, _ = _eval_once(model, test_ds, args.threads or 1)
            rows.append(row_id + [_fmt_seconds(report.train_time_s),
                                  _fmt_seconds(report.test_time_s),
                                  _fmt_accuracy(report.accuracy), "ok"])
        except (InputError, NumericalError, ValueError) as exc:
            log.warning("bench cell failed: %s", exc)
            rows.append(row_id + ["", "", "", f"error: {exc}"])
    bench_path = out / "bench.csv"
    _write_csv(bench_path, header, rows)
    _print_table(header, rows)
    manifest = RunManifest(
        command="bench", version=__version__,
        config={"config": str(args.config), "cells": len(cells)},
        seed=[c["seed"] for c in cells], timings={},
        outputs={"bench": str(bench_path)},
    )
    manifest.write(out / "manifest.json")
    return 0


# --- parser ------------------------------------------------------------------

def _common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="path to a JSON run configuration")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the configured training seed")
    sub.add_argument("--seeds", type=int, default=None,
                     help="evaluate over this many consecutive seeds (eval only)")
    sub.add_argument("--out", default=None, help="output directory (default: .)")
    sub.add_argument("--threads", type=int, default=1,
                     help="threads for per-signal coding fan-out")


def _data_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--signals", help="signals file (csv or bin)")
    sub.add_argument("--labels", help="labels file (csv format only)")
    sub.add_argument("--format", choices=("csv", "bin"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ikdl",
        description="Per-class incoherent (kernel) dictionary learning and "
                    "residual classification.",
    )
    parser.add_argument("--version", action="version", version=f"ikdl {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("train", help="train a model from a config file")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="evaluate a model on labelled test data")
    p.add_argument("model", nargs="?", help="path to a trained model")
    _common(p)
    _data_flags(p)
    p.add_argument("--manifest", help="training manifest to take train_s from")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("classify", help="classify signals with a trained model")
    p.add_argument("model", help="path to a trained model")
    _common(p)
    _data_flags(p)
    p.set_defaults(func=cmd_classify)

    p = subs.add_parser("heatmap", help="write residual or coherence tables as CSV")
    p.add_argument("model", help="path to a trained model")
    p.add_argument("--which", choices=("reconstruction", "discriminative"),
                   default="reconstruction")
    _common(p)
    _data_flags(p)
    p.set_defaults(func=cmd_heatmap)

    p = subs.add_parser("synth", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True, dest="per_class")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--subspace-dim", type=int, required=True, dest="subspace_dim")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--format", choices=("csv", "bin"), default="csv")
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("bench", help="run a config grid and aggregate results")
    _common(p)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    try:
        return int(args.func(args) or 0)
    except InputError as exc:
        print(json.dumps({"error": str(exc), "kind": "input"}), file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(json.dumps({"error": str(exc), "kind": "numerical"}), file=sys.stderr)
        return 3


def entry() -> None:
    try:
        code = main()
        sys.stdout.flush()
    except BrokenPipeError:
        # Consumer closed the pipe (e.g. piping into head): silence the
        # shutdown flush and exit the conventional way, 128 + SIGPIPE.
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        code = 141
    sys.exit(code)


if __name__ == "__main__":
    entry()
