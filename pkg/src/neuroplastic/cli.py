"""Command-line entry point: synth, train, eval, predict, ttest.

Exit codes: 0 success, 1 runtime/data error, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .data_io import (
    SyntheticSpec,
    gen_synthetic,
    parse_csv_rows,
    read_dataset,
    write_dataset,
)
from .fileio import FormatError, atomic_write_text
from .metrics import confusion_from_pairs, paired_ttest, report_from_confusion, report_to_json
from .training import Trainer, infer, split_dataset, write_growth_log, write_log

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_RUNTIME):
        super().__init__(message)
        self.code = code


def _load_data(path: str):
    p = Path(path)
    if not p.is_file():
        raise CliError(f"data file not found: {p}")
    try:
        return read_dataset(p)
    except (FormatError, ValueError, OSError) as exc:
        raise CliError(f"cannot read {p}: {exc}") from None


def _load_model(path: str) -> Trainer:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"model file not found: {p}")
    try:
        return Trainer.load_checkpoint(p)
    except (FormatError, ValueError, OSError) as exc:
        raise CliError(f"cannot load checkpoint {p}: {exc}") from None


def cmd_synth(args) -> int:
    try:
        spec = SyntheticSpec(args.classes, args.dim, args.per_class, radius=args.radius,
                             noise_std=args.noise_std, seed=args.seed)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    ds = gen_synthetic(spec)
    write_dataset(ds, args.out, args.format)
    print(f"n={ds.n}")
    print(f"d={ds.dim}")
    print(f"C={ds.n_classes}")
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["train.seed"] = args.seed
    if args.epochs is not None:
        overrides["train.epochs"] = args.epochs
    if args.no_memory:
        overrides["train.use_memory"] = False
    if args.no_growth:
        overrides["growth.enabled"] = False
    try:
        config, split = load_config(args.config, overrides)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    ds = _load_data(args.data)
    try:
        train, val, test = split_dataset(ds, split)
    except ValueError as exc:
        raise CliError(str(exc)) from None

    if args.resume:
        trainer = _load_model(args.resume)
        if trainer.model.d_embed != ds.dim:
            raise CliError(f"dimension mismatch: checkpoint expects {trainer.model.d_embed}, data has {ds.dim}")
        trainer.fit(train, val, epochs=config.epochs)
    else:
        trainer = Trainer(config, ds.dim, ds.n_classes)
        trainer.fit(train, val)

    trainer.save_checkpoint(args.out_model)
    write_log(args.log, trainer)
    growth_path = args.growth_log or str(Path(args.log).with_suffix(".growth.jsonl"))
    write_growth_log(growth_path, trainer)
    res = trainer.evaluate(test)
    print(f"epochs_run={trainer.epoch}")
    print(f"n_blocks={len(trainer.model.blocks)}")
    print(f"val_accuracy={trainer.rows[-1].val_acc!r}")
    print(f"test_accuracy={res.accuracy!r}")
    return EXIT_OK


def cmd_eval(args) -> int:
    trainer = _load_model(args.model)
    ds = _load_data(args.data)
    if ds.dim != trainer.model.d_embed:
        raise CliError(f"dimension mismatch: model expects {trainer.model.d_embed}, data has {ds.dim}")
    if ds.n == 0:
        raise CliError("dataset is empty")
    res = trainer.evaluate(ds)
    n_classes = trainer.model.n_classes
    if ds.labels.max() >= n_classes:
        raise CliError(f"data has label {int(ds.labels.max())} but model has {n_classes} classes")
    report = report_from_confusion(confusion_from_pairs(ds.labels, res.predictions, n_classes))
    atomic_write_text(Path(args.report), report_to_json(report) + "\n")
    print(f"accuracy={report.accuracy!r}")
    return EXIT_OK


def cmd_predict(args) -> int:
    trainer = _load_model(args.model)
    p = Path(args.input_csv)
    if not p.is_file():
        raise CliError(f"input file not found: {p}")
    try:
        vecs, _, dim = parse_csv_rows(p.read_text(encoding="utf-8"), require_label=False)
    except FormatError as exc:
        raise CliError(f"cannot read {p}: {exc}") from None
    if dim != trainer.model.d_embed:
        raise CliError(f"dimension mismatch: model expects {trainer.model.d_embed}, input has {dim}")
    probs = infer(trainer.model, trainer.memory, vecs, trainer.config)
    preds = np.argmax(probs, axis=1) if len(probs) else np.empty(0, dtype=np.int64)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["row", "pred", *(f"p{c}" for c in range(trainer.model.n_classes))])
    for i, (pred, row) in enumerate(zip(preds, probs)):
        w.writerow([i, int(pred), *(repr(float(v)) for v in row)])
    atomic_write_text(Path(args.out_csv), out.getvalue())
    print(f"rows={len(preds)}")
    return EXIT_OK


def _read_column(path: str) -> list[float]:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"file not found: {p}")
    values = []
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        cell = line.strip().split(",")[0].strip()
        if not cell:
            continue
        try:
            values.append(float(cell))
        except ValueError:
            if lineno == 1 and not values:
                continue  # header
            raise CliError(f"{p}: line {lineno}: not a number: {cell!r}") from None
    return values


def cmd_ttest(args) -> int:
    a, b = _read_column(args.a), _read_column(args.b)
    if len(a) != len(b):
        raise CliError(f"length mismatch: {len(a)} values in --a, {len(b)} in --b")
    try:
        r = paired_ttest(a, b)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    print(f"n={r.n}")
    print(f"mean_diff={r.mean_diff:.6f}")
    print(f"sd={r.sd:.6f}")
    print(f"se={r.se:.6f}")
    print(f"t={r.t:.6f}")
    print(f"df={r.df}")
    print(f"p={r.p_value:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neuroplastic", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic clustered embedding dataset")
    s.add_argument("--classes", type=int, required=True)
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--per-class", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--radius", type=float, default=5.0)
    s.add_argument("--noise-std", type=float, default=1.0)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("bin", "csv"), default=None,
                   help="default: csv for a .csv path, binary otherwise")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="split, train and report held-out test accuracy")
    t.add_argument("--data", required=True)
    t.add_argument("--config", default=None, help="YAML config file")
    t.add_argument("--out-model", required=True)
    t.add_argument("--log", required=True, help="per-epoch CSV log")
    t.add_argument("--growth-log", default=None, help="JSON-lines growth events (default: next to --log)")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--resume", default=None, help="continue from this checkpoint")
    t.add_argument("--no-memory", action="store_true", help="force the retrieved feature to zero")
    t.add_argument("--no-growth", action="store_true", help="disable the growth policy")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a labelled dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="per-row predictions and class probabilities")
    p.add_argument("--model", required=True)
    p.add_argument("--input-csv", required=True)
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=cmd_predict)

    tt = sub.add_parser("ttest", help="paired-sample t-test of two single-column CSVs")
    tt.add_argument("--a", required=True)
    tt.add_argument("--b", required=True)
    tt.set_defaults(func=cmd_ttest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
