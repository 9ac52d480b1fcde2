"""Command line entry point: ``ipcae {train,eval,sweep,oracle-check,gen-synth}``.

Exit codes: 0 success, 1 invalid input (config, data, shapes), 2 runtime or
numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analysis, training
from .concrete import ConfigError
from .data import CsvParseError, SyntheticSpec, gen_synthetic, write_csv
from .tensor import DimensionError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
ORACLE_TOLERANCE = 1e-8
ORACLE_VARIANTS = ("direct", "full", "scalar")

log = logging.getLogger("ipcae")


class UsageError(ValueError):
    pass


def _read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None


def load_config(path, overrides: dict | None = None) -> training.TrainConfig:
    """Read a JSON config and apply non-None flag overrides before validation."""
    raw = _read_json(path)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    return training.TrainConfig.from_dict(raw)


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma separated numbers, got {text!r}") from None


def parse_axis_values(axis: str, text: str) -> list:
    if axis not in training.SWEEP_AXES:
        raise UsageError(f"axis must be one of {training.SWEEP_AXES}, got {axis!r}")
    items = [v.strip() for v in text.split(",") if v.strip()]
    if not items:
        raise UsageError("no sweep values given")
    if axis == "variant":
        return items
    if axis == "lambda":
        return _float_list(text)
    return _int_list(text)


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed, "variant": args.variant, "P": args.P,
                                    "lambda": args.lam, "out": args.out})
    out = cfg.out or f"runs/{cfg.variant}-seed{cfg.seed}"
    result = training.run(cfg, out_dir=out)
    log.info("wrote %s (best epoch %d, test %s %.6g)", out, result.log.best_epoch,
             result.log.metric, result.log.test_metric)
    return EXIT_OK


def cmd_eval(args) -> int:
    record = training.evaluate_checkpoint(args.checkpoint, args.data, args.split)
    print(json.dumps(record, sort_keys=True))
    return EXIT_OK


def _sweep_table(rows: list[dict]) -> str:
    lines = ["value\tn_runs\ttest_metric\tfinal_unique_pct"]
    for r in rows:
        if r["n_runs"]:
            lines.append(f"{r['value']}\t{r['n_runs']}\t"
                         f"{r['test_metric_mean']:.6g} +- {r['test_metric_std']:.3g}\t"
                         f"{r['final_unique_pct_mean']:.2f} +- {r['final_unique_pct_std']:.2f}")
        else:
            lines.append(f"{r['value']}\t0\tfailed\tfailed")
    return "\n".join(lines)


def cmd_sweep(args) -> int:
    values = parse_axis_values(args.axis, args.values)
    cfg = load_config(args.config)
    seeds = _int_list(args.seeds) if args.seeds else None
    rows, _ = training.sweep(cfg, args.axis, values, seeds=seeds)
    table = _sweep_table(rows)
    print(table)
    out = Path(args.out or cfg.out or f"sweep-{args.axis}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(json.dumps(rows, indent=2, sort_keys=True), encoding="utf-8")
    (out / "sweep.tsv").write_text(table + "\n", encoding="utf-8")
    if any(r["n_runs"] == 0 for r in rows):
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    dims = _int_list(args.dims)
    etas = _float_list(args.eta)
    if not dims or min(dims) < 1 or not etas:
        raise UsageError("--dims needs positive integers and --eta at least one value")
    failed = False
    for variant in ORACLE_VARIANTS:
        dev = analysis.oracle_deviation(variant, trials=args.trials, dims=dims, etas=etas,
                                        seed=args.seed, corrupt=args.corrupt)
        ok = dev <= ORACLE_TOLERANCE
        failed |= not ok
        print(f"{variant:7s} max_abs_dev={dev:.3e} {'ok' if ok else 'FAIL'}")
    return EXIT_RUNTIME if failed else EXIT_OK


def truth_path(csv_path) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.stem + ".truth.json")


def cmd_gen_synth(args) -> int:
    spec = SyntheticSpec.from_dict(_read_json(args.spec))
    dataset = gen_synthetic(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, dataset)
    truth = {"informative": dataset.informative,
             "informative_names": [dataset.feature_names[i] for i in dataset.informative],
             "spec": spec.to_dict()}
    truth_path(out).write_text(json.dumps(truth, indent=2, sort_keys=True), encoding="utf-8")
    print(json.dumps({"csv": str(out), "truth": str(truth_path(out)), "informative": dataset.informative}))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ipcae", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model and write metrics, summary and checkpoint")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--variant")
    t.add_argument("--P", type=int)
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on one split of a CSV dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="train over a grid of one config field and summarise across seeds")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", required=True)
    s.add_argument("--values", required=True, help="comma separated")
    s.add_argument("--seeds", help="comma separated; defaults to the config's seed list")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    o = sub.add_parser("oracle-check", help="compare closed-form update rules with autodiff SGD")
    o.add_argument("--trials", type=int, default=100)
    o.add_argument("--dims", default="2,3,4,5,6,7,8,9,10")
    o.add_argument("--eta", default="0.001,0.1")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--corrupt", type=float, default=0.0, help=argparse.SUPPRESS)
    o.set_defaults(func=cmd_oracle_check)

    g = sub.add_parser("gen-synth", help="write a synthetic dataset CSV and its planted feature set")
    g.add_argument("--spec", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, CsvParseError, DimensionError, FileNotFoundError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (training.NumericalError, FloatingPointError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
