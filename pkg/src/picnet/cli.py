"""Command-line entry point: ``picnet {gen-data,train,eval,profile,verify}``.

Exit codes: 0 success, 1 verification or training failure, 2 I/O or input
error, 3 model/data compatibility error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path


from .config import RunConfig, config_diff
from .container import write_csv
from .exceptions import (
    CompatibilityError,
    ConfigError,
    FormatError,
    PicError,
    TrainingDiverged,
    UninitializedStatisticsError,
)
from .layers import VARIANTS
from .synth import PROTOCOLS

EXIT_OK, EXIT_FAIL, EXIT_IO, EXIT_COMPAT = 0, 1, 2, 3
OUTPUT_ENV = "PICNET_OUTPUT_DIR"

log = logging.getLogger("picnet")


def _output_path(path: str, cfg: RunConfig | None = None) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    base = os.environ.get(OUTPUT_ENV) or (cfg.output_dir if cfg is not None else None)
    return Path(base) / p if base else p


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    with open(path) as fh:
        return RunConfig.from_json(fh.read()).validate()


def _limit_threads(n: int):
    from threadpoolctl import threadpool_limits

    return threadpool_limits(n)


def _parse_depths(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(d) for d in text.split(",") if d]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .synth import make_dataset, save_dataset

    cfg = _load_config(args.config)
    ds = make_dataset(cfg)
    out = _output_path(args.out, cfg)
    checksum = save_dataset(out, ds)
    tax = ds.taxonomy
    print(f"dataset: {out}")
    print(f"classes={tax.num_classes} segments/class={cfg.data.segments_per_class} "
          f"actions/segment={cfg.data.actions_per_segment} vocabulary={tax.num_actions} layout={tax.layout}")
    print(f"samples={len(ds.samples)} (train={len(ds.train)}, test={len(ds.test)}) "
          f"N={cfg.data.length} C={cfg.channels} task={cfg.task}")
    print(f"sha256={checksum}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .network import build_cascade, save_model
    from .optim import train
    from .synth import load_dataset, stack

    ds = load_dataset(args.data)
    cfg = ds.config if args.config is None else _load_config(args.config)
    if args.epochs is not None:
        cfg = cfg.replace(epochs=args.epochs)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    _check_compatible(cfg, ds.config)
    X, y = stack(ds.train)
    Xe, ye = stack(ds.test) if ds.test else (None, None)
    model = build_cascade(cfg)
    out = _output_path(args.out, cfg)
    history_path = _output_path(args.history, cfg) if args.history else out.with_name(out.name + ".history.csv")
    t0 = time.perf_counter()
    try:
        with _limit_threads(args.threads):
            result = train(model, X, y, cfg, Xe, ye)
    except TrainingDiverged as exc:
        save_model(out, exc.last_good)
        _write_history(history_path, exc.history, cfg)
        print(f"error: {exc}; last good checkpoint written to {out}", file=sys.stderr)
        return EXIT_FAIL
    if args.keep_best:
        model.load_state_arrays(result.best_state)
    save_model(out, model)
    _write_history(history_path, result.history, cfg)
    last = result.history[-1] if result.history else None
    summary = f"loss={last['loss']:.5f} metric={last['metric']:.4f}" if last else "no epochs run"
    print(f"model: {out} ({summary}, {time.perf_counter() - t0:.1f}s)")
    print(f"history: {history_path}")
    return EXIT_OK


def _write_history(path, history, cfg):
    write_csv(path, history, ["epoch", "loss", "metric"], cfg.to_json())


def _check_compatible(model_cfg: RunConfig, data_cfg: RunConfig):
    keys = ("channels", "task")
    a, b = model_cfg.to_dict(), data_cfg.to_dict()
    diff = {k: (a[k], b[k]) for k in keys if a[k] != b[k]}
    if model_cfg.num_outputs != data_cfg.num_outputs:
        diff["num_outputs"] = (model_cfg.num_outputs, data_cfg.num_outputs)
    if diff:
        full = config_diff(a, b)
        raise CompatibilityError("model and data configs are incompatible", {**full, **diff})


def cmd_eval(args) -> int:
    from .evaluation import evaluate, permutation_robustness
    from .network import load_model
    from .synth import load_dataset

    model = load_model(args.model)
    ds = load_dataset(args.data)
    _check_compatible(model.config, ds.config)
    samples = ds.test if args.split == "test" else ds.train
    if not samples:
        raise ConfigError(f"dataset has no {args.split} samples")
    protocols = args.perm or ["uniform"]
    seeds = args.perm_seeds if args.perm_seeds is not None else model.config.perm_seeds
    with _limit_threads(args.threads):
        if protocols == ["uniform"]:
            report = evaluate(model, samples)
            print(f"{report.name}={report.value!r} samples={report.count}")
            rows = [{"protocol": "uniform", "seed": "", "metric": report.value, "drop": 0.0}]
        else:
            table = permutation_robustness(model, samples, protocols, seeds)
            print(f"{'protocol':<10} {'metric':>10} {'drop':>10}")
            for p in protocols:
                print(f"{p:<10} {table.mean[p]:>10.4f} {table.drop[p]:>10.4f}")
            rows = table.rows
    if args.csv:
        write_csv(_output_path(args.csv, model.config), rows, ["protocol", "seed", "metric", "drop"],
                  model.config.to_json())
    return EXIT_OK


def cmd_profile(args) -> int:
    from .evaluation import profile

    cfg = _load_config(args.config)
    depths = _parse_depths(args.depths)
    variants = args.variants.split(",") if args.variants else [cfg.variant]
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    with _limit_threads(1):
        records = profile(cfg, depths, variants, repeats=args.repeats, timing=not args.no_timing)
    columns = ["variant", "depth", "params", "flops", "forward_ms", "accuracy"]
    rows = [r.__dict__ for r in records]
    if args.out:
        write_csv(_output_path(args.out, cfg), rows, columns, cfg.to_json())
    else:
        write_csv(sys.stdout, rows, columns, cfg.to_json())
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_checks

    t0 = time.perf_counter()
    results = run_checks(args.inject_fault or ())
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail} ({r.seconds:.2f}s)")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {time.perf_counter() - t0:.1f}s")
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="picnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic activity dataset")
    p.add_argument("--config", help="RunConfig JSON (defaults when omitted)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a cascade on a dataset file")
    p.add_argument("--config", help="RunConfig JSON (the dataset's embedded config when omitted)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="history CSV path (default: <out>.history.csv)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--keep-best", action="store_true", help="persist the best-metric checkpoint")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model, optionally under test-time permutations")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--perm", action="append", choices=PROTOCOLS)
    p.add_argument("--perm-seeds", type=int)
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.add_argument("--csv")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("profile", help="parameter, FLOP and latency counts per depth")
    p.add_argument("--config")
    p.add_argument("--depths", default="1..4")
    p.add_argument("--variants", help="comma separated")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--no-timing", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_profile)

    p = sub.add_parser("verify", help="run the fast invariant suite")
    p.add_argument("--inject-fault", action="append", help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except CompatibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for key, (a, b) in exc.diff.items():
            print(f"  {key}: model={a!r} data={b!r}", file=sys.stderr)
        return EXIT_COMPAT
    except UninitializedStatisticsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (OSError, FormatError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
