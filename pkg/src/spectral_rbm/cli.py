"""Command-line entry point.

Subcommands: train, eval, bench, verify, gen-data, plot. Exit codes:
0 success, 2 configuration error, 3 data error, 4 verification failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import data as data_mod
from .config import ConfigError, config_overrides, load_config
from .model import CheckpointError, save_checkpoint
from .train import DataError, MetricsRecord, METRICS_HEADER, bench, evaluate, train
from .verify import run_bound_suite

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_VERIFY = 4

BOUNDS_HEADER = "bound_id,trials,violations,max_slack,min_slack"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spectral-rbm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded bit-exact mode (zeroes wallclock in metrics)")

    p_train = sub.add_parser("train", help="run the training loop")
    p_train.add_argument("--config", type=Path, required=True)
    add_common(p_train)
    p_train.add_argument("--plot", action="store_true", help="render metrics.png next to metrics.csv")

    p_eval = sub.add_parser("eval", help="reconstruction error of a checkpoint")
    p_eval.add_argument("--config", type=Path, required=True)
    p_eval.add_argument("--checkpoint", type=Path, required=True)
    add_common(p_eval)

    p_bench = sub.add_parser("bench", help="wall-clock time per 1k iterations")
    p_bench.add_argument("--config", type=Path, required=True)
    p_bench.add_argument("--iters", type=int, required=True)
    add_common(p_bench)

    p_verify = sub.add_parser("verify", help="run the bound-verification suite")
    p_verify.add_argument("--trials", type=int, default=None,
                          help="override the per-bound trial counts")
    p_verify.add_argument("--zero-delta", action="store_true",
                          help="evaluate every bound at a zero perturbation (slack 0)")
    p_verify.add_argument("--plot", action="store_true", help="render bounds.png next to the CSV")
    add_common(p_verify)

    p_gen = sub.add_parser("gen-data", help="write a synthetic dataset as RBMMAT1 files")
    p_gen.add_argument("--n-v", type=int, default=100)
    p_gen.add_argument("--n-h", type=int, default=25)
    p_gen.add_argument("--train", type=int, default=4000)
    p_gen.add_argument("--test", type=int, default=1000)
    p_gen.add_argument("--burn-in", type=int, default=1000)
    add_common(p_gen)

    p_plot = sub.add_parser("plot", help="render figures from existing CSV outputs")
    p_plot.add_argument("--metrics", type=Path, default=None, help="metrics CSV to plot")
    p_plot.add_argument("--bounds", type=Path, default=None, help="bound-report CSV to plot")
    add_common(p_plot)
    return parser


def _load_config(args) -> "RunConfig":
    cfg = load_config(args.config)
    return config_overrides(
        cfg,
        seed=args.seed,
        out_dir=None if args.out is None else str(args.out),
        deterministic=True if args.deterministic else None,
    )


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    result = train(cfg)
    print(f"metrics: {result.metrics_path}")
    print(f"checkpoint: {result.checkpoint_path}")
    if args.plot:
        from .plots import render_metrics_figure

        fig = render_metrics_figure(result.metrics_path, result.metrics_path.parent / "metrics.png")
        print(f"figure: {fig}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = _load_config(args)
    rec: MetricsRecord = evaluate(args.checkpoint, cfg, seed=args.seed)
    print(METRICS_HEADER)
    print(rec.csv_row())
    return EXIT_OK


def _cmd_bench(args) -> int:
    cfg = _load_config(args)
    if args.iters < 1:
        raise ConfigError("bench needs --iters >= 1 (nothing to time)")
    optimizer, family, ms = bench(cfg, args.iters)
    lines = ["optimizer,family,ms_per_1k", f"{optimizer},{family},{ms:.3f}"]
    print("\n".join(lines))
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "bench.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def _require_seed(args) -> int:
    seed = 0 if args.seed is None else args.seed
    if seed < 0:
        raise ConfigError("seed must be >= 0")
    return seed


def _cmd_verify(args) -> int:
    seed = _require_seed(args)
    reports = run_bound_suite(seed=seed, trials=args.trials, zero_delta=args.zero_delta)
    lines = [BOUNDS_HEADER]
    for r in reports:
        lines.append(f"{r.bound_id},{r.trials},{r.violations},{r.max_slack!r},{r.min_slack!r}")
    print("\n".join(lines))
    csv_path = None
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        csv_path = args.out / "bounds.csv"
        csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if args.plot and csv_path is not None:
        from .plots import render_bounds_figure

        print(f"figure: {render_bounds_figure(csv_path, csv_path.parent / 'bounds.png')}")
    if any(r.violations for r in reports):
        return EXIT_VERIFY
    return EXIT_OK


def _cmd_gen_data(args) -> int:
    seed = _require_seed(args)
    out = Path("data") if args.out is None else args.out
    out.mkdir(parents=True, exist_ok=True)
    train_ds, test_ds, truth = data_mod.generate_synthetic(
        seed, args.n_v, args.n_h, args.train, args.test, args.burn_in
    )
    data_mod.save_matrix_file(out / "train.rbmmat", train_ds)
    data_mod.save_matrix_file(out / "test.rbmmat", test_ds)
    save_checkpoint(truth, out / "truth.ckpt")
    print(f"wrote {out / 'train.rbmmat'} ({train_ds.n} x {train_ds.n_v})")
    print(f"wrote {out / 'test.rbmmat'} ({test_ds.n} x {test_ds.n_v})")
    print(f"wrote {out / 'truth.ckpt'}")
    return EXIT_OK


def _cmd_plot(args) -> int:
    if args.metrics is None and args.bounds is None:
        raise ConfigError("plot needs --metrics and/or --bounds")
    from .plots import render_bounds_figure, render_metrics_figure

    if args.metrics is not None:
        print(f"figure: {render_metrics_figure(args.metrics, args.metrics.with_suffix('.png'))}")
    if args.bounds is not None:
        print(f"figure: {render_bounds_figure(args.bounds, args.bounds.with_suffix('.png'))}")
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "verify": _cmd_verify,
    "gen-data": _cmd_gen_data,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, data_mod.DatasetFormatError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
