"""Command-line surface: train, generate, score, sa-bench, report.

Machine-readable results go to standard output as a single JSON line; any
prose lands on standard error. Exit codes: 0 success, 1 runtime failure,
2 argument errors (argparse convention). Every command is deterministic
given its full argument list.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .dataio import (
    CheckpointError,
    DatasetError,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    write_csv,
    write_rawf64,
)
from .kernels import KernelSpec, SampleSet, mmd_score
from .sa_lab import (
    RegressionModel,
    SAVariant,
    compare_variants,
    regression_objective,
    write_bench_csv,
)
from .trainer import TrainConfig, TrainingDiverged, generate, train_state, write_trace_csv

# Training-run defaults mirror the byte-image setup: 10-dim latents, 128
# hidden units, bandwidth 36, blocks of 32, lambda 0.999, mu 1e-3.
TRAIN_DEFAULTS = {
    "n": 10,
    "m": 128,
    "bandwidth_h": 36.0,
    "mu": 1e-3,
    "lambda": 0.999,
    "epsilon": 1e-8,
    "batch_K": 32,
    "rounds": 1,
    "seed": 0,
    "algorithm": "batched",
    "zero_power_init": False,
    "shuffle": False,
    "trace_every": 1000,
    "eval_count": 1000,
}


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")


def _note(msg: str) -> None:
    sys.stderr.write(msg + "\n")


def _detect_format(path: str) -> str:
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head[:4] == b"MMDD":
        return "rawf64"
    if head[:2] == b"\x1f\x8b" or head[:3] == b"\x00\x00\x08":
        return "idx"
    return "csv"


def _variant_tokens(text: str) -> list:
    """Parse a comma list like classical,batch:10,smooth:0.9,delay:5."""
    tokens = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, _, arg = part.partition(":")
        try:
            if name == "classical":
                if arg:
                    raise ValueError("classical takes no parameter")
                tokens.append(("classical", None))
            elif name == "batch":
                tokens.append(("batch", int(arg)))
            elif name == "smooth":
                tokens.append(("smoothed", float(arg)))
            elif name == "delay":
                tokens.append(("delayed", int(arg)))
            else:
                raise ValueError("unknown variant")
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"bad variant spec {part!r}: {exc}") from None
    if not tokens:
        raise argparse.ArgumentTypeError("no variants given")
    return tokens


def _build_variants(tokens: list, mu: float) -> list:
    """--mu is the classical per-sample rate; batch:K runs at mu' = K*mu so
    its steady state matches the classical run it is compared against."""
    out = []
    for kind, arg in tokens:
        if kind == "classical":
            out.append(SAVariant(kind="classical", mu=mu))
        elif kind == "batch":
            out.append(SAVariant(kind="batch", mu=mu * arg, K=arg))
        elif kind == "smoothed":
            out.append(SAVariant(kind="smoothed", mu=mu, rho=arg))
        else:
            out.append(SAVariant(kind="delayed", mu=mu, delay_k=arg))
    return out


def cmd_train(args) -> int:
    data = load_dataset(args.data, args.format, scale=args.scale, transpose=args.transpose)
    merged = dict(TRAIN_DEFAULTS)
    if args.config is not None:
        with open(args.config, "r") as fh:
            merged.update(json.load(fh))
    flag_map = {
        "n": args.latent,
        "m": args.hidden,
        "bandwidth_h": args.bandwidth,
        "mu": args.mu,
        "lambda": args.lam,
        "epsilon": args.epsilon,
        "batch_K": args.batch,
        "rounds": args.rounds,
        "seed": args.seed,
        "algorithm": args.algorithm,
        "trace_every": args.trace_every,
        "eval_count": args.eval_count,
    }
    merged.update({k: v for k, v in flag_map.items() if v is not None})
    if args.zero_power_init:
        merged["zero_power_init"] = True
    if args.shuffle:
        merged["shuffle"] = True
    if "k" in merged and int(merged["k"]) != data.dim:
        raise DatasetError(
            f"config expects output dim {merged['k']} but {args.data} has dim {data.dim}"
        )
    merged["k"] = data.dim
    config = TrainConfig.from_dict(merged)
    if args.plot and args.trace is None:
        _note("error: --plot requires --trace")
        return 2

    state, points = train_state(config, data)
    save_checkpoint(state.params, state.power, state.iteration, config, args.out)
    figure = None
    if args.trace is not None:
        write_trace_csv(points, args.trace, config)
        if args.plot:
            from .report import render_trace_figure

            figure = render_trace_figure(args.trace, os.path.splitext(args.trace)[0] + ".png")
    last = points[-1]
    _note(f"trained {state.iteration} iterations on {data.count} columns of dim {data.dim}")
    _emit({
        "checkpoint": args.out,
        "iterations": state.iteration,
        "final_loss": last.empirical_loss,
        "mmd_score": last.mmd_score,
        "trace": args.trace,
        "figure": figure,
    })
    return 0


def cmd_generate(args) -> int:
    params, _, _, _ = load_checkpoint(args.model)
    samples = generate(params, args.count, args.seed)
    cols = samples.vectors
    if cols.min() <= 0.0 or cols.max() >= 1.0:
        raise ValueError("generated entries escaped (0,1); checkpoint is corrupt")
    fmt = args.format
    if fmt is None:
        fmt = "csv" if args.out.lower().endswith(".csv") else "rawf64"
    if fmt == "csv":
        write_csv(cols, args.out)
    else:
        write_rawf64(cols, args.out)
    _emit({"out": args.out, "format": fmt, "dim": samples.dim, "count": samples.count})
    return 0


def cmd_score(args) -> int:
    sets = []
    for path in (args.a, args.b):
        fmt = _detect_format(path)
        data = load_dataset(path, fmt, scale=args.scale)
        sets.append(data)
    if sets[0].dim != sets[1].dim:
        raise DatasetError(
            f"dimension mismatch: {args.a} has dim {sets[0].dim}, {args.b} has dim {sets[1].dim}"
        )
    spec = KernelSpec(bandwidth_h=args.bandwidth)
    value = mmd_score(SampleSet(sets[0].columns), SampleSet(sets[1].columns), spec)
    _emit({
        "mmd_score": value,
        "bandwidth_h": args.bandwidth,
        "count_a": sets[0].count,
        "count_b": sets[1].count,
    })
    return 0


def cmd_sa_bench(args) -> int:
    model = RegressionModel(theta_star=np.ones(args.dim), noise_var=args.noise_var)
    obj = regression_objective(model)
    variants = _build_variants(args.variants, args.mu)
    report = compare_variants(obj, variants, args.samples, args.seed)
    figure = None
    if args.plot and args.out is None:
        _note("error: --plot requires --out")
        return 2
    if args.out is not None:
        write_bench_csv(report, args.out, every=args.every)
        if args.plot:
            from .report import render_bench_figure

            figure = render_bench_figure(args.out, os.path.splitext(args.out)[0] + ".png")
    summary = report.summary_dict()
    summary.update({"out": args.out, "figure": figure, "mu": args.mu, "dim": args.dim})
    _emit(summary)
    return 0


def cmd_report(args) -> int:
    if args.trace is None and args.bench is None:
        _note("error: nothing to render; pass --trace and/or --bench")
        return 2
    from .report import render_bench_figure, render_trace_figure

    figures = []
    if args.trace is not None:
        figures.append(render_trace_figure(args.trace, os.path.splitext(args.trace)[0] + ".png"))
    if args.bench is not None:
        figures.append(render_bench_figure(args.bench, os.path.splitext(args.bench)[0] + ".png"))
    _emit({"figures": figures})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kerngen",
        description="Kernel-distance training of two-layer generator networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a generator on a column-vector dataset")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--format", choices=("csv", "rawf64", "idx"), default="csv")
    p.add_argument("--scale", choices=("none", "minmax", "fixed255"), default="none")
    p.add_argument("--transpose", action="store_true", help="CSV rows are vectors")
    p.add_argument("--latent", type=int, default=None, help="latent dimension n")
    p.add_argument("--hidden", type=int, default=None, help="hidden dimension m")
    p.add_argument("--bandwidth", type=float, default=None, help="kernel bandwidth h")
    p.add_argument("--mu", type=float, default=None, help="learning rate")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="gradient-power smoothing factor")
    p.add_argument("--epsilon", type=float, default=None, help="denominator guard")
    p.add_argument("--batch", type=int, default=None, help="block size K (batched only)")
    p.add_argument("--rounds", type=int, default=None, help="full dataset sweeps")
    p.add_argument("--algorithm", choices=("preliminary", "final", "batched"), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--zero-power-init", action="store_true",
                   help="start power estimates at zero instead of the first gradient square")
    p.add_argument("--shuffle", action="store_true", help="reshuffle data each round")
    p.add_argument("--trace-every", type=int, default=None)
    p.add_argument("--eval-count", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON config file (flags override it)")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--trace", default=None, help="loss trace CSV path")
    p.add_argument("--plot", action="store_true", help="render the trace to PNG too")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample columns from a trained checkpoint")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "rawf64"), default=None,
                   help="default: csv when --out ends in .csv, else rawf64")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser(
        "score",
        help="kernel two-sample score between two sample files",
        description="Biased squared kernel distance between the two files' "
                    "column sets; better-matching samples produce smaller values.",
    )
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--bandwidth", type=float, required=True)
    p.add_argument("--scale", choices=("none", "minmax", "fixed255"), default="none")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("sa-bench", help="SGD-variant comparison on linear regression")
    p.add_argument("--dim", type=int, default=5)
    p.add_argument("--noise-var", type=float, default=0.1)
    p.add_argument("--mu", type=float, default=1e-3,
                   help="classical per-sample rate; batch:K variants run at K*mu")
    p.add_argument("--variants", type=_variant_tokens,
                   default=_variant_tokens("classical,batch:10,smooth:0.9,delay:5"))
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="benchmark CSV path")
    p.add_argument("--every", type=int, default=1, help="CSV row thinning")
    p.add_argument("--plot", action="store_true", help="render the benchmark to PNG too")
    p.set_defaults(func=cmd_sa_bench)

    p = sub.add_parser("report", help="render existing CSV outputs to PNG figures")
    p.add_argument("--trace", default=None, help="loss trace CSV")
    p.add_argument("--bench", default=None, help="sa-bench CSV")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DatasetError, CheckpointError, TrainingDiverged, ValueError,
            ArithmeticError, OSError) as exc:
        _note(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
