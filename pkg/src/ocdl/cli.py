"""Command-line interface: train, eval, export, preprocess.

Flags are the primary interface; ``--config FILE`` may supply any of them as
``key=value`` lines, with explicit flags taking precedence.  Exit codes:
0 success, 1 runtime failure, 2 usage or configuration error.  The
``OCDL_THREADS`` environment variable mirrors ``--threads``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from itertools import islice
from pathlib import Path

import numpy as np

from ocdl import alg1, alg2, ingest, spectral
from ocdl.config import TrainConfig
from ocdl.csc import AdmmSettings
from ocdl.dict_space import evaluate
from ocdl.ingest import DatasetSource, IngestError
from ocdl.persist import (
    CheckpointError,
    checkpoint_from_state,
    export_dictionary_tiles,
    append_metrics,
    load_checkpoint,
    save_checkpoint,
    save_plane,
)

log = logging.getLogger("ocdl")


class ConfigError(ValueError):
    """Usage or configuration problem; maps to exit code 2."""


def _default_threads() -> int:
    raw = os.environ.get("OCDL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--threads",
        type=int,
        default=_default_threads(),
        help="cap on worker threads for batched transforms (env OCDL_THREADS)",
    )
    parser.add_argument(
        "--verbose", "-v", action="store_true", help="log per-sample progress"
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ocdl",
        description="Convolutional sparse coding and online dictionary learning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="learn a dictionary from an image directory")
    train.add_argument("--config", default=None, help="key=value file of defaults")
    train.add_argument("--data-dir", required=True)
    train.add_argument("--k", type=int, required=True, help="number of filters")
    train.add_argument("--filter-size", type=int, default=8)
    train.add_argument("--algorithm", choices=("alg1", "alg2"), default="alg2")
    train.add_argument("--lambda-frac", type=float, default=0.1)
    train.add_argument("--lambda-abs", type=float, default=None)
    train.add_argument("--rho", dest="rho0", type=float, default=10.0)
    train.add_argument("--max-iter", type=int, default=300)
    train.add_argument("--eps", type=float, default=1e-4)
    train.add_argument("--relax", type=float, default=1.8)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--height", type=int, default=None)
    train.add_argument("--width", type=int, default=None)
    train.add_argument("--checkpoint", dest="checkpoint_path", default=None)
    train.add_argument("--checkpoint-every", type=int, default=0)
    train.add_argument("--metrics", dest="metrics_path", default=None)
    train.add_argument("--shuffle-seed", type=int, default=None)
    train.add_argument("--highpass-reg", type=float, default=5.0)
    train.add_argument("--resume", default=None, help="checkpoint to continue from")
    train.add_argument(
        "--plot",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="render a metrics figure next to the metrics CSV",
    )
    train.add_argument(
        "--accurate-objective",
        action=argparse.BooleanOptionalAction,
        default=False,
        help="recode each sample under the updated dictionary for the metric",
    )
    train.add_argument(
        "--rescue-dead-filters",
        action=argparse.BooleanOptionalAction,
        default=False,
        help="re-randomize filters that stay identically zero for 5 samples",
    )
    _add_common(train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a test directory")
    ev.add_argument("checkpoint")
    ev.add_argument("--data-dir", required=True)
    ev.add_argument("--lambda", dest="lambda_override", type=float, default=None)
    ev.add_argument("--csv", dest="csv_path", default=None)
    ev.add_argument("--highpass-reg", type=float, default=5.0)
    ev.add_argument("--max-iter", type=int, default=300)
    ev.add_argument("--eps", type=float, default=1e-4)
    ev.add_argument(
        "--plot", action=argparse.BooleanOptionalAction, default=True,
        help="render a figure next to the CSV (requires --csv)",
    )
    _add_common(ev)

    ex = sub.add_parser("export", help="render dictionary filters as a tile image")
    ex.add_argument("checkpoint")
    ex.add_argument("--out", required=True, help="output PNG path")
    ex.add_argument("--cols", type=int, default=8)
    _add_common(ex)

    pre = sub.add_parser("preprocess", help="materialize preprocessed planes")
    pre.add_argument("--data-dir", required=True)
    pre.add_argument("--out-dir", required=True)
    pre.add_argument("--height", type=int, default=None)
    pre.add_argument("--width", type=int, default=None)
    pre.add_argument("--reg", type=float, default=5.0)
    _add_common(pre)

    return parser


def _read_config_file(path) -> list[str]:
    """Turn key=value lines into flag tokens (explicit argv wins later)."""
    tokens: list[str] = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("_", "-")
        value = value.strip()
        if value.lower() == "true":
            tokens.append(f"--{key}")
        elif value.lower() == "false":
            tokens.append(f"--no-{key}")
        else:
            tokens.extend((f"--{key}", value))
    return tokens


def _inject_config(argv: list[str]) -> list[str]:
    """Insert config-file tokens right after the subcommand."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise ConfigError("--config requires a file path")
    tokens = _read_config_file(argv[idx + 1])
    return argv[:1] + tokens + argv[1:]


def _make_source(args_dir, height, width, reg, shuffle_seed=None, highpass=True):
    try:
        return DatasetSource.from_dir(
            args_dir,
            height=height,
            width=width,
            highpass_reg=reg,
            highpass=highpass,
            shuffle_seed=shuffle_seed,
        )
    except IngestError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_train(config: TrainConfig, accurate_objective: bool = False) -> int:
    try:
        config.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    spectral.set_thread_count(config.threads)

    source = _make_source(
        config.data_dir,
        config.height,
        config.width,
        config.highpass_reg,
        config.shuffle_seed,
    )
    if source.height is None:
        first = ingest.load_grayscale(source.files[0], source.allow_16bit)
        source.height, source.width = first.shape

    algorithm_id = 1 if config.algorithm == "alg1" else 2
    module = alg1 if algorithm_id == 1 else alg2
    settings = config.settings()
    state = None
    skip = 0
    if config.resume is not None:
        ckpt = load_checkpoint(config.resume)
        if ckpt.algorithm != algorithm_id:
            raise ConfigError(
                f"checkpoint was written by alg{ckpt.algorithm}, "
                f"requested {config.algorithm}"
            )
        settings.rho0 = ckpt.rho0
        state_cls = alg1.Alg1State if algorithm_id == 1 else alg2.Alg2State
        state = state_cls(
            bank=ckpt.bank(),
            history=ckpt.history(),
            settings=settings,
            lam=ckpt.lam,
            seed=ckpt.rng_state[0],
        )
        skip = ckpt.n
        source.height, source.width = ckpt.height, ckpt.width
        log.info("resuming after sample %d from %s", skip, config.resume)
    elif config.metrics_path and Path(config.metrics_path).exists():
        Path(config.metrics_path).unlink()

    planes = ingest.stream(source)
    if skip:
        planes = islice(planes, skip, None)

    def on_sample(live_state, row):
        if config.metrics_path:
            append_metrics(row, config.metrics_path)
        if (
            config.checkpoint_path
            and config.checkpoint_every > 0
            and row.sample_index % config.checkpoint_every == 0
        ):
            save_checkpoint(
                checkpoint_from_state(live_state, algorithm_id),
                config.checkpoint_path,
            )
        log.info(
            "sample %d: objective %.6g (%d coding iters, %d dictionary iters)",
            row.sample_index,
            row.csc_objective,
            row.csc_iterations,
            row.dict_iterations,
        )

    state, rows = module.train(
        planes,
        k=config.k,
        m=config.filter_size,
        settings=settings,
        lam=config.lambda_abs,
        lambda_frac=config.lambda_frac,
        seed=config.seed,
        state=state,
        rescue_dead_filters=config.rescue_dead_filters,
        accurate_objective=accurate_objective,
        on_sample=on_sample,
    )

    if config.checkpoint_path:
        save_checkpoint(
            checkpoint_from_state(state, algorithm_id), config.checkpoint_path
        )
    if config.plot and config.metrics_path and rows:
        from ocdl.report import render_training_figure

        render_training_figure(
            config.metrics_path, Path(config.metrics_path).with_suffix(".png")
        )

    window = rows[-5:] if rows else []
    tail = float(np.mean([r.csc_objective for r in window])) if window else float("nan")
    print(
        f"trained {len(rows)} samples with {config.algorithm} "
        f"(lambda={state.lam:.6g}); trailing mean objective {tail:.6g}"
    )
    return 0


def cmd_eval(
    checkpoint,
    data_dir,
    lambda_override=None,
    csv_path=None,
    plot=True,
    highpass_reg=5.0,
    max_iter=300,
    eps=1e-4,
) -> int:
    if lambda_override is not None and lambda_override <= 0:
        raise ConfigError("lambda override must be positive")
    ckpt = load_checkpoint(checkpoint)
    lam = lambda_override if lambda_override is not None else ckpt.lam
    source = _make_source(data_dir, ckpt.height, ckpt.width, highpass_reg)
    settings = AdmmSettings(rho0=ckpt.rho0, max_iter=max_iter, eps_abs=eps, eps_rel=eps)
    report = evaluate(ingest.stream(source), ckpt.bank(), lam, settings)
    for path, value in zip(source.files, report.per_image_objective):
        print(f"{path}: {value:.8g}")
    print(f"mean objective ({len(report.per_image_objective)} images): "
          f"{report.mean_objective:.8g}")
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("index", "path", "objective"))
            for idx, (path, value) in enumerate(
                zip(source.files, report.per_image_objective)
            ):
                writer.writerow((idx, path, repr(value)))
        if plot:
            from ocdl.report import render_eval_figure

            render_eval_figure(report, Path(csv_path).with_suffix(".png"))
    return 0


def cmd_export(checkpoint, out, cols=8) -> int:
    if cols < 1:
        raise ConfigError("cols must be at least 1")
    ckpt = load_checkpoint(checkpoint)
    export_dictionary_tiles(ckpt.bank(), out, cols=cols)
    print(f"wrote {ckpt.k} tiles to {out}")
    return 0


def cmd_preprocess(data_dir, out_dir, height=None, width=None, reg=5.0) -> int:
    source = _make_source(data_dir, height, width, reg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "preprocess_report.csv"
    with open(report_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            (
                "path",
                "original_height",
                "original_width",
                "output_height",
                "output_width",
                "mean_before",
                "mean_after",
            )
        )
        for (plane, record), path in zip(
            ingest.stream_with_records(source), source.files
        ):
            save_plane(plane, out_dir / (path.stem + ".plane"))
            writer.writerow(
                (
                    record.path,
                    record.original_height,
                    record.original_width,
                    record.output_height,
                    record.output_width,
                    repr(record.mean_before),
                    repr(record.mean_after),
                )
            )
    print(f"preprocessed {len(source.files)} images into {out_dir}")
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _inject_config(argv)
        args = _build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(message)s",
            stream=sys.stderr,
        )
        if args.command == "train":
            config = TrainConfig(
                data_dir=args.data_dir,
                k=args.k,
                filter_size=args.filter_size,
                algorithm=args.algorithm,
                lambda_frac=args.lambda_frac,
                lambda_abs=args.lambda_abs,
                rho0=args.rho0,
                max_iter=args.max_iter,
                eps=args.eps,
                relax=args.relax,
                seed=args.seed,
                height=args.height,
                width=args.width,
                checkpoint_path=args.checkpoint_path,
                checkpoint_every=args.checkpoint_every,
                metrics_path=args.metrics_path,
                shuffle_seed=args.shuffle_seed,
                highpass_reg=args.highpass_reg,
                resume=args.resume,
                threads=args.threads,
                plot=args.plot,
                rescue_dead_filters=args.rescue_dead_filters,
            )
            return cmd_train(config, accurate_objective=args.accurate_objective)
        spectral.set_thread_count(args.threads)
        if args.command == "eval":
            return cmd_eval(
                args.checkpoint,
                args.data_dir,
                lambda_override=args.lambda_override,
                csv_path=args.csv_path,
                plot=args.plot,
                highpass_reg=args.highpass_reg,
                max_iter=args.max_iter,
                eps=args.eps,
            )
        if args.command == "export":
            return cmd_export(args.checkpoint, args.out, cols=args.cols)
        if args.command == "preprocess":
            return cmd_preprocess(
                args.data_dir, args.out_dir, args.height, args.width, args.reg
            )
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IngestError, CheckpointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
