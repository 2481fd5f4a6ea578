"""Command-line harness: run, ablate, gen, check."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .checks import run_checks
from .config import RunConfig, StreamSpec, emit_config, parse_config
from .pipeline import RunVariant, run_experiment
from .report import emit_report
from .stream import export_stream, generate_stream, import_features

log = logging.getLogger("otcil")

ABLATION_VARIANTS = ("DMC_OT", "DMC", "NO_OT", "ALT_OT", "NO_TASK_PROMPT", "SIMULTANEOUS")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otcil")
    parser.add_argument("--log-level", default="warning",
                        choices=("debug", "info", "warning", "error"))
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_variant=True):
        p.add_argument("--config", type=Path, default=None, help="flat key=value config file")
        p.add_argument("--seed", type=int, action="append", default=None,
                       help="override seeds (repeatable)")
        p.add_argument("--out", type=Path, default=Path("out"), help="report directory")
        p.add_argument("--stream", default="synthetic",
                       help="'synthetic' or a path to a stream manifest")
        p.add_argument("--format", default="csv", choices=("csv", "structured"))
        if with_variant:
            p.add_argument("--variant", default=None, choices=ABLATION_VARIANTS)

    run_p = sub.add_parser("run", help="run one experiment from config")
    add_common(run_p)

    ablate_p = sub.add_parser("ablate", help="run every variant on one stream")
    add_common(ablate_p, with_variant=False)

    gen_p = sub.add_parser("gen", help="emit a synthetic stream to disk")
    gen_p.add_argument("--config", type=Path, default=None)
    gen_p.add_argument("--out", type=Path, default=Path("stream"))

    sub.add_parser("check", help="execute the invariant suite")
    return parser


def _load_config(path) -> "tuple[RunConfig, StreamSpec]":
    if path is None:
        return RunConfig(), StreamSpec()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def _load_stream(args, spec: StreamSpec):
    if args.stream == "synthetic":
        return generate_stream(spec), spec.feature_dim
    manifest = Path(args.stream)
    if not manifest.exists():
        raise FileNotFoundError(f"stream manifest not found: {manifest}")
    stream = import_features(manifest, validate_unit_norm=True)
    return stream, min(spec.feature_dim, stream.input_dim)


def _cmd_run(args) -> int:
    config, spec = _load_config(args.config)
    if args.seed:
        config = _with_seeds(config, args.seed)
    if getattr(args, "variant", None):
        config = _with_variant(config, args.variant)
    stream, feature_dim = _load_stream(args, spec)
    result = run_experiment(stream, config, seeds=config.seeds, feature_dim=feature_dim)
    paths = emit_report([result], args.out, fmt=args.format)
    for path in paths:
        log.info("wrote %s", path)
    print(
        f"{result.variant}: A_bar = {result.a_bar_mean:.2f} +/- {result.a_bar_std:.2f}, "
        f"A_B = {result.a_b_mean:.2f} +/- {result.a_b_std:.2f}"
    )
    return 0


def _cmd_ablate(args) -> int:
    config, spec = _load_config(args.config)
    if args.seed:
        config = _with_seeds(config, args.seed)
    stream, feature_dim = _load_stream(args, spec)
    results = []
    for name in ABLATION_VARIANTS:
        result = run_experiment(
            stream, config, variant=RunVariant(name), seeds=config.seeds,
            feature_dim=feature_dim,
        )
        print(
            f"{name}: A_bar = {result.a_bar_mean:.2f} +/- {result.a_bar_std:.2f}, "
            f"A_B = {result.a_b_mean:.2f} +/- {result.a_b_std:.2f}"
        )
        results.append(result)
    emit_report(results, args.out, fmt=args.format)
    return 0


def _cmd_gen(args) -> int:
    _, spec = _load_config(args.config)
    stream = generate_stream(spec)
    export_stream(stream, args.out)
    print(f"wrote stream with {len(stream)} tasks to {args.out}")
    return 0


def _with_seeds(config: RunConfig, seeds) -> RunConfig:
    import dataclasses

    return dataclasses.replace(config, seeds=tuple(seeds))


def _with_variant(config: RunConfig, variant: str) -> RunConfig:
    import dataclasses

    return dataclasses.replace(config, variant=variant)


def default_config_text() -> str:
    """Reference config, ready to save and edit."""
    return emit_config(RunConfig(), StreamSpec())


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level.upper())
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "ablate":
            return _cmd_ablate(args)
        if args.command == "gen":
            return _cmd_gen(args)
        if args.command == "check":
            failures = run_checks()
            return 0 if failures == 0 else 1
        raise AssertionError(f"unhandled command {args.command}")
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def console_main() -> None:
    raise SystemExit(main())
