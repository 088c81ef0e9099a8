"""Command-line front end.

Subcommands: run, compare, gen-stream, inspect-model, dispersion.
Exit codes: 0 ok, 2 usage, 3 validation/format error, 4 I/O error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .errors import DynormError
from .model import describe, load_model
from .stats import dispersion
from .stream import export_stream
from .tensor import read_fixture

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_IO = 0, 2, 3, 4


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _output_args(args, cfg_path):
    cfg = harness.load_config(cfg_path)
    fmt = (args.format or cfg.output_format).lower()
    out = args.out or (str(cfg.output_path) if cfg.output_path else None)
    timing = cfg.include_timing and not args.no_timing
    return fmt, out, timing


def cmd_run(args) -> int:
    report = harness.run_scenario(args.model, args.config, args.seed_override, args.mode)
    fmt, out, timing = _output_args(args, args.config)
    _emit(harness.render_report(report, fmt, timing), out)
    if out:
        print(f"{report.mode}: accuracy {report.accuracy:.4f} over {len(report.records)} batches -> {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    modes = args.modes.split(",") if args.modes else None
    cmp = harness.compare_modes(args.model, args.config, modes, args.seed_override)
    fmt, out, timing = _output_args(args, args.config)
    if out:
        _emit(harness.render_report(cmp, fmt, timing), out)
        print(cmp.table())
    else:
        _emit(harness.render_report(cmp, fmt, timing), None)
    return EXIT_OK


def cmd_gen_stream(args) -> int:
    cfg = harness.load_config(args.config)
    scenario = cfg.scenario
    if args.seed_override is not None:
        scenario = scenario.replace(seed=args.seed_override)
    if not args.out:
        print("gen-stream needs --out DIR", file=sys.stderr)
        return EXIT_USAGE
    files = export_stream(scenario, args.out)
    print(f"wrote {len(files) - 1} batches and labels.csv to {args.out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    model, store = load_model(args.model)
    _emit(describe(model, store) + "\n", args.out)
    return EXIT_OK


def cmd_dispersion(args) -> int:
    lines = ["fixture,l2_mean,cos_dist_mean"]
    for path in args.fixtures:
        rep = dispersion(read_fixture(path), use_std=args.use_std)
        lines.append(f"{path},{rep.l2_mean!r},{rep.cos_dist_mean!r}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynorm", description="Cluster-aware test-time normalization experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model_required=False):
        sp.add_argument("--config", required=True, help="experiment config (JSON)")
        sp.add_argument("--model", required=model_required, help="model manifest; overrides the config's 'model'")
        sp.add_argument("--out", help="output path (default: config output.path, else stdout)")
        sp.add_argument("--format", choices=harness.REPORT_FORMATS, help="report format")
        sp.add_argument("--seed-override", type=int, help="replace the scenario seed")
        sp.add_argument("--no-timing", action="store_true", help="omit wall-time fields")

    sp = sub.add_parser("run", help="run one scenario with one normalizer")
    common(sp)
    sp.add_argument("--mode", help="override normalizer.mode")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="run the same stream under several normalizers")
    common(sp)
    sp.add_argument("--modes", help="comma-separated modes (default: config compare.modes)")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("gen-stream", help="export a scenario as binary fixtures + labels.csv")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--seed-override", type=int)
    sp.set_defaults(func=cmd_gen_stream)

    sp = sub.add_parser("inspect-model", help="print a model manifest's layers")
    sp.add_argument("--model", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_inspect)

    sp = sub.add_parser("dispersion", help="IN-vs-TBN dispersion of fixture batches")
    sp.add_argument("fixtures", nargs="+", help="binary tensor fixtures")
    sp.add_argument("--use-std", action="store_true", help="compare std vectors instead of means")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_dispersion)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DynormError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
