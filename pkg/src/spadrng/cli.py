"""Command line: ``spadrng {simulate,pipeline,analyze,rate-curve}``.

Exit codes: 0 success (for ``pipeline``/``analyze``, every statistical check
passed), 1 a statistical check failed, 2 bad input or configuration.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import rate_curve, serial_correlation
from .config import EXTRACTORS, PRESETS, ConfigError, PipelineConfig, load_config, preset
from .formats import FormatError, read_bits
from .pipeline import StageError, load_source, run, simulate, write_result, write_simulation

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS), default="randy")
    p.add_argument("--config", type=Path, help="JSON file overriding the preset")
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float, help="simulated seconds")
    p.add_argument("--frames", type=int, help="linospad: number of frames (sets the duration)")
    p.add_argument("--extractor", choices=EXTRACTORS)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--guard", type=int, help="guard window in samples (randy preset: 18; linospad: estimated)")
    p.add_argument("--out", type=Path, help="output directory")


def resolve_config(args) -> PipelineConfig:
    base = preset(args.preset)
    cfg = load_config(args.config, base) if args.config else base
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    sim = cfg.sim
    if args.duration is not None:
        sim = replace(sim, duration=args.duration)
    if args.frames is not None:
        if cfg.mode != "linospad":
            raise ConfigError("frames: only meaningful in linospad mode")
        sim = replace(sim, duration=args.frames * cfg.array.frame_time)
    cfg = replace(cfg, sim=sim)
    if args.extractor is not None:
        cfg = replace(cfg, extractor=args.extractor)
    if args.max_depth is not None:
        cfg = replace(cfg, max_depth=args.max_depth)
    if args.guard is not None:
        cfg = replace(cfg, conditioning=replace(cfg.conditioning, guard=args.guard))
    if args.out is not None:
        cfg = replace(cfg, output_dir=str(args.out))
    return cfg


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    m = write_simulation(cfg, simulate(cfg), cfg.output_dir)
    print(json.dumps(m["summary"], indent=2))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = resolve_config(args)
    source = load_source(cfg, args.input) if args.input else None
    result = run(cfg, source)
    m = write_result(result, cfg.output_dir, args.input)
    for name, ok in m["checks"].items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    rates = json.loads(Path(cfg.output_dir, "rates.json").read_text())
    print(json.dumps({k: v for k, v in rates.items() if not isinstance(v, dict)}, indent=2))
    return EXIT_OK if m["passed"] else EXIT_FAIL


def cmd_analyze(args) -> int:
    bits = read_bits(args.bits)
    report = serial_correlation(bits, args.max_lag)
    print(report.to_json() if args.full else json.dumps(
        {k: v for k, v in report.to_dict().items() if k not in ("coefficients", "within", "lags")}, indent=2
    ))
    if not report.passed:
        print(f"FAIL: lags outside the 99% band: {report.outside_lags}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_rate_curve(args) -> int:
    freqs = np.logspace(np.log10(args.fmin), np.log10(args.fmax), args.points)
    curve = rate_curve(args.rate, freqs, args.loss)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "rate_curve.csv").write_text(curve.to_csv())
    (out / "rate_curve.gp").write_text(curve.gnuplot("rate_curve.csv"))
    print(f"peak entropy at {curve.peak_entropy_freq:.6g} Hz (grid), {args.rate / np.log(2):.6f} Hz (exact)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spadrng", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write detector events (randy) or tag frames (linospad)")
    _config_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pipeline", help="condition, extract and test; exit 1 if a check fails")
    _config_args(p)
    p.add_argument("--input", type=Path, help="events.bin or tags.bin from 'simulate' instead of simulating")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("analyze", help="serial-correlation report of a packed-bit file")
    p.add_argument("bits", type=Path)
    p.add_argument("--max-lag", type=int, default=100)
    p.add_argument("--full", action="store_true", help="include every lag coefficient")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("rate-curve", help="entropy and i.i.d. rate versus sampling frequency")
    p.add_argument("--rate", type=float, default=200e3, help="detection rate [counts/s]")
    p.add_argument("--fmin", type=float, default=1e3)
    p.add_argument("--fmax", type=float, default=1e9)
    p.add_argument("--points", type=int, default=601)
    p.add_argument("--loss", type=float, help="conditioning loss fraction for the approximate column")
    p.add_argument("--out", type=Path, default=Path("."))
    p.set_defaults(func=cmd_rate_curve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, StageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
