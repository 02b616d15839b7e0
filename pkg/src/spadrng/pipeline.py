"""End-to-end chains for the single-detector and array generators."""
from __future__ import annotations

import contextlib
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    BitReport,
    PixelRates,
    RateSummary,
    aggregate_rates,
    binary_entropy,
    empirical_entropy,
    extraction_efficiency,
    serial_correlation,
)
from .conditioning import (
    ConditioningReport,
    InterarrivalHistogram,
    cull_pixels,
    estimate_cutoff,
    guard_report,
    interarrival_histogram,
    ks_exponential,
    remove_guard,
)
from .config import ConfigError, PipelineConfig
from .extraction import (
    ExtractorStats,
    SymbolStream,
    peres,
    protocol_diff,
    protocol_odeven,
    von_neumann,
    zhou_bruck,
)
from .formats import read_events, read_tags, write_bits, write_events, write_tags
from .sampling import SampledBitStream, concat, sample_events, split_coarse_fine
from .source import (
    LINOSPAD_CODES,
    FrameSet,
    PhotonEventStream,
    apply_detector,
    gen_poisson_arrivals,
    simulate_array,
)

KS_LEVEL = 0.01
BIAS_SIGMAS = 3.0


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except (ValueError, OSError, ArithmeticError) as exc:
        raise StageError(name, exc) from exc


def bias_ok(n_bits: int, bias: float) -> bool:
    """Bias within ``BIAS_SIGMAS`` standard errors of a fair coin."""
    return n_bits > 0 and bias < BIAS_SIGMAS * 0.5 / math.sqrt(n_bits)


@dataclass
class RandyResult:
    config: PipelineConfig
    events: PhotonEventStream
    raw: SampledBitStream
    histogram: InterarrivalHistogram
    conditioned: SampledBitStream
    conditioning: ConditioningReport
    ks: tuple[float, float]
    bits: np.ndarray
    stats: ExtractorStats | None
    report: BitReport
    conditioned_report: BitReport
    raw_report: BitReport
    rates: dict
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


@dataclass
class LinospadResult:
    config: PipelineConfig
    frames: FrameSet
    histogram: InterarrivalHistogram
    conditioning: ConditioningReport
    kept: frozenset
    coarse_bits: list[np.ndarray]  # per pixel; empty for culled pixels
    fine_bits: list[np.ndarray]
    pixels: list[PixelRates]
    efficiency: list[float]
    fine_bias: list[float]
    summary: RateSummary
    coarse_report: BitReport
    fine_report: BitReport
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


# ---------------------------------------------------------------------------
# simulation


def simulate_randy(cfg: PipelineConfig) -> PhotonEventStream:
    with stage("simulate"):
        arrivals = gen_poisson_arrivals(cfg.sim)
    with stage("detector"):
        return apply_detector(arrivals, cfg.detector, cfg.seed)


def simulate_linospad(cfg: PipelineConfig) -> FrameSet:
    with stage("simulate"):
        return simulate_array(cfg.array_config(), cfg.sim)


def simulate(cfg: PipelineConfig):
    return simulate_randy(cfg) if cfg.mode == "randy" else simulate_linospad(cfg)


def odeven_window(rate_per_sample: float, mean_count: float) -> int:
    """Window length in samples holding ``mean_count`` events on average."""
    if rate_per_sample <= 0:
        raise ValueError("no events to size the OdEven window")
    return max(1, int(round(mean_count / rate_per_sample)))


def _guard(hist: InterarrivalHistogram, params) -> tuple[int, int | None]:
    """Guard length and estimated cross-point; a configured guard wins and tolerates a failed estimate."""
    if params.guard is None:
        cutoff = estimate_cutoff(hist, params.band, params.run)
        return cutoff - 1, cutoff
    try:
        cutoff = estimate_cutoff(hist, params.band, params.run)
    except ValueError:
        cutoff = None
    return params.guard, cutoff


# ---------------------------------------------------------------------------
# single detector


def run_randy(cfg: PipelineConfig, events: PhotonEventStream | None = None) -> RandyResult:
    if cfg.mode != "randy":
        raise ConfigError(f"mode: expected 'randy', got {cfg.mode!r}")
    if cfg.extractor == "zhou-bruck":
        raise ConfigError("extractor: zhou-bruck needs symbols; the randy mode produces bits")
    if events is None:
        events = simulate_randy(cfg)
    cond_p = cfg.conditioning
    with stage("sample"):
        raw = sample_events(events, cfg.sampling.sample_period, cfg.detector.pulse_width)
    with stage("histogram"):
        hist = interarrival_histogram(raw, cond_p.fit_from)
        guard, cutoff = _guard(hist, cond_p)
    with stage("guard"):
        cond = remove_guard(raw, guard)
        creport = guard_report([raw], [cond], guard, cutoff)
    with stage("ks"):
        ks = ks_exponential(cond)
    duration = events.duration
    with stage("baselines"):
        diff = protocol_diff(raw)
        tau = odeven_window(raw.p1, cfg.odeven_mean_count)
        odeven = protocol_odeven(raw, tau)
    with stage("extract"):
        stats = None
        if cfg.extractor == "peres":
            bits, stats = peres(cond, cfg.max_depth)
        elif cfg.extractor == "von-neumann":
            bits = von_neumann(cond)
        elif cfg.extractor == "diff":
            bits = diff
        else:
            bits = odeven
    with stage("analyze"):
        report = serial_correlation(bits, cfg.max_lag)
        cond_report = serial_correlation(cond, cfg.max_lag)
        raw_report = serial_correlation(raw, cfg.max_lag)
    ideal = binary_entropy(cond.p1) * creport.effective_sample_rate if creport.effective_sample_rate else 0.0
    rates = {
        "duration_s": duration,
        "detected_rate_cps": events.rate,
        "sample_clock_hz": 1.0 / raw.sample_period if raw.sample_period else None,
        "conditioned_rate_cps": cond.n_ones / duration if duration else 0.0,
        "extractor": cfg.extractor,
        "output_rate_bps": bits.size / duration if duration else 0.0,
        "ideal_iid_rate_bps": ideal,
        "diff_rate_bps": diff.size / duration if duration else 0.0,
        "odeven_rate_bps": odeven.size / duration if duration else 0.0,
        "odeven_window_samples": tau,
    }
    checks = {
        "output_correlation": report.passed,
        "output_bias": bias_ok(report.n_bits, report.bias),
        "conditioned_correlation": cond_report.passed,
        "conditioned_ks": ks[1] >= KS_LEVEL,
    }
    return RandyResult(
        cfg, events, raw, hist, cond, creport, ks, bits, stats, report, cond_report, raw_report, rates, checks
    )


# ---------------------------------------------------------------------------
# array


def run_linospad(cfg: PipelineConfig, frames: FrameSet | None = None) -> LinospadResult:
    """Coarse bits from crosstalk-free pixels (guarded, then Peres); fine bits from every pixel (Zhou-Bruck)."""
    if cfg.mode != "linospad":
        raise ConfigError(f"mode: expected 'linospad', got {cfg.mode!r}")
    if cfg.extractor not in ("zhou-bruck", "peres", "von-neumann"):
        raise ConfigError(f"extractor: {cfg.extractor!r} is not available in linospad mode")
    if frames is None:
        frames = simulate_linospad(cfg)
    cond_p = cfg.conditioning
    with stage("split"):
        view = split_coarse_fine(frames)
    with stage("histogram"):
        hist = interarrival_histogram(list(view.coarse), cond_p.fit_from)
        guard, cutoff = _guard(hist, cond_p)
    with stage("guard"):
        cond = [remove_guard(s, guard) for s in view.coarse]
    with stage("crosstalk"):
        kept, cull = cull_pixels(frames, cond_p.cull_window, cond_p.cull_threshold, cond_p.cull_distance)
        creport = guard_report(view.coarse, cond, guard, cutoff)
        creport.pixels_kept = cull.pixels_kept
        creport.pixels_discarded = cull.pixels_discarded
    coarse_bits, fine_bits, pixels, eta, fine_bias = [], [], [], [], []
    with stage("extract"):
        for p in range(view.n_pixels):
            if p in kept:
                cb = von_neumann(cond[p]) if cfg.extractor == "von-neumann" else peres(cond[p], cfg.max_depth)[0]
            else:
                cb = np.empty(0, np.uint8)
            codes = view.fine[p]
            fb = zhou_bruck(SymbolStream(codes, LINOSPAD_CODES), cfg.max_depth)[0] if codes.size else np.empty(0, np.uint8)
            coarse_bits.append(cb)
            fine_bits.append(fb)
            pixels.append(PixelRates(p, int(cb.size), int(fb.size), int(codes.size), p in kept))
            h = empirical_entropy(codes) if codes.size else 0.0
            eta.append(extraction_efficiency(fb.size, codes.size, h) if h > 0 else 0.0)
            fine_bias.append(abs(float(fb.mean()) - 0.5) if fb.size else 0.5)
    duration = len(frames) * frames.frame_time
    summary = aggregate_rates(pixels, duration, view.n_pixels)
    with stage("analyze"):
        coarse_all = np.concatenate(coarse_bits)
        fine_all = np.concatenate(fine_bits)
        coarse_report = serial_correlation(coarse_all, cfg.max_lag)
        fine_report = serial_correlation(fine_all, cfg.max_lag)
    checks = {
        "coarse_correlation": coarse_report.passed,
        "coarse_bias": bias_ok(coarse_report.n_bits, coarse_report.bias),
        "fine_correlation": fine_report.passed,
        "fine_bias": bias_ok(fine_report.n_bits, fine_report.bias),
    }
    return LinospadResult(
        cfg, frames, hist, creport, kept, coarse_bits, fine_bits, pixels, eta, fine_bias,
        summary, coarse_report, fine_report, checks,
    )


def run(cfg: PipelineConfig, source=None):
    return run_randy(cfg, source) if cfg.mode == "randy" else run_linospad(cfg, source)


# ---------------------------------------------------------------------------
# files


def load_source(cfg: PipelineConfig, path):
    """Read a file written by :func:`write_simulation` for ``cfg``'s mode."""
    with stage("read"):
        if cfg.mode == "randy":
            return read_events(path, n_ticks=cfg.sim.n_ticks)
        return read_tags(path, cfg.array.buffer_cap)


def manifest(cfg: PipelineConfig, outputs: list[str], extra: dict | None = None) -> dict:
    m = {"version": __version__, "seed": cfg.seed, "config": cfg.to_dict(), "outputs": outputs}
    m.update(extra or {})
    return m


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def write_simulation(cfg: PipelineConfig, source, out_dir) -> dict:
    out = Path(out_dir)
    with stage("write"):
        out.mkdir(parents=True, exist_ok=True)
        if cfg.mode == "randy":
            write_events(out / "events.bin", source)
            period = cfg.sampling.sample_period * cfg.sim.tick
            extra = {
                "summary": {
                    "n_events": len(source),
                    "detected_rate_cps": source.rate,
                    "sample_clock_hz": 1.0 / period,
                    "labels": source.label_counts(),
                }
            }
            names = ["events.bin", "events.bin.labels"]
        else:
            write_tags(out / "tags.bin", source)
            extra = {
                "summary": {
                    "n_frames": len(source),
                    "frame_time_s": source.frame_time,
                    "n_pixels": source.n_pixels,
                    "n_tags": int(source.coarse.size),
                    "saturated_pixel_frames": int(source.saturated.sum()),
                }
            }
            names = ["tags.bin"]
        m = manifest(cfg, names, extra)
        _write_json(out / "manifest.json", m)
    return m


def write_result(result, out_dir, source_path=None) -> dict:
    out = Path(out_dir)
    cfg = result.config
    with stage("write"):
        out.mkdir(parents=True, exist_ok=True)
        (out / "histogram.csv").write_text(result.histogram.to_csv(4 * result.histogram.fit_from))
        (out / "conditioning.json").write_text(result.conditioning.to_json() + "\n")
        if isinstance(result, RandyResult):
            write_bits(out / "bits.bin", result.bits, 0.0)
            reports = {
                "output": result.report.to_dict(),
                "conditioned": result.conditioned_report.to_dict(),
                "raw": result.raw_report.to_dict(),
                "ks": {"statistic": result.ks[0], "p_value": result.ks[1], "level": KS_LEVEL},
            }
            rates = dict(result.rates)
            if result.stats is not None:
                rates["extractor_stats"] = json.loads(result.stats.to_json())
            names = ["bits.bin"]
        else:
            write_bits(out / "coarse_bits.bin", np.concatenate(result.coarse_bits), 0.0)
            write_bits(out / "fine_bits.bin", np.concatenate(result.fine_bits), 0.0)
            reports = {"coarse": result.coarse_report.to_dict(), "fine": result.fine_report.to_dict()}
            rates = json.loads(result.summary.to_json())
            rates["mean_efficiency"] = float(np.mean(result.efficiency))
            with open(out / "pixels.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["pixel", "kept", "n_tags", "coarse_bits", "fine_bits", "efficiency", "fine_bias"])
                for px, e, b in zip(result.pixels, result.efficiency, result.fine_bias):
                    w.writerow([px.pixel, int(px.kept), px.n_tags, px.coarse_bits, px.fine_bits, f"{e:.6f}", f"{b:.3e}"])
            names = ["coarse_bits.bin", "fine_bits.bin", "pixels.csv"]
        _write_json(out / "bit_report.json", reports)
        _write_json(out / "rates.json", rates)
        names += ["histogram.csv", "conditioning.json", "bit_report.json", "rates.json"]
        m = manifest(
            cfg,
            names,
            {"input": None if source_path is None else str(source_path), "checks": result.checks, "passed": result.passed},
        )
        _write_json(out / "manifest.json", m)
    return m
