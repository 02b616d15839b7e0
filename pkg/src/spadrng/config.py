"""Pipeline configuration, JSON loading and the two built-in presets."""
from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .source import (
    LINOSPAD_TICK,
    ArrayConfig,
    DetectorModel,
    SimConfig,
    TdcProfile,
    default_pixel_rates,
    neighbor_crosstalk,
)

MODES = ("randy", "linospad")
EXTRACTORS = ("peres", "von-neumann", "zhou-bruck", "diff", "odeven")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SamplingParams:
    sample_period: int = 10  # ticks


@dataclass(frozen=True)
class ConditioningParams:
    guard: int | None = None  # samples; None estimates it from the histogram
    band: tuple[float, float] = (0.9, 1.1)
    run: int = 3
    fit_from: int = 128
    cull_window: int = 280  # ticks
    cull_threshold: float = 0.005
    cull_distance: int = 2


@dataclass(frozen=True)
class ArrayParams:
    """Sensor geometry; ``per_pixel_rate`` defaults to a trend around ``sim.photon_rate``."""

    per_pixel_rate: tuple[float, ...] | None = None
    crosstalk_probs: tuple[float, ...] = (0.02, 0.015)
    tdc_entropy: float = 6.8
    tdc_missing: int = 8
    tdc_weights: tuple[float, ...] | None = None
    n_pixels: int = 256
    n_tdc: int = 64
    frame_time: float = 320e-6
    buffer_cap: int = 512
    crosstalk_jitter: int = 3


@dataclass(frozen=True)
class PipelineConfig:
    mode: str
    sim: SimConfig
    detector: DetectorModel
    seed: int = 0
    sampling: SamplingParams = field(default_factory=SamplingParams)
    conditioning: ConditioningParams = field(default_factory=ConditioningParams)
    array: ArrayParams = field(default_factory=ArrayParams)
    extractor: str = "peres"
    max_depth: int = 32
    max_lag: int = 100
    odeven_mean_count: float = 10.0  # expected events per OdEven window
    output_dir: str = "out"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode: must be one of {MODES}, got {self.mode!r}")
        if self.extractor not in EXTRACTORS:
            raise ConfigError(f"extractor: must be one of {EXTRACTORS}, got {self.extractor!r}")
        if not 1 <= self.max_depth <= 40:
            raise ConfigError(f"max_depth: must be in 1..40, got {self.max_depth}")
        if self.max_lag < 1:
            raise ConfigError(f"max_lag: must be >= 1, got {self.max_lag}")
        if self.sim.seed != self.seed:
            object.__setattr__(self, "sim", replace(self.sim, seed=self.seed))

    def array_config(self) -> ArrayConfig:
        a = self.array
        rates = a.per_pixel_rate or default_pixel_rates(self.sim.photon_rate, a.n_tdc)
        if a.tdc_weights is not None:
            profile = TdcProfile.from_counts(a.tdc_weights)
        else:
            profile = TdcProfile.nonlinear(a.tdc_entropy, a.tdc_missing)
        return ArrayConfig(
            per_pixel_rate=rates,
            detector=self.detector,
            tdc_profile=profile,
            crosstalk_map=neighbor_crosstalk(a.n_tdc, a.crosstalk_probs) if a.crosstalk_probs else (),
            n_pixels=a.n_pixels,
            n_tdc=a.n_tdc,
            frame_time=a.frame_time,
            buffer_cap=a.buffer_cap,
            crosstalk_jitter=a.crosstalk_jitter,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def randy() -> PipelineConfig:
    """Single SPAD at about 200 kcps sampled at 100 MHz, 10 s."""
    return PipelineConfig(
        mode="randy",
        sim=SimConfig(photon_rate=177e3, duration=10.0, tick=1e-9),
        detector=DetectorModel(
            dead_time=30, pulse_width=5, afterpulse_prob=0.13, afterpulse_window=180, dark_rate=100.0
        ),
        seed=7,
        sampling=SamplingParams(sample_period=10),
        conditioning=ConditioningParams(guard=18, fit_from=128),
        extractor="peres",
    )


def linospad() -> PipelineConfig:
    """64 TDC-served pixels of a 256-pixel line, 8000 frames of 320 us."""
    return PipelineConfig(
        mode="linospad",
        sim=SimConfig(photon_rate=390e3, duration=8000 * 320e-6, tick=LINOSPAD_TICK),
        detector=DetectorModel(
            dead_time=2240, pulse_width=56, afterpulse_prob=0.4, afterpulse_window=11200, dark_rate=0.0
        ),
        seed=3,
        conditioning=ConditioningParams(fit_from=100),
        extractor="zhou-bruck",
    )


PRESETS = {"randy": randy, "linospad": linospad}


def preset(name: str) -> PipelineConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"preset: unknown {name!r}, choose from {sorted(PRESETS)}") from None


# ---------------------------------------------------------------------------
# dict / JSON loading


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None:
            if type(None) in args:
                return None
            raise ConfigError(f"{where}: must not be null")
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, where)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        item = args[0]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(item, v, f"{where}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{where}: expected {len(args)} values, got {len(value)}")
        return tuple(_coerce(a, v, f"{where}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, data, where: str):
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where + '.' if where else ''}{unknown[0]}: unknown field")
    kwargs = {}
    for name in names & set(data):
        key = f"{where}.{name}" if where else name
        kwargs[name] = _coerce(hints[name], data[name], key)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{where + '.' if where else ''}{exc}") from None


def from_dict(data: dict, base: PipelineConfig | None = None) -> PipelineConfig:
    """Build a config; with ``base``, ``data`` overrides it section by section."""
    if base is not None:
        merged = base.to_dict()
        for k, v in data.items():
            if isinstance(v, dict) and isinstance(merged.get(k), dict):
                merged[k] = {**merged[k], **v}
            else:
                merged[k] = v
        data = merged
    if "seed" in data and isinstance(data.get("sim"), dict):
        data = {**data, "sim": {**data["sim"], "seed": data["seed"]}}
    return _build(PipelineConfig, data, "")


def load_config(path, base: PipelineConfig | None = None) -> PipelineConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if isinstance(data, dict) and isinstance(data.get("config"), dict) and "outputs" in data:
        data = data["config"]  # a run manifest replays its resolved config
        base = None
    if isinstance(data, dict) and base is None and "preset" in data:
        data = dict(data)
        base = preset(data.pop("preset"))
    return from_dict(data, base)
