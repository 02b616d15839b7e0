"""Statistics used to validate and size the generators."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .sampling import SampledBitStream, as_stream

Z99 = 2.576
# lags allowed outside the 99% band before a report fails: upper 99% point of
# Binomial(n_lags, 0.01)
FAMILY_LEVEL = 0.99


def binary_entropy(p: float) -> float:
    """Shannon entropy of a Bernoulli(p) variable in bits."""
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise ValueError(f"probability {p} outside [0, 1]")
    if p in (0.0, 1.0):
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def empirical_entropy(symbols) -> float:
    """Plug-in Shannon entropy (bits) of the empirical symbol distribution."""
    s = np.asarray(getattr(symbols, "symbols", symbols))
    if s.size == 0:
        raise ValueError("empty symbol stream")
    _, counts = np.unique(s, return_counts=True)
    return float(stats.entropy(counts, base=2))


@dataclass
class RateCurve:
    freqs: np.ndarray
    p_empty: np.ndarray
    p_one: np.ndarray
    entropy: np.ndarray
    rate: np.ndarray  # bits / s
    effective_rate: np.ndarray | None = None  # approximate, after conditioning losses

    @property
    def peak_entropy_freq(self) -> float:
        return float(self.freqs[np.argmax(self.entropy)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["freq_hz", "p_empty", "p_one", "entropy_bits", "rate_bps"]
        if self.effective_rate is not None:
            head.append("effective_rate_bps_approx")
        w.writerow(head)
        for i in range(self.freqs.size):
            row = [self.freqs[i], self.p_empty[i], self.p_one[i], self.entropy[i], self.rate[i]]
            if self.effective_rate is not None:
                row.append(self.effective_rate[i])
            w.writerow([f"{v:.10g}" for v in row])
        return buf.getvalue()

    def gnuplot(self, csv_name: str) -> str:
        lines = [
            "set datafile separator ','",
            "set logscale x",
            "set xlabel 'sampling frequency [Hz]'",
            "set multiplot layout 2,1",
            f"plot '{csv_name}' u 1:2 w l t 'Pr[empty]', '' u 1:3 w l t 'Pr[1]', '' u 1:4 w l t 'H(X)'",
            "set ylabel 'bit/s'",
        ]
        rate = f"plot '{csv_name}' u 1:5 w l t 'rate'"
        if self.effective_rate is not None:
            rate += ", '' u 1:6 w l dt 2 t 'after conditioning (approx.)'"
        lines += [rate, "unset multiplot"]
        return "\n".join(lines) + "\n"


def rate_curve(r_phot: float, freqs: Sequence[float], loss_fraction: float | None = None) -> RateCurve:
    """Bias, entropy and ideal i.i.d. rate ``f * H(1 - exp(-r/f))`` per sampling frequency.

    With ``loss_fraction`` an approximate post-conditioning column scales
    the rate by ``1 - loss_fraction``.
    """
    f = np.asarray(freqs, dtype=float)
    if r_phot <= 0 or np.any(f <= 0):
        raise ValueError("r_phot and freqs must be positive")
    p0 = np.exp(-r_phot / f)
    p1 = -np.expm1(-r_phot / f)
    h = np.array([binary_entropy(float(p)) for p in p1])
    rate = f * h
    eff = None if loss_fraction is None else rate * (1.0 - loss_fraction)
    return RateCurve(f, p0, p1, h, rate, eff)


def peak_entropy_frequency(r_phot: float) -> float:
    """Sampling frequency at which Pr[1] = 1/2, i.e. H(X) = 1."""
    return r_phot / math.log(2.0)


@dataclass
class BitReport:
    n_bits: int
    p1: float
    bias: float
    entropy: float
    lags: list[int] = field(default_factory=list)
    coefficients: list[float] = field(default_factory=list)
    std_band: float = 0.0
    conf_band: float = 0.0
    within: list[bool] = field(default_factory=list)
    allowed_outside: int = 0

    def __post_init__(self):
        if any(not -1.0 - 1e-12 <= c <= 1.0 + 1e-12 for c in self.coefficients):
            raise ValueError("serial correlation coefficient outside [-1, 1]")

    @property
    def outside_lags(self) -> list[int]:
        return [k for k, ok in zip(self.lags, self.within) if not ok]

    @property
    def passed(self) -> bool:
        """At most ``allowed_outside`` lags beyond the 99% band (family-wise 99% test)."""
        return len(self.outside_lags) <= self.allowed_outside

    def to_dict(self) -> dict:
        d = asdict(self)
        d["outside_lags"] = self.outside_lags
        d["passed"] = self.passed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def lag_products(s: SampledBitStream, max_lag: int) -> np.ndarray:
    """``C[k] = sum_i x_i x_{i+k}`` for k = 1..max_lag."""
    C = np.zeros(max_lag + 1, dtype=np.int64)
    P = s.ones
    if P.size < 2:
        return C[1:]
    if P.size * 16 > s.length:
        x = s.to_bits().astype(bool)
        for k in range(1, max_lag + 1):
            C[k] = np.count_nonzero(x[:-k] & x[k:])
        return C[1:]
    for j in range(1, min(max_lag, P.size - 1) + 1):
        d = P[j:] - P[:-j]
        d = d[d <= max_lag]
        if d.size == 0:
            break
        C += np.bincount(d, minlength=max_lag + 1)
    return C[1:]


def serial_correlation(bits, max_lag: int = 100) -> BitReport:
    """Lag-k sample autocorrelation with the +-1/sqrt(N) and +-2.576/sqrt(N) bands.

    r_k = sum_{i<N-k} (x_i - m)(x_{i+k} - m) / sum_i (x_i - m)^2, which is the
    same for bits and their +-1 mapping. The report passes when no more lags
    leave the 99% band than chance allows for ``max_lag`` lags at 99%
    overall confidence.
    """
    s = as_stream(bits)
    N = s.length
    if N <= 100 * max_lag:
        raise ValueError(f"stream too short: {N} bits for {max_lag} lags (need > {100 * max_lag})")
    m = s.n_ones
    mean = m / N
    denom = m - m * mean
    C = lag_products(s, max_lag)
    lags = np.arange(1, max_lag + 1)
    # sum of x over the first N-k and the last N-k samples
    head = np.searchsorted(s.ones, N - lags, side="left")
    tail = m - np.searchsorted(s.ones, lags, side="left")
    num = C - mean * (head + tail) + (N - lags) * mean * mean
    r = num / denom if denom > 0 else np.zeros(max_lag)
    r = np.clip(r, -1.0, 1.0)
    std = 1.0 / math.sqrt(N)
    conf = Z99 * std
    p1 = mean
    return BitReport(
        n_bits=N,
        p1=p1,
        bias=abs(p1 - 0.5),
        entropy=binary_entropy(p1),
        lags=lags.tolist(),
        coefficients=[float(v) for v in r],
        std_band=std,
        conf_band=conf,
        within=[bool(abs(v) <= conf) for v in r],
        allowed_outside=int(stats.binom.ppf(FAMILY_LEVEL, max_lag, 0.01)),
    )


def extraction_efficiency(n_bits_out: int, n_tags: int, h_exp: float) -> float:
    """eta = N_bit / (N_tag * H_exp)."""
    if n_tags <= 0 or h_exp <= 0:
        raise ValueError("n_tags and h_exp must be positive")
    return n_bits_out / (n_tags * h_exp)


@dataclass
class PixelRates:
    pixel: int
    coarse_bits: int = 0
    fine_bits: int = 0
    n_tags: int = 0
    kept: bool = True


@dataclass
class RateSummary:
    duration: float
    n_pixels: int
    n_kept: int
    coarse_total: float
    fine_total: float
    coarse_per_pixel: float
    fine_per_pixel: float
    coarse_per_kept_pixel: float
    total: float
    total_per_pixel: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def aggregate_rates(pixels: Sequence[PixelRates], duration: float, n_pixels: int | None = None) -> RateSummary:
    """Array bit rates: coarse from kept pixels, fine from all, averaged over the TDC-served pixels."""
    n = len(pixels) if n_pixels is None else n_pixels
    kept = [p for p in pixels if p.kept]
    coarse = sum(p.coarse_bits for p in kept) / duration if duration > 0 else 0.0
    fine = sum(p.fine_bits for p in pixels) / duration if duration > 0 else 0.0
    return RateSummary(
        duration=duration,
        n_pixels=n,
        n_kept=len(kept),
        coarse_total=coarse,
        fine_total=fine,
        coarse_per_pixel=coarse / n if n else 0.0,
        fine_per_pixel=fine / n if n else 0.0,
        coarse_per_kept_pixel=coarse / len(kept) if kept else 0.0,
        total=coarse + fine,
        total_per_pixel=(coarse + fine) / n if n else 0.0,
    )
