"""Acceptance criteria; each test prints one PASS/FAIL line with the measured values."""
import itertools
import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from oracles import peres_ref
from spadrng.analysis import binary_entropy, rate_curve, serial_correlation
from spadrng.extraction import peres, peres_many, von_neumann, zhou_bruck
from spadrng.source import LINOSPAD_CODES, TdcProfile


@pytest.fixture
def verdict(capsys):
    def emit(name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, detail

    return emit


def within(x, target, rel):
    return abs(x - target) <= rel * target


def test_entropy_rate_identity(verdict):
    r = binary_entropy(172e3 / 97e6) * 97e6
    verdict("entropy-rate identity", within(r, 1.815e6, 0.005), f"{r / 1e6:.4f} Mbit/s vs 1.815 +-0.5%")


def test_peak_entropy_frequency(verdict):
    coarse = rate_curve(200e3, np.logspace(4, 8, 4001))
    f0 = coarse.peak_entropy_freq
    fine = rate_curve(200e3, np.linspace(f0 - 2000, f0 + 2000, 40_001))
    best = minimize_scalar(
        lambda f: -rate_curve(200e3, [f]).entropy[0], bracket=(f0 - 1000, f0, f0 + 1000), tol=1e-12
    )
    ok = abs(fine.peak_entropy_freq - 288539.0) <= 1.0 and abs(best.x - 288539.0) <= 1.0
    verdict(
        "peak-entropy frequency",
        ok,
        f"grid {fine.peak_entropy_freq:.2f} Hz, optimizer {best.x:.2f} Hz vs 288539 +-1 Hz",
    )


def test_randy_end_to_end(randy_run, verdict):
    r = randy_run
    loss = r.conditioning.fraction_events_lost
    rate = r.rates["output_rate_bps"]
    ok = abs(loss - 0.14) <= 0.03 and within(rate, 1.8e6, 0.10) and r.report.passed
    verdict(
        "randy end-to-end",
        ok,
        f"loss {loss:.1%} (14 +-3%), rate {rate / 1e6:.3f} Mbit/s (1.8 +-10%), "
        f"lags outside {r.report.outside_lags} (allowed {r.report.allowed_outside}), guard {r.conditioning.guard_cycles}",
    )


@pytest.mark.parametrize("p", [0.002, 0.1, 0.5])
@pytest.mark.parametrize("name", ["peres", "von-neumann"])
def test_extractor_exactness(name, p, verdict):
    rng = np.random.default_rng(int(p * 1000) + (0 if name == "peres" else 7))
    bits = (rng.random(1_000_000) < p).astype(np.uint8)
    out = peres(bits)[0] if name == "peres" else von_neumann(bits)
    n = out.size
    bias = abs(out.mean() - 0.5)
    # 100 lags need more than 10^4 bits; von Neumann at p=0.002 yields about 2000
    lags = min(100, (n - 1) // 100)
    rep = serial_correlation(out, lags)
    ok = bias < 3 / math.sqrt(n) and rep.passed
    verdict(
        f"{name} exactness p={p}",
        ok,
        f"N_out {n}, bias {bias:.2e} < {3 / math.sqrt(n):.2e}, {lags} lags, outside {rep.outside_lags}",
    )


def test_peres_asymptotic_yield(verdict):
    rng = np.random.default_rng(2002)
    p = 0.002
    out, st = peres((rng.random(10_000_000) < p).astype(np.uint8), 32)
    h = binary_entropy(p)
    ratio = st.yield_ratio / h
    verdict("peres yield at N=1e7", ratio >= 0.95 and ratio <= 1.0, f"yield {st.yield_ratio:.6f} = {ratio:.1%} of H {h:.6f}")


def test_peres_exhaustive_oracle(verdict):
    inputs = [list(t) for t in itertools.product((0, 1), repeat=16)]
    got = peres_many([np.array(b, dtype=np.uint8) for b in inputs], 32)
    bad = sum(g.tolist() != peres_ref(b) for g, b in zip(got, inputs))
    verdict("peres exhaustive 2^16", bad == 0, f"{len(inputs) - bad}/{len(inputs)} inputs match the reference")


def test_zhou_bruck_efficiency(verdict):
    profile = TdcProfile.nonlinear(6.8)
    rng = np.random.default_rng(140)
    codes = rng.choice(LINOSPAD_CODES, size=1_000_000, p=profile.bin_weights)
    out, _ = zhou_bruck(codes, alphabet_size=LINOSPAD_CODES)
    per_tag = out.size / codes.size
    bias = abs(out.mean() - 0.5)
    ok = within(per_tag, 6.3, 0.05) and bias < 1e-3
    verdict(
        "zhou-bruck efficiency",
        ok,
        f"H {profile.entropy:.3f}, {per_tag:.3f} bits/tag (6.3 +-5%), bias {bias:.1e} < 1e-3",
    )


def test_linospad_end_to_end(linospad_run, verdict):
    s = linospad_run.summary
    checks = [
        ("coarse/pixel", s.coarse_per_pixel, 1.36e6),
        ("fine/pixel", s.fine_per_pixel, 3.48e6),
        ("coarse total", s.coarse_total, 87e6),
        ("fine total", s.fine_total, 223e6),
        ("total", s.total, 310e6),
    ]
    ok = all(within(v, t, 0.15) for _, v, t in checks) and linospad_run.passed
    detail = ", ".join(f"{n} {v / 1e6:.2f} ({t / 1e6:g})" for n, v, t in checks)
    verdict("linospad end-to-end (800 frames)", ok, f"Mbit/s: {detail}; kept {s.n_kept}/64; checks {linospad_run.checks}")


def test_conditioning_restores_exponentiality(randy_run, verdict):
    r = randy_run
    d, p = r.ks
    ok = p >= 0.01 and not r.raw_report.passed and r.conditioned_report.passed
    verdict(
        "conditioning",
        ok,
        f"KS D={d:.2e} p={p:.3f}; raw lags outside {r.raw_report.outside_lags[:20]}...; "
        f"conditioned outside {r.conditioned_report.outside_lags}",
    )


def test_baseline_protocol_rates(randy_run, verdict):
    rt = randy_run.rates
    diff, odeven, iid = rt["diff_rate_bps"], rt["odeven_rate_bps"], rt["output_rate_bps"]
    ok = within(diff, 100e3, 0.10) and within(odeven, 20e3, 0.10) and odeven < diff < iid
    verdict(
        "baseline protocols",
        ok,
        f"Diff {diff / 1e3:.1f} kbit/s (100 +-10%), OdEven {odeven / 1e3:.2f} kbit/s (20 +-10%), "
        f"per-detector {iid / 1e6:.2f} Mbit/s",
    )
