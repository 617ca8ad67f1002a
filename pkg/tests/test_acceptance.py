"""Acceptance criteria, one test per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one line per
criterion.  The Monte Carlo criteria sample 1e8 pulse pairs per loss
point (plus one 1e9 run) and take several minutes; every run is seeded
and deterministic, including across worker counts.
"""

import functools
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from mdiqkd.decoy import (
    asymptotic_from_tallies,
    asymptotic_report,
    chernoff_interval,
    e11_upper_bound,
    finite_key_pipeline,
    key_rate,
    q11_from_y11,
    y11_lower_bound,
)
from mdiqkd.drift import run_drift_timeline
from mdiqkd.model import analytic_gain_table, photon_pair_yield
from mdiqkd.montecarlo import cell_name, force_classes, simulate_slots
from mdiqkd.optimize import expected_tallies, sweep_rate_vs_loss
from mdiqkd.params import paper_200km

from .conftest import random_valid_params

WORKERS = 2
PAPER_LOSSES = (9.9, 19.9, 29.8, 39.6)
PAPER_BPS_200KM = 0.009


def criterion(number, title):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException:
                print(f"ACCEPTANCE {number}: FAIL - {title}")
                raise
            print(f"ACCEPTANCE {number}: PASS - {title}" + (f" ({detail})" if detail else ""))

        return wrapper

    return deco


@pytest.fixture(scope="module")
def preset():
    return paper_200km()


@pytest.fixture(scope="module")
def mc_tallies(preset):
    """One 1e8-slot run per reference loss point (shared across criteria)."""
    out = {}
    for i, loss in enumerate(PAPER_LOSSES):
        params = preset.with_total_loss_db(loss)
        out[loss] = simulate_slots(params, 100_000_000, seed=7 + i, workers=WORKERS)
    return out


def _h_mp(e):
    import mpmath as mp

    e = mp.mpf(e)
    if e in (0, 1):
        return mp.mpf(0)
    return -e * mp.log(e, 2) - (1 - e) * mp.log(1 - e, 2)


GOLDEN_TUPLES = [
    (2.0e-7, 0.06, 5.0e-7, 0.00025, 1.16),
    (2.0e-7, 0.5, 5.0e-7, 0.00025, 1.16),   # H(0.5)=1: single-photon term vanishes
    (3.0e-7, 0.0, 5.0e-7, 0.0, 1.16),        # all errors zero: R = Q11
    (1.0e-4, 0.03, 2.5e-4, 0.01, 1.16),
    (1.0e-4, 0.25, 2.5e-4, 0.25, 1.16),
    (5.0e-9, 0.11, 1.2e-8, 0.02, 1.16),
    (0.0, 0.1, 1e-6, 0.01, 1.16),
    (0.9, 0.05, 0.95, 0.005, 1.0),
    (0.12, 0.499, 0.5, 0.499, 2.0),
    (1e-12, 0.2, 1e-11, 0.3, 1.5),
    (7.7e-5, 0.07, 1.8e-4, 0.031, 1.16),
    (4.4e-6, 0.19, 9.9e-6, 0.26, 1.16),
    (2.2e-8, 0.049, 6.1e-8, 0.0009, 1.16),
    (1.0, 0.0, 1.0, 0.0, 1.0),
    (0.5, 0.5, 1.0, 0.5, 1.16),
    (3.3e-3, 0.125, 8.8e-3, 0.0625, 1.1),
    (6.0e-10, 0.033, 1.3e-9, 0.0004, 1.16),
    (9.9e-2, 0.26, 2.2e-1, 0.24, 1.3),
    (5.5e-6, 0.01, 5.5e-6, 0.01, 1.16),
    (8.1e-7, 0.38, 3.3e-6, 0.12, 1.16),
]


@criterion(1, "rate formula matches 20 high-precision golden tuples at 1e-12")
def test_criterion_1_rate_golden():
    start = time.perf_counter()
    for tup in GOLDEN_TUPLES:
        q11, e11, q, e, f = tup
        expected = float(q11 * (1 - _h_mp(e11)) - q * f * _h_mp(e))
        got = key_rate(q11, e11, q, e, f).rate_raw
        if expected == 0.0:
            assert abs(got) < 1e-25
        else:
            assert abs(got - expected) / abs(expected) < 1e-12, tup
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    return f"{len(GOLDEN_TUPLES)} tuples in {elapsed * 1e3:.0f} ms"


@criterion(2, "1e8-slot Monte Carlo matches analytic gains/errors within 4 sigma per cell")
def test_criterion_2_oracle_agreement(preset, mc_tallies):
    checked = 0
    for loss in PAPER_LOSSES:
        params = preset.with_total_loss_db(loss)
        table = analytic_gain_table(params)
        tally = mc_tallies[loss]
        for ia in range(3):
            for ib in range(3):
                for basis in range(2):
                    label = f"{loss} dB {cell_name(ia, ib, basis)}"
                    n_cell = tally.sent[ia, ib, basis]
                    q = table.q[ia, ib, basis]
                    obs = tally.success[ia, ib, basis]
                    expect = n_cell * q
                    if expect < 1.0:
                        # normal approximation invalid; exact Poisson tail gate
                        assert obs <= 8, label
                    else:
                        sigma = math.sqrt(expect * (1 - q))
                        assert abs(obs - expect) <= 4 * sigma, label
                    checked += 1
                    if obs >= 25:
                        e_an = table.error_rate(ia, ib, basis)
                        e_obs = tally.error[ia, ib, basis] / obs
                        sig_e = math.sqrt(e_an * (1 - e_an) / obs)
                        if sig_e > 0:
                            assert abs(e_obs - e_an) <= 4 * sig_e, label + " error rate"
                        checked += 1
    return f"{checked} cell comparisons across {len(PAPER_LOSSES)} loss points"


@criterion(3, "X-basis signal-signal error sits in [0.24, 0.27] at 39.6 dB (analytic + 1e9 MC)")
def test_criterion_3_x_error_floor(preset):
    table = analytic_gain_table(preset)
    e_analytic = table.error_rate(0, 0, 1)
    assert 0.24 <= e_analytic <= 0.27
    forced = force_classes(preset, "signal", "X")
    tally = simulate_slots(forced, 1_000_000_000, seed=7, workers=WORKERS)
    n = tally.success[0, 0, 1]
    e_mc = tally.error[0, 0, 1] / n
    assert n >= 500
    assert 0.24 <= e_mc <= 0.27
    return f"analytic {e_analytic:.5f}, MC {e_mc:.5f} ({n} coincidences)"


@criterion(4, "positive key at 200 km-equivalent loss; 0.009 bit/s reported as comparison")
def test_criterion_4_positive_key(preset, mc_tallies, capsys):
    # asymptotic vacuum+weak curve strictly positive at 39.6 dB
    report = asymptotic_report(analytic_gain_table(preset), preset)
    assert report.positive and report.rate_per_pulse > 0.0

    # finite-key rate from simulated sessions becomes positive at scale:
    # a sampled 1e8 session at 9.9 dB, frequencies held, counts scaled
    p99 = preset.with_total_loss_db(9.9)
    base = mc_tallies[9.9]
    scaled_rates = [
        finite_key_pipeline(base.scaled(s), p99).rate_per_second for s in (1, 100, 10_000)
    ]
    assert scaled_rates[-1] > 0.0
    # and at 39.6 dB with expected statistics of a large session
    finite_200 = finite_key_pipeline(expected_tallies(preset, 1e14), preset)
    assert finite_200.rate_per_second > 0.0

    # reported comparison, not an assertion: the experiment's session length
    experiment_session = 130 * 3600 * preset.clock_hz
    finite_exp = finite_key_pipeline(expected_tallies(preset, experiment_session), preset)
    with capsys.disabled():
        print(
            f"\n  [comparison] 39.6 dB: asymptotic {report.rate_per_second:.4f} bit/s, "
            f"finite-key at the ~{experiment_session:.1e}-pulse experiment scale "
            f"{finite_exp.rate_per_second:.4f} bit/s, at 1e14 pulses "
            f"{finite_200.rate_per_second:.4f} bit/s; reported experiment: "
            f"{PAPER_BPS_200KM} bit/s (estimator constants differ; comparison only)"
        )
    return (
        f"asymptotic {report.rate_per_second:.3f} bit/s at 39.6 dB, "
        f"finite {finite_200.rate_per_second:.3f} bit/s at 1e14 pulses"
    )


@criterion(5, "decoy bounds bracket the true single-photon values on 1000 random draws")
def test_criterion_5_sandwich():
    rng = np.random.default_rng(2718)
    violations = 0
    for _ in range(1000):
        params = random_valid_params(rng)
        table = analytic_gain_table(params, phase_points=64)
        y_bound = y11_lower_bound(table, basis="Z").value
        e_bound = e11_upper_bound(table).value
        true_z = photon_pair_yield(1, 1, params, "Z")
        true_x = photon_pair_yield(1, 1, params, "X")
        if y_bound > true_z.y + 1e-12:
            violations += 1
        if e_bound < min(0.5, true_x.e) - 1e-12:
            violations += 1
        if q11_from_y11(y_bound, params) > table.q[0, 0, 0] + 1e-12:
            violations += 1
    assert violations == 0
    return "0 violations in 1000 draws"


@criterion(6, "finite-key rate never exceeds the asymptotic rate and grows with tally scale")
def test_criterion_6_finite_dominance(preset, mc_tallies):
    cases = []
    p99 = preset.with_total_loss_db(9.9)
    for scale in (100, 1_000, 10_000):
        cases.append((mc_tallies[9.9].scaled(scale), p99))
    cases.append((expected_tallies(preset, 1e14), preset))
    cases.append((expected_tallies(preset, 1e15), preset))
    rates = []
    for tallies, params in cases:
        finite = finite_key_pipeline(tallies, params)
        asym = asymptotic_from_tallies(tallies, params)
        assert finite.rate_per_pulse <= asym.rate_per_pulse + 1e-18
        rates.append(finite.rate_per_second)
    assert rates[0] < rates[1] < rates[2], "scaling x10, x100 must increase the rate"
    return f"9.9 dB scaled rates {rates[0]:.2f} < {rates[1]:.2f} < {rates[2]:.2f} bit/s"


@criterion(7, "Chernoff intervals reach their advertised coverage on binomial ensembles")
def test_criterion_7_chernoff_coverage():
    rng = np.random.default_rng(99)
    resamples = 100_000
    for eps, n, p in ((0.05, 50_000, 1e-3), (0.05, 5_000, 0.02), (1e-10, 50_000, 1e-3)):
        ks = rng.binomial(n, p, size=resamples).astype(float)
        big_l = math.log(2.0 / eps)
        upper = ks + big_l + np.sqrt(big_l**2 + 2 * ks * big_l)
        lower = np.maximum(ks + big_l / 2 - np.sqrt(big_l**2 + 8 * ks * big_l) / 2, 0.0)
        mean = n * p
        covered = float(np.mean((lower <= mean) & (mean <= upper)))
        floor = 1 - eps - 3 * math.sqrt(eps * (1 - eps) / resamples)
        assert covered >= floor, (eps, n, p, covered)
        # spot-check the library function agrees with the vectorized form
        lo, hi = chernoff_interval(float(ks[0]), n, eps)
        assert lo == pytest.approx(lower[0], rel=1e-12, abs=1e-12)
        assert hi == pytest.approx(min(upper[0], n), rel=1e-12)
    return f"coverage >= 1 - eps on {resamples} resamples (eps = 0.05 and 1e-10)"


@criterion(8, "fixed seed gives byte-identical pipelines for any worker count")
def test_criterion_8_determinism(preset, tmp_path):
    from mdiqkd.cli import main
    from mdiqkd.protocol import run_session

    p99 = preset.with_total_loss_db(9.9)
    a = simulate_slots(p99, 2_000_000, seed=3, workers=1)
    b = simulate_slots(p99, 2_000_000, seed=3, workers=2)
    c = simulate_slots(p99, 2_000_000, seed=3, workers=1)
    assert a == b == c
    sess = run_session(p99, 2_000_000, seed=3, compute_report=False)
    assert sess.tallies == a

    outs = []
    for name, workers in (("r1", "1"), ("r2", "2")):
        out = tmp_path / name
        assert main([
            "simulate", "--loss-db", "9.9", "--slots", "500000", "--seed", "3",
            "--workers", workers, "--out", str(out),
        ]) == 0
        outs.append(out)
    for fname in ("tallies.csv", "keyrate.csv", "keyrate.txt"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()
    return "tallies, session and CLI outputs byte-identical (workers 1 vs 2)"


@criterion(9, "130-hour feedback emulation holds its bounds; no phase feedback degrades past 5%")
def test_criterion_9_stability(preset):
    tl = run_drift_timeline(preset, duration_s=130 * 3600.0, dt=1.0, seed=3, stride=600)
    frac_t = tl.summary["frac_timing_within_20ps"]
    frac_p = tl.summary["frac_power_within_3pct"]
    assert frac_t >= 0.99
    assert frac_p >= 0.99

    cfg_off = replace(preset.drift, phase_enabled=False)
    degraded = run_drift_timeline(preset, duration_s=5_000.0, dt=1.0, seed=3,
                                  config=cfg_off, stride=100)
    crossing = degraded.summary["x_misalignment_crossing_s"]
    assert crossing is not None
    assert crossing == 517.0  # fixed-seed regression
    return (
        f"timing within 20 ps {frac_t:.4%}, power within 3% {frac_p:.4%}, "
        f"unstabilized X misalignment crosses 5% at {crossing:.0f} s"
    )


@criterion(10, "infinite-decoy curve dominates vacuum+weak, both non-increasing over 0-45 dB")
def test_criterion_10_curve_dominance(preset):
    losses = np.linspace(0.0, 45.0, 46)
    curve = sweep_rate_vs_loss(preset, losses)
    vw = curve.rates("vacuum_weak")
    inf = curve.rates("infinite_decoy")
    assert np.all(np.diff(vw) <= 1e-15)
    assert np.all(np.diff(inf) <= 1e-15)
    assert np.all(inf >= vw - 1e-18)
    assert vw[-1] >= 0.0 and vw[0] > 0.0
    return "46 grid points, dominance and monotonicity hold"
