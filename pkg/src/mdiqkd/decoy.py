"""Decoy-state bounds and secure-key-rate evaluation.

Single-photon quantities are bounded from vacuum+weak (three-intensity)
statistics by eliminating every zero-photon contribution with the vacuum
rows and bounding the remaining multi-photon tail with the decoy/signal
intensity ratio; the full algebra lives in ``docs/decoy-bounds.md``.  The
secret fraction is the usual single-photon term minus error-correction
leakage:

    rate >= Q11 * (1 - H(e11)) - Q_signal * f * H(E_signal)

evaluated on the Z-basis signal-signal statistics, with e11 bounded from
the X basis.  Finite-key analysis wraps every consumed statistic in a
two-sided Chernoff interval before the same bound algebra runs on the
worst-case corner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple

from .model import GainTable, binary_entropy
from .params import ConfigError, SystemParams

__all__ = [
    "Bound",
    "DecoyBounds",
    "KeyRateReport",
    "InsufficientDataError",
    "chernoff_interval",
    "y11_lower_bound",
    "e11_upper_bound",
    "key_rate",
    "finite_key_pipeline",
    "asymptotic_report",
    "infinite_decoy_report",
]

SIGNAL, DECOY, VACUUM = 0, 1, 2
_Z, _X = 0, 1

# Cells consumed by the estimators, as (alice_class, bob_class) pairs.
_GAIN_CELLS = [
    (DECOY, DECOY), (SIGNAL, DECOY), (DECOY, SIGNAL),
    (SIGNAL, VACUUM), (VACUUM, SIGNAL), (DECOY, VACUUM), (VACUUM, DECOY),
    (VACUUM, VACUUM),
]
_ERR_CELLS = [(DECOY, DECOY), (DECOY, VACUUM), (VACUUM, DECOY), (VACUUM, VACUUM)]


class InsufficientDataError(ValueError):
    """A tally cell required by the estimator has no data."""


class Bound(NamedTuple):
    value: float
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class DecoyBounds:
    """Bounds on the single-photon pair contribution."""

    y11_lower: float
    e11_upper: float
    q11_lower: float
    regime: str                      # "asymptotic" | "finite_key" | "infinite_decoy"
    epsilon_total: float | None = None
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class KeyRateReport:
    """Secure-rate evaluation with the inputs that produced it."""

    rate_per_pulse: float            # secure bits per clock cycle (includes selection prob)
    rate_per_second: float
    rate_raw: float                  # unfloored conditional rate before selection prob
    q_mumu: float
    e_mumu: float
    bounds: DecoyBounds
    ec_leakage: float
    positive: bool
    selection_prob: float = 1.0
    clock_hz: float = 1.0
    duty_factor: float = 1.0
    f: float = 1.16

    @property
    def regime(self) -> str:
        return self.bounds.regime


def chernoff_interval(observed: float, trials: float, epsilon: float) -> tuple[float, float]:
    """Two-sided multiplicative-Chernoff interval on an expected count.

    Returns ``[lower, upper]`` such that the expectation of the underlying
    Bernoulli sum lies inside with probability at least ``1 - epsilon``
    (``epsilon/2`` budgeted per tail).  The interval always contains the
    observation; expressed as rates the width shrinks like 1/sqrt(trials).
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0,1), got {epsilon}")
    if observed < 0 or trials < 0 or observed > trials:
        raise ValueError(f"need 0 <= observed <= trials, got {observed}/{trials}")
    k = float(observed)
    big_l = math.log(2.0 / epsilon)
    upper = k + big_l + math.sqrt(big_l * big_l + 2.0 * k * big_l)
    lower = 0.5 * (2.0 * k + big_l - math.sqrt(big_l * big_l + 8.0 * k * big_l))
    return (max(0.0, lower), min(upper, trials))


def _check_ordering(ints: tuple[float, float, float], side: str):
    mu, nu, vac = ints
    if not (mu > nu > 0.0) or vac != 0.0:
        raise ConfigError(
            f"{side} intensities must satisfy mu > nu > 0 with exact vacuum, got {ints}"
        )


def _phi_coeffs(coeffs: dict, weight: float, ai: int, bi: int, ints_a, ints_b):
    """Accumulate ``weight * phi(a, b)`` as per-cell gain coefficients.

    phi(a,b) = [e^(a+b) Q(a,b) - e^a Q(a,0) - e^b Q(0,b) + Q(0,0)] / (ab)
    """
    a, b = ints_a[ai], ints_b[bi]
    scale = weight / (a * b)
    coeffs[(ai, bi)] = coeffs.get((ai, bi), 0.0) + scale * math.exp(a + b)
    coeffs[(ai, VACUUM)] = coeffs.get((ai, VACUUM), 0.0) - scale * math.exp(a)
    coeffs[(VACUUM, bi)] = coeffs.get((VACUUM, bi), 0.0) - scale * math.exp(b)
    coeffs[(VACUUM, VACUUM)] = coeffs.get((VACUUM, VACUUM), 0.0) + scale


def _eval_worst_case(coeffs: Mapping, lo: Mapping, hi: Mapping, maximize: bool) -> float:
    total = 0.0
    for cell, c in coeffs.items():
        pick_hi = (c > 0.0) == maximize
        total += c * (hi[cell] if pick_hi else lo[cell])
    return total


def _y11_coeffs(ints_a, ints_b) -> dict:
    mu_a, nu_a, _ = ints_a
    mu_b, nu_b, _ = ints_b
    r_a = nu_a / (mu_a - nu_a)
    r_b = nu_b / (mu_b - nu_b)
    coeffs: dict = {}
    _phi_coeffs(coeffs, 1.0 + r_a + r_b, DECOY, DECOY, ints_a, ints_b)
    _phi_coeffs(coeffs, -r_a, SIGNAL, DECOY, ints_a, ints_b)
    _phi_coeffs(coeffs, -r_b, DECOY, SIGNAL, ints_a, ints_b)
    return coeffs


def _gains_view(gains, basis, ints_a, ints_b, errors=False):
    """Normalize the accepted input shapes to (lo, hi) cell mappings."""
    if isinstance(gains, GainTable):
        table = gains.err_gains_dict(basis) if errors else gains.gains_dict(basis)
        return table, table, gains.intensities_alice, gains.intensities_bob
    if isinstance(gains, tuple) and len(gains) == 2:
        lo, hi = gains
        return dict(lo), dict(hi), ints_a, ints_b
    return dict(gains), dict(gains), ints_a, ints_b


def y11_lower_bound(gains, intensities_alice=None, intensities_bob=None, basis="Z") -> Bound:
    """Lower-bound the single-photon pair yield from three-intensity gains.

    ``gains`` is a :class:`~mdiqkd.model.GainTable`, a mapping from class
    pairs ``(ia, ib)`` to gains, or a ``(lower, upper)`` pair of such
    mappings for worst-case (finite-key) evaluation.
    """
    basis_idx = {"Z": _Z, "X": _X, 0: _Z, 1: _X}[basis]
    lo, hi, ints_a, ints_b = _gains_view(gains, basis_idx, intensities_alice, intensities_bob)
    _check_ordering(ints_a, "alice")
    _check_ordering(ints_b, "bob")
    missing = [c for c in _GAIN_CELLS + [(SIGNAL, SIGNAL)] if c not in lo or c not in hi]
    if missing:
        raise InsufficientDataError(f"gains missing for cells {missing}")
    raw = _eval_worst_case(_y11_coeffs(ints_a, ints_b), lo, hi, maximize=False)
    flags = ()
    if raw < 0.0:
        return Bound(0.0, ("y11_clamped_zero",))
    if raw > 1.0:
        raw, flags = 1.0, ("y11_clamped_one",)
    return Bound(raw, flags)


def e11_upper_bound(gains, errors=None, intensities_alice=None, intensities_bob=None) -> Bound:
    """Upper-bound the single-photon phase error from X-basis statistics.

    ``gains``/``errors`` follow the same shapes as :func:`y11_lower_bound`
    (for a :class:`GainTable` input, ``errors`` may be omitted and the
    X-basis error gains are taken from the table).  The error gain of the
    single-photon pair is bounded above by the vacuum-subtracted
    decoy-pair error gain, then divided by the X-basis yield lower bound.
    """
    if isinstance(gains, GainTable) and errors is None:
        errors = gains
    if errors is None:
        raise InsufficientDataError("error gains are required")
    lo_q, hi_q, ints_a, ints_b = _gains_view(gains, _X, intensities_alice, intensities_bob)
    lo_w, hi_w, _, _ = _gains_view(errors, _X, ints_a, ints_b, errors=True)
    _check_ordering(ints_a, "alice")
    _check_ordering(ints_b, "bob")
    missing = [c for c in _ERR_CELLS if c not in lo_w or c not in hi_w]
    if missing:
        raise InsufficientDataError(f"error gains missing for cells {missing}")

    y11_x = y11_lower_bound((lo_q, hi_q), ints_a, ints_b, basis="X")
    v_coeffs: dict = {}
    _phi_coeffs(v_coeffs, 1.0, DECOY, DECOY, ints_a, ints_b)
    v11_upper = _eval_worst_case(v_coeffs, lo_w, hi_w, maximize=True)

    flags = tuple(f"x_{f}" for f in y11_x.flags)
    if y11_x.value <= 0.0:
        return Bound(0.5, flags + ("e11_indeterminate",))
    raw = v11_upper / y11_x.value
    if raw < 0.0:
        return Bound(0.0, flags + ("e11_clamped_zero",))
    if raw > 0.5:
        return Bound(0.5, flags + ("e11_clamped_half",))
    return Bound(raw, flags)


def q11_from_y11(y11: float, params: SystemParams) -> float:
    """Signal-signal single-photon gain from a yield (Poisson weights)."""
    mu_a = params.source_alice.intensity_signal
    mu_b = params.source_bob.intensity_signal
    return mu_a * mu_b * math.exp(-mu_a - mu_b) * y11


def key_rate(
    q11_lower: float,
    e11_upper: float,
    q_mumu: float,
    e_mumu: float,
    f: float,
    *,
    bounds: DecoyBounds | None = None,
    selection_prob: float = 1.0,
    clock_hz: float = 1.0,
    duty_factor: float = 1.0,
) -> KeyRateReport:
    """Evaluate the secure-rate formula on explicit inputs.

    ``rate_raw`` is the conditional rate per signal-signal Z pair (may be
    negative); ``rate_per_pulse`` floors it at zero and multiplies by the
    probability that a clock cycle is such a pair.
    """
    for name, value in (("q11_lower", q11_lower), ("q_mumu", q_mumu)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must lie in [0,1], got {value}")
    if not 0.0 <= e11_upper <= 0.5 or not 0.0 <= e_mumu <= 1.0:
        raise ValueError(f"error rates out of range: e11={e11_upper} e={e_mumu}")
    if f < 1.0:
        raise ValueError(f"error-correction inefficiency must be >= 1, got {f}")
    ec_leakage = q_mumu * f * binary_entropy(e_mumu)
    rate_raw = q11_lower * (1.0 - binary_entropy(e11_upper)) - ec_leakage
    positive = rate_raw > 0.0
    rate_per_pulse = max(0.0, rate_raw) * selection_prob
    if bounds is None:
        bounds = DecoyBounds(
            y11_lower=float("nan"), e11_upper=e11_upper, q11_lower=q11_lower,
            regime="asymptotic",
        )
    return KeyRateReport(
        rate_per_pulse=rate_per_pulse,
        rate_per_second=rate_per_pulse * clock_hz * duty_factor,
        rate_raw=rate_raw,
        q_mumu=q_mumu,
        e_mumu=e_mumu,
        bounds=bounds,
        ec_leakage=ec_leakage,
        positive=positive,
        selection_prob=selection_prob,
        clock_hz=clock_hz,
        duty_factor=duty_factor,
        f=f,
    )


def _report_from_bounds(bounds, q_mumu, e_mumu, params, duty_factor) -> KeyRateReport:
    return key_rate(
        bounds.q11_lower,
        bounds.e11_upper,
        q_mumu,
        e_mumu,
        params.ec_efficiency_f,
        bounds=bounds,
        selection_prob=params.selection_prob_key,
        clock_hz=params.clock_hz,
        duty_factor=duty_factor,
    )


def asymptotic_bounds(table_or_gains, params: SystemParams, regime="asymptotic") -> DecoyBounds:
    y11 = y11_lower_bound(table_or_gains, basis="Z")
    e11 = e11_upper_bound(table_or_gains)
    return DecoyBounds(
        y11_lower=y11.value,
        e11_upper=e11.value,
        q11_lower=q11_from_y11(y11.value, params),
        regime=regime,
        flags=y11.flags + e11.flags,
    )


def asymptotic_report(table: GainTable, params: SystemParams, duty_factor: float = 1.0) -> KeyRateReport:
    """Vacuum+weak rate on exact (or point-frequency) gain inputs."""
    bounds = asymptotic_bounds(table, params)
    q_mumu = float(table.q[SIGNAL, SIGNAL, _Z])
    e_mumu = table.error_rate(SIGNAL, SIGNAL, _Z)
    return _report_from_bounds(bounds, q_mumu, e_mumu, params, duty_factor)


def infinite_decoy_report(
    table: GainTable, params: SystemParams, duty_factor: float = 1.0
) -> KeyRateReport:
    """Rate with the single-photon quantities at their true model values.

    This is the infinite-decoy limit: the estimation side is assumed
    perfect and only the physical yields matter.
    """
    from .model import photon_pair_yield

    y11_z = photon_pair_yield(1, 1, params, "Z")
    y11_x = photon_pair_yield(1, 1, params, "X")
    bounds = DecoyBounds(
        y11_lower=y11_z.y,
        e11_upper=min(0.5, y11_x.e),
        q11_lower=q11_from_y11(y11_z.y, params),
        regime="infinite_decoy",
    )
    q_mumu = float(table.q[SIGNAL, SIGNAL, _Z])
    e_mumu = table.error_rate(SIGNAL, SIGNAL, _Z)
    return _report_from_bounds(bounds, q_mumu, e_mumu, params, duty_factor)


def _interval_maps(tallies, basis, cells, epsilon_each, errors=False):
    lo: dict = {}
    hi: dict = {}
    for cell in cells:
        ia, ib = cell
        sent = tallies.sent[ia, ib, basis]
        if sent <= 0:
            from .montecarlo import cell_name

            raise InsufficientDataError(f"no sent pairs in cell {cell_name(ia, ib, basis)}")
        count = (tallies.error if errors else tallies.success)[ia, ib, basis]
        lo_c, hi_c = chernoff_interval(float(count), float(sent), epsilon_each)
        lo[cell] = float(lo_c / sent)
        hi[cell] = float(hi_c / sent)
    return lo, hi


def finite_key_pipeline(
    tallies,
    params: SystemParams,
    epsilon_total: float = 1e-10,
    f: float | None = None,
    duty_factor: float = 1.0,
) -> KeyRateReport:
    """Finite-size secure rate from observed tallies.

    Every consumed gain and error statistic gets a two-sided Chernoff
    interval with an equal share of ``epsilon_total``; the decoy bounds are
    then evaluated on the worst-case corner of the box.  The
    error-correction term uses the observed signal-signal frequencies
    directly (it is an operational cost, not an adversarial estimate).
    """
    if f is None:
        f = params.ec_efficiency_f
    n_intervals = 2 * len(_GAIN_CELLS) + len(_ERR_CELLS)
    epsilon_each = epsilon_total / n_intervals

    z_lo, z_hi = _interval_maps(tallies, _Z, _GAIN_CELLS, epsilon_each)
    x_lo, x_hi = _interval_maps(tallies, _X, _GAIN_CELLS, epsilon_each)
    w_lo, w_hi = _interval_maps(tallies, _X, _ERR_CELLS, epsilon_each, errors=True)

    ints_a = params.source_alice.intensities
    ints_b = params.source_bob.intensities
    # the signal-signal cell is validated for presence, not bounded
    for mp in (z_lo, z_hi, x_lo, x_hi):
        mp.setdefault((SIGNAL, SIGNAL), 0.0)
    if tallies.sent[SIGNAL, SIGNAL, _Z] <= 0:
        raise InsufficientDataError("no sent pairs in cell (signal, signal, Z)")

    y11 = y11_lower_bound((z_lo, z_hi), ints_a, ints_b, basis="Z")
    e11 = e11_upper_bound(((x_lo, x_hi)), ((w_lo, w_hi)), ints_a, ints_b)
    bounds = DecoyBounds(
        y11_lower=y11.value,
        e11_upper=e11.value,
        q11_lower=q11_from_y11(y11.value, params),
        regime="finite_key",
        epsilon_total=epsilon_total,
        flags=y11.flags + e11.flags,
    )
    sent_ss = float(tallies.sent[SIGNAL, SIGNAL, _Z])
    succ_ss = float(tallies.success[SIGNAL, SIGNAL, _Z])
    q_mumu = succ_ss / sent_ss
    e_mumu = float(tallies.error[SIGNAL, SIGNAL, _Z]) / succ_ss if succ_ss > 0 else 0.0
    report = key_rate(
        bounds.q11_lower, bounds.e11_upper, q_mumu, e_mumu, f,
        bounds=bounds,
        selection_prob=params.selection_prob_key,
        clock_hz=params.clock_hz,
        duty_factor=duty_factor,
    )
    return report


def asymptotic_from_tallies(tallies, params: SystemParams, duty_factor: float = 1.0) -> KeyRateReport:
    """Asymptotic rate on the point frequencies of observed tallies."""
    gains_z: dict = {}
    gains_x: dict = {}
    errs_x: dict = {}
    for ia in range(3):
        for ib in range(3):
            for basis, store in ((_Z, gains_z), (_X, gains_x)):
                sent = tallies.sent[ia, ib, basis]
                if sent <= 0:
                    from .montecarlo import cell_name

                    raise InsufficientDataError(
                        f"no sent pairs in cell {cell_name(ia, ib, basis)}"
                    )
                store[(ia, ib)] = float(tallies.success[ia, ib, basis] / sent)
            errs_x[(ia, ib)] = float(tallies.error[ia, ib, _X] / tallies.sent[ia, ib, _X])
    ints_a = params.source_alice.intensities
    ints_b = params.source_bob.intensities
    y11 = y11_lower_bound(gains_z, ints_a, ints_b, basis="Z")
    e11 = e11_upper_bound(gains_x, errs_x, ints_a, ints_b)
    bounds = DecoyBounds(
        y11_lower=y11.value,
        e11_upper=e11.value,
        q11_lower=q11_from_y11(y11.value, params),
        regime="asymptotic",
        flags=y11.flags + e11.flags,
    )
    sent_ss = float(tallies.sent[SIGNAL, SIGNAL, _Z])
    succ_ss = float(tallies.success[SIGNAL, SIGNAL, _Z])
    q_mumu = succ_ss / sent_ss
    e_mumu = float(tallies.error[SIGNAL, SIGNAL, _Z]) / succ_ss if succ_ss > 0 else 0.0
    return key_rate(
        bounds.q11_lower, bounds.e11_upper, q_mumu, e_mumu, params.ec_efficiency_f,
        bounds=bounds,
        selection_prob=params.selection_prob_key,
        clock_hz=params.clock_hz,
        duty_factor=duty_factor,
    )
