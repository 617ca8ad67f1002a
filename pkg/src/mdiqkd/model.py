"""Closed-form optical model of the time-bin MDI link.

Both transmitters emit phase-randomized weak coherent pulses encoded in two
time bins (Z: which bin carries the light, X: relative phase 0 or pi across
a balanced split).  The pulses meet at a 50:50 beam splitter; each output
port is watched by one gated detector per time bin.

Post-selection and bit convention
---------------------------------
A slot succeeds when the two detectors fire in *opposite* time bins (one
event each, nothing else).  That coincidence tags the antisymmetric Bell
state, for which the transmitted bits are anti-correlated in both bases.
A success therefore counts as an error when the recorded bits are EQUAL;
key reconciliation flips one party's Z bits to align the sifted strings.

Randomness model shared with the Monte Carlo sampler:

* the relative laser phase between the two arms is uniform per slot,
* with probability ``misalignment_x`` the sign of one arm's late-bin
  amplitude flips (scalar stand-in for interferometer drift),
* each detector/bin window clicks independently with probability
  ``1 - (1 - d) * exp(-I)`` for incident mean photon number ``I``.

Gains here are computed by quadrature over the relative phase; the Fock
yields in :func:`photon_pair_yield` are computed by an independent
photon-number expansion, and the two routes must agree through the
Poisson mixture identity ``Q(a,b) = sum_nm P_a(n) P_b(m) Y_nm``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .params import SystemParams

__all__ = [
    "CLASSES",
    "BASES",
    "PHOTON_CUTOFF",
    "GainTable",
    "PairYield",
    "transmittance_from_db",
    "binary_entropy",
    "analytic_gain_table",
    "photon_pair_yield",
    "poisson_pmf",
    "poisson_tail",
    "encoding_amplitudes",
    "effective_efficiencies",
    "arm_transmittances",
]

CLASSES = ("signal", "decoy", "vacuum")
BASES = ("Z", "X")
PHOTON_CUTOFF = 7

# Beam-splitter sign of the second arm: port D0 sees (A + B), D1 sees (A - B).
_PORT_SIGN = (1.0, -1.0)


def transmittance_from_db(loss_db: float) -> float:
    """Convert an attenuation in dB to a transmittance in [0, 1]."""
    if loss_db < 0:
        raise ValueError(f"loss must be >= 0 dB, got {loss_db}")
    return 10.0 ** (-loss_db / 10.0)


def binary_entropy(e):
    """Binary Shannon entropy H(e) in bits, with H(0) = H(1) = 0."""
    arr = np.asarray(e, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"entropy argument outside [0,1]: {e}")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -arr * np.log2(arr) - (1.0 - arr) * np.log2(1.0 - arr)
    h = np.where((arr == 0.0) | (arr == 1.0), 0.0, h)
    return float(h) if np.isscalar(e) or getattr(e, "ndim", 0) == 0 else h


def poisson_pmf(mean: float, n) -> np.ndarray:
    """P(N = n) for N ~ Poisson(mean); exact at mean = 0."""
    n = np.asarray(n)
    if mean == 0.0:
        return np.where(n == 0, 1.0, 0.0).astype(float)
    # mean <= O(1) here, so the direct form is well conditioned
    return np.exp(-mean) * mean ** n / np.array([math.factorial(int(k)) for k in n.ravel()]).reshape(n.shape)


def poisson_tail(mean: float, cutoff: int) -> float:
    """P(N > cutoff) for N ~ Poisson(mean)."""
    pmf = poisson_pmf(mean, np.arange(cutoff + 1))
    return max(0.0, 1.0 - float(pmf.sum()))


def arm_transmittances(params: SystemParams) -> tuple[float, float]:
    """Fiber transmittance of each arm (source to beam splitter)."""
    ch = params.channel
    return (
        transmittance_from_db(ch.loss_db_alice),
        transmittance_from_db(ch.loss_db_bob),
    )


def effective_efficiencies(params: SystemParams) -> tuple[float, float]:
    """Detector efficiencies with the measurement-site insertion loss folded in."""
    ins = transmittance_from_db(params.channel.insertion_loss_db)
    det = params.detectors
    return (det.efficiency_d0 * ins, det.efficiency_d1 * ins)


def encoding_amplitudes(basis, bit, leak_fraction: float):
    """Unit-normalized time-bin amplitudes (early, late) for a qubit choice.

    ``basis``/``bit`` may be scalars or arrays (0 = Z, 1 = X).  Z encodes the
    bit in which bin carries the light, with ``leak_fraction`` of the
    intensity leaking into the wrong bin; X splits evenly with the bit in
    the relative sign.
    """
    basis = np.asarray(basis)
    bit = np.asarray(bit)
    hi = math.sqrt(1.0 - leak_fraction)
    lo = math.sqrt(leak_fraction)
    rt = math.sqrt(0.5)
    amp0 = np.where(basis == 0, np.where(bit == 0, hi, lo), rt)
    amp1 = np.where(basis == 0, np.where(bit == 0, lo, hi), np.where(bit == 0, rt, -rt))
    return amp0, amp1


@dataclass(frozen=True)
class GainTable:
    """Per-slot coincidence statistics for every intensity pair and basis.

    ``q[ia, ib, basis]`` is the probability that a slot in which Alice sent
    class ``ia`` and Bob class ``ib`` (both in ``basis``) is declared a
    success; ``err_gain`` is the joint probability of success *and* wrong
    bit relation, so the conditional error rate is ``err_gain / q``.
    Class order follows :data:`CLASSES`, basis order :data:`BASES`.
    """

    q: np.ndarray
    err_gain: np.ndarray
    intensities_alice: tuple[float, float, float]
    intensities_bob: tuple[float, float, float]

    def error_rate(self, ia: int, ib: int, basis: int) -> float:
        q = self.q[ia, ib, basis]
        return float(self.err_gain[ia, ib, basis] / q) if q > 0 else 0.0

    def error_rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            e = np.where(self.q > 0, self.err_gain / np.where(self.q > 0, self.q, 1.0), 0.0)
        return e

    def gains_dict(self, basis: int) -> dict[tuple[int, int], float]:
        return {(ia, ib): float(self.q[ia, ib, basis]) for ia in range(3) for ib in range(3)}

    def err_gains_dict(self, basis: int) -> dict[tuple[int, int], float]:
        return {(ia, ib): float(self.err_gain[ia, ib, basis]) for ia in range(3) for ib in range(3)}


def _bit_flip_grid(mis: float):
    """Enumerate (bit_a, bit_b, flip_sign, weight) branches for averaging."""
    branches = []
    for ba in (0, 1):
        for bb in (0, 1):
            for flip, wf in ((1.0, 1.0 - mis), (-1.0, mis)):
                if wf == 0.0:
                    continue
                branches.append((ba, bb, flip, 0.25 * wf))
    return branches


def analytic_gain_table(params: SystemParams, phase_points: int = 256) -> GainTable:
    """Expected gains and error gains of the coherent-pulse model.

    Averages the exact per-phase click probabilities over the uniform
    relative laser phase (midpoint rule; the integrand is smooth and
    periodic, so convergence is spectral) and over bit and misalignment
    branches.  Vectorized over intensity pairs, branches and phase.
    """
    tau_a, tau_b = arm_transmittances(params)
    eta = effective_efficiencies(params)
    d = params.detectors.dark_prob_per_window
    leak = params.channel.leak_fraction
    mis = params.channel.misalignment_x
    ints_a = params.source_alice.intensities
    ints_b = params.source_bob.intensities

    cos_phi = np.cos((np.arange(phase_points) + 0.5) * (2.0 * np.pi / phase_points))
    root_a = np.sqrt(np.asarray(ints_a) * tau_a)           # (3,)
    root_b = np.sqrt(np.asarray(ints_b) * tau_b)

    q = np.zeros((3, 3, 2))
    w = np.zeros((3, 3, 2))
    for basis in (0, 1):
        branches = _bit_flip_grid(mis)
        bits_a = np.array([br[0] for br in branches])
        bits_b = np.array([br[1] for br in branches])
        flips = np.array([br[2] for br in branches])
        weights = np.array([br[3] for br in branches])
        u0, u1 = encoding_amplitudes(basis, bits_a, leak)   # (nbr,)
        v0, v1 = encoding_amplitudes(basis, bits_b, leak)
        v1 = v1 * flips

        # amplitude grids: (3, 3, nbr) for each party and bin
        amp_a = (root_a[:, None, None] * u0, root_a[:, None, None] * u1)
        amp_b = (root_b[None, :, None] * v0, root_b[None, :, None] * v1)

        def click_prob(k, t):
            inten = 0.5 * eta[k] * (
                amp_a[t][..., None] ** 2
                + amp_b[t][..., None] ** 2
                + 2.0 * _PORT_SIGN[k] * (amp_a[t] * amp_b[t])[..., None] * cos_phi
            )
            return 1.0 - (1.0 - d) * np.exp(-inten)        # (3, 3, nbr, P)

        p00, p01 = click_prob(0, 0), click_prob(0, 1)
        p10, p11 = click_prob(1, 0), click_prob(1, 1)
        pat_a = p00 * (1.0 - p01) * (1.0 - p10) * p11
        pat_b = (1.0 - p00) * p01 * p10 * (1.0 - p11)
        succ = np.mean(pat_a + pat_b, axis=-1)             # (3, 3, nbr)

        q[:, :, basis] = succ @ weights
        w[:, :, basis] = succ @ (weights * (bits_a == bits_b))
    return GainTable(q=q, err_gain=w, intensities_alice=ints_a, intensities_bob=ints_b)


class PairYield(NamedTuple):
    y: float
    e: float


# ---------------------------------------------------------------------------
# Photon-number (Fock) route.
#
# For inputs |n> and |m> in single qubit modes the joint no-click
# probability over a set S of detector/bin windows is
#
#     G_S = sum_j  n! m! / (j!^2 (n-j)! (m-j)!)  xA^(n-j) xB^(m-j) y^(2j)
#
# where xA, xB are each photon's survival-weighted overlaps outside S and
# y is the cross overlap of the two input modes restricted to S.  Click
# pattern probabilities follow by inclusion-exclusion over the four
# windows, then dark counts are overlaid per window.
# ---------------------------------------------------------------------------

_WINDOWS = tuple((k, t) for k in (0, 1) for t in (0, 1))
_N_WIN = 4
_FULL_MASK = (1 << _N_WIN) - 1
_SUCCESS_MASKS = (
    (1 << 0) | (1 << 3),  # D0 at bin 0 with D1 at bin 1
    (1 << 1) | (1 << 2),  # D0 at bin 1 with D1 at bin 0
)


def _noclick_moments(mask: int, u, v, tau_a, tau_b, eta):
    """(xA, xB, y) for the window set encoded by ``mask``."""
    xa = 1.0
    xb = 1.0
    y = 0.0
    for idx, (k, t) in enumerate(_WINDOWS):
        if mask & (1 << idx):
            xa -= 0.5 * tau_a * eta[k] * u[t] * u[t]
            xb -= 0.5 * tau_b * eta[k] * v[t] * v[t]
            y -= 0.5 * math.sqrt(tau_a * tau_b) * _PORT_SIGN[k] * eta[k] * u[t] * v[t]
    return xa, xb, y


def _vacuum_weight(n: int, m: int, xa: float, xb: float, y: float) -> float:
    total = 0.0
    y2 = y * y
    for j in range(min(n, m) + 1):
        coeff = (
            math.factorial(n) * math.factorial(m)
            / (math.factorial(j) ** 2 * math.factorial(n - j) * math.factorial(m - j))
        )
        total += coeff * xa ** (n - j) * xb ** (m - j) * y2 ** j
    return total


def _popcount(x: int) -> int:
    return bin(x).count("1")


def _subsets(mask: int):
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


def _pattern_success_prob(n, m, u, v, tau_a, tau_b, eta, dark) -> float:
    """Probability of an exact opposite-bin coincidence for Fock inputs."""
    g = [
        _vacuum_weight(n, m, *_noclick_moments(mask, u, v, tau_a, tau_b, eta))
        for mask in range(_FULL_MASK + 1)
    ]
    # light-only probability of clicking exactly the windows in `pattern`
    def p_light(pattern: int) -> float:
        comp = _FULL_MASK & ~pattern
        return sum((-1) ** _popcount(vv) * g[comp | vv] for vv in _subsets(pattern))

    total = 0.0
    for obs in _SUCCESS_MASKS:
        acc = 0.0
        for light in _subsets(obs):
            acc += p_light(light) * dark ** (_popcount(obs) - _popcount(light))
        total += acc * (1.0 - dark) ** (_N_WIN - _popcount(obs))
    return total


def photon_pair_yield(n: int, m: int, params: SystemParams, basis) -> PairYield:
    """Yield Y_nm and conditional error e_nm for an n- and m-photon pair.

    ``basis`` is ``"Z"``/``"X"`` (or 0/1); bits and the misalignment flip
    are averaged with their natural weights.  Photon numbers above
    :data:`PHOTON_CUTOFF` are rejected: the Poisson weight beyond the
    cutoff is negligible for the intensities this model targets, and the
    factorial sums lose accuracy there.
    """
    if not (0 <= n <= PHOTON_CUTOFF and 0 <= m <= PHOTON_CUTOFF):
        raise ValueError(
            f"photon numbers must lie in [0, {PHOTON_CUTOFF}], got n={n} m={m}"
        )
    basis_idx = {"Z": 0, "X": 1, 0: 0, 1: 1}[basis]
    tau_a, tau_b = arm_transmittances(params)
    eta = effective_efficiencies(params)
    d = params.detectors.dark_prob_per_window
    leak = params.channel.leak_fraction

    y_total = 0.0
    v_total = 0.0
    for ba, bb, flip, weight in _bit_flip_grid(params.channel.misalignment_x):
        u0, u1 = encoding_amplitudes(basis_idx, ba, leak)
        v0, v1 = encoding_amplitudes(basis_idx, bb, leak)
        succ = _pattern_success_prob(
            n, m, (float(u0), float(u1)), (float(v0), float(v1) * flip),
            tau_a, tau_b, eta, d,
        )
        y_total += weight * succ
        if ba == bb:
            v_total += weight * succ
    y_total = min(1.0, max(0.0, y_total))
    e = v_total / y_total if y_total > 0 else 0.0
    return PairYield(y=y_total, e=min(0.5, e) if y_total > 0 else 0.0)
