"""Independent reference computations used to pin expected test values.

The Fock-yield oracle here deliberately avoids the production code path:
it expands the two-source photon state over explicit occupation vectors
of all ten output modes (four detected windows, four detector-loss
branches, two arm-loss modes) and applies Born sampling plus dark-count
overlay directly.  Agreement with the closed-form production formula is
then a genuine two-route check.
"""

import math
from itertools import product

from mdiqkd.model import (
    arm_transmittances,
    effective_efficiencies,
    encoding_amplitudes,
)

_N_MODES = 10  # 4 detected, 4 detector-loss, 2 arm-loss


def _mode_vectors(params, basis_idx, bit_a, bit_b, flip):
    tau_a, tau_b = arm_transmittances(params)
    eta = effective_efficiencies(params)
    leak = params.channel.leak_fraction
    u0, u1 = encoding_amplitudes(basis_idx, bit_a, leak)
    v0, v1 = encoding_amplitudes(basis_idx, bit_b, leak)
    u = (float(u0), float(u1))
    v = (float(v0), float(v1) * flip)
    port_sign = (1.0, -1.0)
    c_a = [0.0] * _N_MODES
    c_b = [0.0] * _N_MODES
    idx = 0
    for k in (0, 1):
        for t in (0, 1):
            c_a[idx] = math.sqrt(tau_a * eta[k] / 2.0) * u[t]
            c_b[idx] = port_sign[k] * math.sqrt(tau_b * eta[k] / 2.0) * v[t]
            c_a[4 + idx] = math.sqrt(tau_a * (1.0 - eta[k]) / 2.0) * u[t]
            c_b[4 + idx] = port_sign[k] * math.sqrt(tau_b * (1.0 - eta[k]) / 2.0) * v[t]
            idx += 1
    c_a[8] = math.sqrt(1.0 - tau_a)
    c_b[9] = math.sqrt(1.0 - tau_b)
    return c_a, c_b


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in _compositions(total - head, parts - 1):
            yield (head,) + rest


def _monomial(coeffs, occupation):
    value = 1.0
    for c, k in zip(coeffs, occupation):
        if k:
            if c == 0.0:
                return 0.0
            value *= c ** k
    return value


def _multinomial(total, occupation):
    value = math.factorial(total)
    for k in occupation:
        value //= math.factorial(k)
    return value


def fock_success_oracle(n, m, params, basis, bit_a, bit_b, flip=1.0):
    """Probability of an exact opposite-bin coincidence for |n>, |m> inputs.

    Enumerates all output occupation states of the 10-mode network,
    accumulates Born probabilities per light pattern on the four detected
    windows, then overlays independent dark counts.
    """
    basis_idx = {"Z": 0, "X": 1, 0: 0, 1: 1}[basis]
    c_a, c_b = _mode_vectors(params, basis_idx, bit_a, bit_b, flip)

    amplitudes: dict = {}
    for alpha in _compositions(n, _N_MODES):
        amp_a = _multinomial(n, alpha) * _monomial(c_a, alpha)
        if amp_a == 0.0:
            continue
        for beta in _compositions(m, _N_MODES):
            amp_b = _multinomial(m, beta) * _monomial(c_b, beta)
            if amp_b == 0.0:
                continue
            gamma = tuple(a + b for a, b in zip(alpha, beta))
            amplitudes[gamma] = amplitudes.get(gamma, 0.0) + amp_a * amp_b

    norm = math.factorial(n) * math.factorial(m)
    pattern_prob: dict = {}
    total = 0.0
    for gamma, amp in amplitudes.items():
        weight = 1.0
        for k in gamma:
            weight *= math.factorial(k)
        prob = amp * amp * weight / norm
        light = tuple(1 if gamma[i] > 0 else 0 for i in range(4))
        pattern_prob[light] = pattern_prob.get(light, 0.0) + prob
        total += prob
    assert abs(total - 1.0) < 1e-9, f"oracle state not normalized: {total}"

    d = params.detectors.dark_prob_per_window
    success = 0.0
    for observed in ((1, 0, 0, 1), (0, 1, 1, 0)):
        for light, p in pattern_prob.items():
            if any(l and not o for l, o in zip(light, observed)):
                continue
            extra = sum(o and not l for o, l in zip(observed, light))
            quiet = sum(1 for o in observed if not o)
            success += p * d ** extra * (1.0 - d) ** quiet
    return success


def fock_yield_oracle(n, m, params, basis):
    """Bit- and misalignment-averaged (yield, error) for an (n, m) pair."""
    mis = params.channel.misalignment_x
    y = 0.0
    v = 0.0
    for bit_a, bit_b in product((0, 1), repeat=2):
        for flip, w in ((1.0, 1.0 - mis), (-1.0, mis)):
            if w == 0.0:
                continue
            p = 0.25 * w * fock_success_oracle(n, m, params, basis, bit_a, bit_b, flip)
            y += p
            if bit_a == bit_b:
                v += p
    return y, (v / y if y > 0 else 0.0)
