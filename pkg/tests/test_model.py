from dataclasses import replace

import numpy as np
import pytest

from mdiqkd.model import (
    BASES,
    PHOTON_CUTOFF,
    analytic_gain_table,
    binary_entropy,
    photon_pair_yield,
    poisson_pmf,
    poisson_tail,
    transmittance_from_db,
)
from .conftest import random_valid_params
from .oracles import fock_yield_oracle


class TestTransmittance:
    def test_zero_loss_identity(self):
        assert transmittance_from_db(0.0) == 1.0

    def test_50km_point(self):
        assert transmittance_from_db(9.9) == pytest.approx(0.10232929922807542, rel=1e-12)

    def test_200km_point(self):
        assert transmittance_from_db(39.6) == pytest.approx(1.0964781961431862e-4, rel=1e-12)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            transmittance_from_db(-0.1)


class TestBinaryEntropy:
    def test_max_entropy(self):
        assert binary_entropy(0.5) == 1.0

    def test_limits(self):
        assert binary_entropy(0.0) == 0.0
        assert binary_entropy(1.0) == 0.0

    def test_value_011(self):
        # -0.11*log2(0.11) - 0.89*log2(0.89), 40-digit mpmath reference
        assert binary_entropy(0.11) == pytest.approx(0.4999159581645280, rel=1e-13)

    def test_symmetry(self):
        grid = np.linspace(0.0, 1.0, 101)
        assert np.allclose(binary_entropy(grid), binary_entropy(1.0 - grid), atol=1e-14)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            binary_entropy(-0.01)
        with pytest.raises(ValueError):
            binary_entropy(1.01)


class TestGainTable:
    def test_vacuum_pair_no_light_no_dark(self, preset):
        p = preset.with_total_loss_db(0.0)
        p = replace(p, detectors=replace(p.detectors, dark_rate_hz=0.0))
        table = analytic_gain_table(p)
        assert table.q[2, 2, 0] == 0.0
        assert table.q[2, 2, 1] == 0.0

    def test_vacuum_pair_dark_only(self, preset_200km_table, preset):
        d = preset.detectors.dark_prob_per_window
        expected = 2.0 * d * d * (1.0 - d) ** 2
        assert preset_200km_table.q[2, 2, 0] == pytest.approx(expected, rel=1e-6)

    def test_swap_symmetry(self, preset):
        ch = preset.channel
        p = replace(preset, channel=replace(ch, loss_db_alice=12.0, loss_db_bob=21.0))
        swapped = replace(preset, channel=replace(ch, loss_db_alice=21.0, loss_db_bob=12.0))
        t1 = analytic_gain_table(p, phase_points=128)
        t2 = analytic_gain_table(swapped, phase_points=128)
        assert np.allclose(t1.q, np.swapaxes(t2.q, 0, 1), rtol=1e-10, atol=1e-18)
        assert np.allclose(t1.err_gain, np.swapaxes(t2.err_gain, 0, 1), rtol=1e-10, atol=1e-18)

    def test_monotone_in_loss(self, preset):
        losses = (5.0, 15.0, 25.0, 40.0)
        tables = [analytic_gain_table(preset.with_total_loss_db(L), phase_points=128) for L in losses]
        for earlier, later in zip(tables, tables[1:]):
            assert np.all(later.q <= earlier.q + 1e-15)

    def test_x_error_grows_with_dark(self, preset):
        p_hi = replace(preset, detectors=replace(preset.detectors, dark_rate_hz=1e5))
        lo = analytic_gain_table(preset, phase_points=128)
        hi = analytic_gain_table(p_hi, phase_points=128)
        assert hi.error_rate(0, 0, 1) >= lo.error_rate(0, 0, 1)
        assert hi.error_rate(0, 0, 0) >= lo.error_rate(0, 0, 0)

    def test_200km_x_error_band(self, preset_200km_table):
        e_x = preset_200km_table.error_rate(0, 0, 1)
        assert 0.24 <= e_x <= 0.27
        assert e_x < 0.26

    def test_200km_z_error_small(self, preset_200km_table):
        assert preset_200km_table.error_rate(0, 0, 0) < 0.0025

    def test_range_on_random_draws(self):
        rng = np.random.default_rng(2024)
        for _ in range(10_000):
            params = random_valid_params(rng)
            table = analytic_gain_table(params, phase_points=32)
            assert np.all(table.q >= 0.0) and np.all(table.q <= 1.0)
            errors = table.error_rates()
            assert np.all(errors >= 0.0) and np.all(errors <= 0.5 + 1e-12)

    def test_quadrature_converged(self, preset):
        p = preset.with_total_loss_db(9.9)
        coarse = analytic_gain_table(p, phase_points=128)
        fine = analytic_gain_table(p, phase_points=512)
        assert np.allclose(coarse.q, fine.q, rtol=1e-12, atol=1e-16)


class TestPhotonPairYield:
    def test_vacuum_vacuum_no_dark(self, preset):
        p = replace(preset, detectors=replace(preset.detectors, dark_rate_hz=0.0))
        assert photon_pair_yield(0, 0, p, "Z").y == 0.0

    def test_vacuum_vacuum_dark_coincidence_only(self, preset):
        d = preset.detectors.dark_prob_per_window
        got = photon_pair_yield(0, 0, preset, "Z")
        assert got.y == pytest.approx(2.0 * d * d * (1.0 - d) ** 2, rel=1e-9)
        assert got.e == 0.5  # random bits against dark coincidences

    def test_out_of_range_rejected(self, preset):
        with pytest.raises(ValueError):
            photon_pair_yield(PHOTON_CUTOFF + 1, 0, preset, "Z")
        with pytest.raises(ValueError):
            photon_pair_yield(0, -1, preset, "Z")

    @pytest.mark.parametrize("basis", BASES)
    @pytest.mark.parametrize("pair", [(1, 1), (2, 1), (2, 2), (3, 1), (0, 2)])
    def test_against_statevector_oracle(self, preset_50km, basis, pair):
        n, m = pair
        got = photon_pair_yield(n, m, preset_50km, basis)
        y_ref, e_ref = fock_yield_oracle(n, m, preset_50km, basis)
        assert got.y == pytest.approx(y_ref, rel=1e-9, abs=1e-15)
        assert got.e == pytest.approx(e_ref, rel=1e-9, abs=1e-12)

    def test_oracle_agreement_random_params(self):
        rng = np.random.default_rng(11)
        for _ in range(3):
            params = random_valid_params(rng, max_loss_db=25.0)
            for basis in BASES:
                got = photon_pair_yield(1, 1, params, basis)
                y_ref, e_ref = fock_yield_oracle(1, 1, params, basis)
                assert got.y == pytest.approx(y_ref, rel=1e-9, abs=1e-15)
                assert got.e == pytest.approx(e_ref, rel=1e-9, abs=1e-12)

    def test_efficiency_monotonicity(self, preset_50km):
        det = preset_50km.detectors
        halved = replace(
            preset_50km,
            detectors=replace(det, efficiency_d0=det.efficiency_d0 / 2,
                              efficiency_d1=det.efficiency_d1 / 2),
        )
        assert photon_pair_yield(1, 1, halved, "Z").y < photon_pair_yield(1, 1, preset_50km, "Z").y

    def test_error_rate_range(self, preset_200km_table, preset):
        for n in range(4):
            for m in range(4):
                for basis in BASES:
                    got = photon_pair_yield(n, m, preset, basis)
                    assert 0.0 <= got.y <= 1.0
                    assert 0.0 <= got.e <= 0.5


class TestPoissonConsistency:
    """The quadrature gains must equal the Poisson mixture of Fock yields."""

    @staticmethod
    def check(params, rel_label=""):
        table = analytic_gain_table(params, phase_points=512)
        for basis in (0, 1):
            yields = {
                (n, m): photon_pair_yield(n, m, params, basis).y
                for n in range(PHOTON_CUTOFF + 1)
                for m in range(PHOTON_CUTOFF + 1)
            }
            for ia, a in enumerate(params.source_alice.intensities):
                for ib, b in enumerate(params.source_bob.intensities):
                    pa = poisson_pmf(a, np.arange(PHOTON_CUTOFF + 1))
                    pb = poisson_pmf(b, np.arange(PHOTON_CUTOFF + 1))
                    mix = sum(
                        pa[n] * pb[m] * yields[(n, m)]
                        for n in range(PHOTON_CUTOFF + 1)
                        for m in range(PHOTON_CUTOFF + 1)
                    )
                    # truncation allowance: the tail mass bounds the missing terms
                    tol = 1e-10 + poisson_tail(a, PHOTON_CUTOFF) + poisson_tail(b, PHOTON_CUTOFF)
                    assert abs(mix - table.q[ia, ib, basis]) <= tol, (
                        f"{rel_label} cell ({ia},{ib},{basis})"
                    )

    def test_preset_at_two_losses(self, preset):
        self.check(preset)
        self.check(preset.with_total_loss_db(9.9))

    def test_small_intensities_tight(self, preset):
        # with tiny means the Poisson tail is ~1e-15 and the identity is
        # checked at the stated 1e-10 level outright
        src = replace(preset.source_alice, intensity_signal=0.05, intensity_decoy=0.01)
        params = replace(preset, source_alice=src, source_bob=replace(src))
        self.check(params)

    def test_random_draws(self):
        rng = np.random.default_rng(5)
        for i in range(6):
            self.check(random_valid_params(rng, max_loss_db=30.0), rel_label=f"draw{i}")
