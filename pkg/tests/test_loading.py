"""SNR estimation, gap-based bit/energy loading, rate accounting."""

import numpy as np
import pytest
from scipy.special import erfcinv

from spadlink.errors import DomainError, FramingError
from spadlink.loading import (
    ALLOWED_BITS,
    LoadingPlan,
    SnrProfile,
    achievable_rate,
    estimate_snr,
    load_bits_energy,
    required_snr,
    snr_gap,
)
from spadlink.tx import OfdmConfig, generate_bits, qam_map


def qfunc_inv(p):
    return np.sqrt(2) * erfcinv(2 * p)


@pytest.fixture
def cfg():
    return OfdmConfig()


class TestEstimateSnr:
    def test_noiseless_hits_ceiling(self, cfg):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(64, 511)) + 1j * rng.normal(size=(64, 511))
        profile = estimate_snr(x, x)
        np.testing.assert_allclose(profile.snr, 1e6)

    def test_known_noise_variance(self, cfg):
        rng = np.random.default_rng(1)
        n_sym = 512
        x = (rng.normal(size=(n_sym, 64)) + 1j * rng.normal(size=(n_sym, 64))) / np.sqrt(2)
        noise = (rng.normal(size=x.shape) + 1j * rng.normal(size=x.shape)) * np.sqrt(0.05)
        profile = estimate_snr(x + noise, x)
        # chi-squared spread of the error-power estimate: rel sigma ~ 1/sqrt(n)
        tol = 4 / np.sqrt(n_sym)
        assert np.all(np.abs(profile.snr - 10) < 10 * 2.5 * tol)

    def test_zero_output_formula_value(self, cfg):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(64, 16)) + 1j * rng.normal(size=(64, 16))
        profile = estimate_snr(np.zeros_like(x), x)
        np.testing.assert_allclose(profile.snr, 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(FramingError):
            estimate_snr(np.zeros((4, 8)), np.zeros((4, 9)))


class TestSnrGap:
    def test_gap_value(self):
        # gap = Qinv(target/2)^2 / 3; at 2e-3: Qinv(1e-3) = 3.0902
        gap = snr_gap(2e-3)
        assert gap == pytest.approx(qfunc_inv(1e-3) ** 2 / 3, rel=1e-12)
        assert gap == pytest.approx(3.183, rel=1e-3)

    def test_required_snr_floors(self):
        gap = snr_gap(2e-3)
        for b in (1, 2, 4, 6, 8, 10):
            assert required_snr(b, 2e-3) >= gap * (2**b - 1) - 1e-12
        # BPSK needs (Qinv(t))^2/2, above the plain gap value
        assert required_snr(1, 2e-3) == pytest.approx(qfunc_inv(2e-3) ** 2 / 2)
        assert required_snr(1, 2e-3) > gap


class TestLoadBitsEnergy:
    def test_uniform_profile_uniform_bits(self, cfg):
        # 20 dB uniform: log2(1 + snr/gap) = 5.02, floor to allowed -> 4
        profile = SnrProfile(snr=np.full(511, 100.0))
        plan = load_bits_energy(profile, 2e-3, cfg)
        assert np.all(plan.bits == 4)
        np.testing.assert_allclose(plan.energy, 1.0)

    def test_dead_subcarriers(self, cfg):
        snr = np.full(511, 100.0)
        snr[13] = 0.0
        snr[200] = 0.0
        plan = load_bits_energy(SnrProfile(snr=snr), 2e-3, cfg)
        assert plan.bits[13] == 0 and plan.energy[13] == 0
        assert plan.bits[200] == 0 and plan.energy[200] == 0

    def test_all_below_threshold_gives_empty_plan(self, cfg):
        profile = SnrProfile(snr=np.full(511, 1.0))
        plan = load_bits_energy(profile, 2e-3, cfg)
        assert plan.bits_per_symbol == 0
        assert plan.total_rate == 0.0

    def test_energy_conservation(self, cfg):
        rng = np.random.default_rng(3)
        for trial in range(10):
            snr = 10 ** rng.uniform(-1, 3.5, size=511)
            plan = load_bits_energy(SnrProfile(snr=snr), 2e-3, cfg)
            active = plan.bits > 0
            if np.any(active):
                assert abs(plan.energy[active].mean() - 1.0) < 1e-9

    def test_gap_inequality(self, cfg):
        rng = np.random.default_rng(4)
        gap = snr_gap(2e-3)
        for trial in range(10):
            snr = 10 ** rng.uniform(-1, 3.5, size=511)
            plan = load_bits_energy(SnrProfile(snr=snr), 2e-3, cfg)
            active = plan.bits > 0
            lhs = snr[active] * plan.energy[active]
            rhs = gap * (2.0 ** plan.bits[active] - 1)
            assert np.all(lhs >= rhs - 1e-9)

    def test_monotone_in_snr(self, cfg):
        rng = np.random.default_rng(5)
        for trial in range(8):
            snr = 10 ** rng.uniform(0, 3, size=511)
            base = load_bits_energy(SnrProfile(snr=snr), 2e-3, cfg)
            k = int(rng.integers(0, 511))
            boosted = snr.copy()
            boosted[k] *= 10 ** rng.uniform(0.1, 1.0)
            plan = load_bits_energy(SnrProfile(snr=boosted), 2e-3, cfg)
            assert plan.bits[k] >= base.bits[k]
            assert plan.total_rate >= base.total_rate

    def test_allowed_orders_only(self, cfg):
        rng = np.random.default_rng(6)
        snr = 10 ** rng.uniform(-1, 4, size=511)
        plan = load_bits_energy(SnrProfile(snr=snr), 2e-3, cfg)
        assert set(np.unique(plan.bits)) <= set(ALLOWED_BITS)

    def test_end_to_end_ber_meets_target(self, cfg):
        # Channel whose per-subcarrier SNR matches the profile: loaded
        # transmission measures BER <= 1.5x target with >= 100 errors.
        rng = np.random.default_rng(7)
        snr = 10 ** rng.uniform(0.5, 2.5, size=511)
        target = 2e-3
        plan = load_bits_energy(SnrProfile(snr=snr), target, cfg)
        active = np.nonzero(plan.bits)[0]
        assert active.size > 0
        errors = 0
        bits_total = 0
        trial = 0
        while errors < 100 and trial < 400:
            n_sym = 20
            bits = generate_bits(int(plan.bits.sum()) * n_sym, 1000 + trial)
            per_row = bits.reshape(n_sym, -1)
            col = 0
            for k in active:
                b = int(plan.bits[k])
                tx = qam_map(per_row[:, col : col + b].ravel(), 1 << b)
                noise = (rng.normal(size=tx.size) + 1j * rng.normal(size=tx.size)) * np.sqrt(
                    0.5 / snr[k]
                )
                rx = tx * np.sqrt(plan.energy[k]) + noise
                from spadlink.rx import QamScheme, decide_and_count

                plan_k_bits = np.zeros(1, dtype=int)
                plan_k_bits[0] = b
                rep = decide_and_count(
                    (rx / np.sqrt(plan.energy[k])).reshape(-1, 1),
                    per_row[:, col : col + b].ravel(),
                    QamScheme(bits=plan_k_bits, energy=np.ones(1)),
                )
                errors += rep.bit_errors
                bits_total += rep.bits_compared
                col += b
            trial += 1
        assert errors >= 100
        assert errors / bits_total <= 1.5 * target


class TestAchievableRate:
    def test_empty_plan(self, cfg):
        plan = LoadingPlan(bits=np.zeros(511, dtype=int), energy=np.zeros(511), total_rate=0.0)
        assert achievable_rate(plan, cfg) == 0.0

    def test_reference_arithmetic(self, cfg):
        # 511 subcarriers x 4 bits, fft 1024, cp 16, BW 1.4 GHz -> 2.752 Gbps
        plan = LoadingPlan(
            bits=np.full(511, 4, dtype=int), energy=np.ones(511), total_rate=0.0
        )
        rate = achievable_rate(plan, cfg)
        expected = 511 * 4 * (1.4e9 / 1024) * (1024 / 1040)
        assert rate == pytest.approx(expected, rel=1e-12)
        assert rate == pytest.approx(2.752e9, rel=1e-3)

    def test_linear_in_bits(self, cfg):
        bits = np.zeros(511, dtype=int)
        bits[:100] = 2
        plan1 = LoadingPlan(bits=bits, energy=(bits > 0) * 1.0, total_rate=0.0)
        plan2 = LoadingPlan(bits=2 * bits, energy=(bits > 0) * 1.0, total_rate=0.0)
        assert achievable_rate(plan2, cfg) == pytest.approx(2 * achievable_rate(plan1, cfg))

    def test_plan_consistency_with_loader(self, cfg):
        profile = SnrProfile(snr=np.full(511, 100.0))
        plan = load_bits_energy(profile, 2e-3, cfg)
        assert plan.total_rate == pytest.approx(achievable_rate(plan, cfg))


class TestValidation:
    def test_plan_invariants(self):
        with pytest.raises(DomainError):
            LoadingPlan(bits=np.array([0, 2]), energy=np.array([0.5, 1.0]), total_rate=0.0)
        with pytest.raises(DomainError):
            SnrProfile(snr=np.array([1.0, -2.0]))
        with pytest.raises(DomainError):
            snr_gap(0.7)
        with pytest.raises(FramingError):
            load_bits_energy(SnrProfile(snr=np.ones(10)), 2e-3, OfdmConfig())