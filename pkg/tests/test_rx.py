"""Receiver DSP: sync, matched filter, Volterra equalizer, RLS, OFDM
demodulation, decisions."""

import numpy as np
import pytest
from scipy.special import erfc

from spadlink.errors import (
    DivergenceError,
    DomainError,
    FdeSingularityError,
    FramingError,
    SyncError,
)
from spadlink.dsp import rrc_taps
from spadlink.rx import (
    BerReport,
    EqualizerConfig,
    OokSlicer,
    QamScheme,
    VolterraWeights,
    build_regressors,
    decide_and_count,
    equalize,
    estimate_fde,
    matched_filter_downsample,
    ofdm_demodulate,
    rls_train,
    synchronize,
    train_slicer,
    volterra_apply,
)
from spadlink.tx import OfdmConfig, OokConfig, generate_bits, ofdm_assemble_frame, ook_modulate, qam_map
from spadlink.waveforms import ElectricalWaveform


def qfunc(x):
    return 0.5 * erfc(x / np.sqrt(2))


def brute_force_volterra(x, w1, w2):
    """Literal double-sum evaluation used as the independent oracle."""
    x = np.asarray(x, float)
    out = np.zeros(x.size)
    for n in range(x.size):
        acc = 0.0
        for i in range(len(w1)):
            if n - i >= 0:
                acc += w1[i] * x[n - i]
        for m1 in range(w2.shape[0]):
            for m2 in range(m1, w2.shape[0]):
                if n - m2 >= 0 and n - m1 >= 0:
                    acc += w2[m1, m2] * x[n - m1] * x[n - m2]
        out[n] = acc
    return out


class TestSynchronize:
    def test_exact_embed(self):
        rng = np.random.default_rng(0)
        pre = ook_modulate(generate_bits(64, 5), OokConfig(symbol_rate=1e9)).samples
        rx = np.concatenate([np.zeros(1234), pre, np.zeros(400)])
        wave = ElectricalWaveform(4e9, rx)
        assert synchronize(wave, pre) == 1234

    def test_noisy_embed_monte_carlo(self):
        # SNR 10 dB: signal power 1, noise power 0.1
        pre = ook_modulate(generate_bits(128, 5), OokConfig(symbol_rate=1e9)).samples
        sig_rms = np.sqrt(np.mean(pre**2))
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            rx = np.concatenate([np.zeros(1234), pre, np.zeros(400)])
            rx = rx + rng.normal(0, sig_rms / np.sqrt(10), rx.size)
            try:
                if synchronize(ElectricalWaveform(4e9, rx), pre) == 1234:
                    hits += 1
            except SyncError:
                pass
        assert hits >= 99

    def test_pure_noise_fails(self):
        rng = np.random.default_rng(1)
        pre = ook_modulate(generate_bits(128, 5), OokConfig(symbol_rate=1e9)).samples
        rx = rng.normal(0, 1.0, 8000)
        with pytest.raises(SyncError):
            synchronize(ElectricalWaveform(4e9, rx), pre)

    def test_too_short(self):
        with pytest.raises(FramingError):
            synchronize(ElectricalWaveform(1e9, np.zeros(10)), np.ones(20))


class TestMatchedFilterDownsample:
    def test_back_to_back(self):
        cfg = OokConfig(symbol_rate=1e9)
        bits = generate_bits(800, 2)
        wave = ook_modulate(bits, cfg)
        soft = matched_filter_downsample(wave, cfg, offset=0)[: bits.size]
        signs = (soft > 0).astype(int)
        np.testing.assert_array_equal(signs, bits)
        # magnitudes near 1 within the span-16 truncation residue
        assert np.abs(np.abs(soft[20:-20]) - 1).max() < 0.05

    def test_shift_equivariance(self):
        cfg = OokConfig(symbol_rate=1e9)
        bits = generate_bits(300, 3)
        wave = ook_modulate(bits, cfg)
        k = 5
        shifted = ElectricalWaveform(
            wave.sample_rate,
            np.concatenate([np.zeros(k * cfg.samples_per_symbol), wave.samples]),
        )
        base = matched_filter_downsample(wave, cfg, 0)[:300]
        moved = matched_filter_downsample(shifted, cfg, k * cfg.samples_per_symbol)[:300]
        np.testing.assert_allclose(moved, base, atol=1e-9)

    def test_awgn_noise_gain(self):
        cfg = OokConfig(symbol_rate=1e9)
        rng = np.random.default_rng(4)
        sigma = 0.37
        wave = ElectricalWaveform(cfg.sample_rate, rng.normal(0, sigma, 400_000))
        soft = matched_filter_downsample(wave, cfg, 0)
        assert soft.std() == pytest.approx(sigma, rel=0.02)

    def test_offset_past_end(self):
        cfg = OokConfig(symbol_rate=1e9)
        wave = ook_modulate(generate_bits(50, 1), cfg)
        with pytest.raises(FramingError):
            matched_filter_downsample(wave, cfg, offset=10**6)


class TestVolterraApply:
    def test_linear_degenerate(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=500)
        w1 = rng.normal(size=7)
        w = VolterraWeights(w1=w1, w2=np.zeros((3, 3)))
        np.testing.assert_allclose(volterra_apply(x, w), np.convolve(x, w1)[:500], rtol=1e-12)

    def test_hand_example(self):
        w = VolterraWeights(w1=[0.5, 0.25], w2=[[0.1, 0.2], [0.0, 0.3]])
        x = [1.0, 2.0]
        out = volterra_apply(x, w)
        # d(1) = 0.5*2 + 0.25*1 + 0.1*4 + 0.2*2*1 + 0.3*1 = 2.35
        assert out[1] == pytest.approx(2.35, abs=1e-12)
        # d(0) = 0.5*1 + 0.1*1 = 0.6
        assert out[0] == pytest.approx(0.6, abs=1e-12)

    @pytest.mark.parametrize("n_l,n_nl", [(2, 2), (8, 4), (41, 21)])
    def test_against_brute_force(self, n_l, n_nl):
        rng = np.random.default_rng(n_l * 100 + n_nl)
        x = rng.normal(size=300)
        w1 = rng.normal(size=n_l)
        w2 = np.triu(rng.normal(size=(n_nl, n_nl)))
        w = VolterraWeights(w1=w1, w2=w2)
        ref = brute_force_volterra(x, w1, w2)
        fast = volterra_apply(x, w)
        scale = np.abs(ref).max()
        assert np.abs(fast - ref).max() / scale < 1e-12

    def test_lower_triangle_rejected(self):
        with pytest.raises(DomainError):
            VolterraWeights(w1=[1.0], w2=[[0.0, 0.0], [1.0, 0.0]])


class TestRlsTrain:
    def test_identity_channel(self):
        rng = np.random.default_rng(6)
        cfg = EqualizerConfig(n_linear=11, n_nonlinear=5, decision_delay=5)
        x = rng.normal(size=4000)
        res = rls_train(x, x, cfg)
        assert res.final_mse() < 1e-6
        w1 = res.weights.w1
        assert abs(w1[5] - 1.0) < 1e-3
        assert np.abs(np.delete(w1, 5)).max() < 1e-3
        assert np.abs(res.weights.w2).max() < 1e-3

    def test_fir_channel_linear_mode(self):
        rng = np.random.default_rng(7)
        cfg = EqualizerConfig(n_linear=21, n_nonlinear=0, decision_delay=10, mode="linear")
        s = rng.normal(size=6000)
        x = np.convolve(s, [1.0, 0.45, -0.2])[: s.size]
        res = rls_train(x, s, cfg)
        assert res.final_mse() < 1e-4

    def test_quadratic_map_needs_nonlinear_terms(self):
        # System identification of y = x + 0.2 x^2: representable exactly by
        # the second-order taps, not by any linear filter.
        rng = np.random.default_rng(8)
        x = rng.normal(size=8000)
        y = x + 0.2 * x * x
        cfg_l = EqualizerConfig(n_linear=11, n_nonlinear=5, decision_delay=2, mode="linear")
        cfg_v = EqualizerConfig(n_linear=11, n_nonlinear=5, decision_delay=2, mode="volterra")
        res_l = rls_train(x, y, cfg_l)
        res_v = rls_train(x, y, cfg_v)
        assert res_v.final_mse() <= 0.1 * res_l.final_mse()

    def test_matches_batch_least_squares_at_unity_forgetting(self):
        rng = np.random.default_rng(9)
        cfg = EqualizerConfig(
            n_linear=6, n_nonlinear=3, rls_forgetting=1.0, rls_delta=1e-6,
            decision_delay=2, mode="volterra",
        )
        x = rng.normal(size=800)
        w_true = rng.normal(size=cfg.n_taps)
        u = build_regressors(x, cfg)
        d = u @ w_true
        reference = np.zeros_like(x)
        reference[: x.size - cfg.decision_delay] = d[cfg.decision_delay :]
        res = rls_train(x, reference, cfg)
        rows = u[cfg.decision_delay :]
        targets = d[cfg.decision_delay :]
        w_batch = np.linalg.solve(
            rows.T @ rows + cfg.rls_delta * np.eye(cfg.n_taps), rows.T @ targets
        )
        w_rls = np.concatenate(
            [res.weights.w1, res.weights.w2[np.triu_indices(cfg.n_nonlinear)]]
        )
        assert np.linalg.norm(w_rls - w_batch) / np.linalg.norm(w_batch) < 1e-6

    def test_too_short_training(self):
        cfg = EqualizerConfig(n_linear=41, n_nonlinear=21)
        with pytest.raises(DomainError):
            rls_train(np.zeros(100), np.zeros(100), cfg)

    def test_divergence_detected(self):
        cfg = EqualizerConfig(n_linear=4, n_nonlinear=2, decision_delay=0)
        x = np.full(400, 1e200)
        x[::2] = -1e200
        with pytest.raises(DivergenceError):
            rls_train(x, x, cfg)

    def test_linear_and_volterra_agree_when_w2_zero(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=600)
        w1 = rng.normal(size=9)
        w_lin = VolterraWeights(w1=w1, w2=np.zeros((4, 4)))
        via_volterra = volterra_apply(x, w_lin)
        via_fir = np.convolve(x, w1)[:600]
        np.testing.assert_allclose(via_volterra, via_fir, rtol=1e-12, atol=1e-12)


class TestOfdmDemodulate:
    def _frame(self, cfg, n_sym, seed):
        bits = generate_bits(2 * n_sym * cfg.n_data_subcarriers, seed)
        syms = qam_map(bits, 4).reshape(n_sym, cfg.n_data_subcarriers)
        return syms, ofdm_assemble_frame(syms, cfg)

    def test_noiseless_identity(self):
        cfg = OfdmConfig()
        syms, frame = self._frame(cfg, 6, 1)
        wave = ElectricalWaveform(cfg.modulation_bandwidth, frame)
        rec = ofdm_demodulate(wave, cfg, 0, np.ones(511))
        np.testing.assert_allclose(rec, syms, atol=1e-10)

    def test_scalar_gain_removed(self):
        cfg = OfdmConfig()
        syms, frame = self._frame(cfg, 3, 2)
        wave = ElectricalWaveform(cfg.modulation_bandwidth, 2.0 * frame)
        rec = ofdm_demodulate(wave, cfg, 0, 2.0)
        np.testing.assert_allclose(rec, syms, atol=1e-10)

    def test_lowpass_channel_with_pilot_fde(self):
        import scipy.signal as sps

        cfg = OfdmConfig()
        syms, frame = self._frame(cfg, 12, 3)
        b, a = sps.butter(1, 250e6, fs=cfg.modulation_bandwidth)
        filtered = sps.lfilter(b, a, np.concatenate([frame, np.zeros(64)]))
        wave = ElectricalWaveform(cfg.modulation_bandwidth, filtered)
        raw = ofdm_demodulate(wave, cfg, 0, np.ones(511), n_symbols=12)
        h = estimate_fde(raw[:4], syms[:4])
        rec = raw[4:] / h
        evm = np.sqrt(np.mean(np.abs(rec - syms[4:]) ** 2) / np.mean(np.abs(syms) ** 2))
        assert 20 * np.log10(evm) <= -30

    def test_zero_estimate_rejected(self):
        cfg = OfdmConfig()
        _, frame = self._frame(cfg, 2, 4)
        wave = ElectricalWaveform(cfg.modulation_bandwidth, frame)
        h = np.ones(511, dtype=complex)
        h[100] = 0
        with pytest.raises(FdeSingularityError):
            ofdm_demodulate(wave, cfg, 0, h)

    def test_framing_checks(self):
        cfg = OfdmConfig()
        _, frame = self._frame(cfg, 2, 5)
        wave = ElectricalWaveform(cfg.modulation_bandwidth, frame)
        with pytest.raises(FramingError):
            ofdm_demodulate(wave, cfg, 0, np.ones(511), n_symbols=9)


class TestDecideAndCount:
    def test_exact_pattern(self):
        bits = generate_bits(1000, 6)
        soft = 2.0 * bits - 1
        rep = decide_and_count(soft, bits, OokSlicer(0.0))
        assert rep.ber == 0.0

    def test_inverted_pattern(self):
        bits = generate_bits(1000, 7)
        soft = -(2.0 * bits - 1)
        rep = decide_and_count(soft, bits, OokSlicer(0.0))
        assert rep.ber == 1.0

    def test_bpsk_awgn_calibration(self):
        # Closed-form oracle: BER = Q(sqrt(2 Eb/N0)) at 9.6 dB over 1e7 bits
        rng = np.random.default_rng(8)
        n = 10_000_000
        ebn0 = 10 ** (9.6 / 10)
        bits = rng.integers(0, 2, n)
        soft = (2.0 * bits - 1) + rng.normal(0, np.sqrt(1 / (2 * ebn0)), n)
        rep = decide_and_count(soft, bits, OokSlicer(0.0))
        expected = qfunc(np.sqrt(2 * ebn0))
        sigma = np.sqrt(expected * (1 - expected) / n)
        assert abs(rep.ber - expected) < 4 * sigma

    def test_scaling_invariance_with_trained_slicer(self):
        rng = np.random.default_rng(9)
        train_bits = generate_bits(4000, 10)
        train_soft = (2.0 * train_bits - 1) * 0.8 + 0.3 + rng.normal(0, 0.3, 4000)
        bits = generate_bits(4000, 11)
        soft = (2.0 * bits - 1) * 0.8 + 0.3 + rng.normal(0, 0.3, 4000)
        for c in (1.0, 7.3):
            th = train_slicer(c * train_soft, train_bits)
            rep = decide_and_count(c * soft, bits, OokSlicer(th))
            if c == 1.0:
                base = rep.ber
        assert rep.ber == base

    def test_qam_scheme_uniform(self):
        bits = generate_bits(4000, 12)
        syms = qam_map(bits, 16)
        rep = decide_and_count(syms, bits, QamScheme(order=16))
        assert rep.ber == 0.0

    def test_loaded_plan_roundtrip(self):
        rng = np.random.default_rng(13)
        n_sc = 8
        plan_bits = np.array([0, 1, 2, 4, 6, 0, 2, 8])
        energy = np.where(plan_bits > 0, 1.0, 0.0)
        n_sym = 50
        total = int(plan_bits.sum()) * n_sym
        bits = generate_bits(total, 14)
        matrix = np.zeros((n_sym, n_sc), dtype=complex)
        col = 0
        per_row = bits.reshape(n_sym, int(plan_bits.sum()))
        for k in np.nonzero(plan_bits)[0]:
            b = plan_bits[k]
            matrix[:, k] = qam_map(per_row[:, col : col + b].ravel(), 1 << b)
            col += b
        rep = decide_and_count(matrix, bits, QamScheme(bits=plan_bits, energy=energy))
        assert rep.ber == 0.0

    def test_length_mismatch(self):
        with pytest.raises(FramingError):
            decide_and_count(np.zeros(10), np.zeros(11, dtype=int), OokSlicer(0.0))

    def test_report_invariants(self):
        rep = BerReport(bits_compared=100, bit_errors=3)
        assert rep.ber == 0.03
        with pytest.raises(DomainError):
            BerReport(bits_compared=0, bit_errors=0)


class TestEqualize:
    def test_delay_bookkeeping(self):
        # identity training: equalize(x)[m] recovers x[m] despite the
        # internal decision delay
        rng = np.random.default_rng(14)
        cfg = EqualizerConfig(n_linear=9, n_nonlinear=3, decision_delay=4)
        x = rng.normal(size=3000)
        res = rls_train(x, x, cfg)
        out = equalize(x, res, cfg.decision_delay)
        np.testing.assert_allclose(out[50:2000], x[50:2000], atol=1e-3)
