"""Independent brute-force and analytic oracles for the core operations.

Each check recomputes an expected result by a route independent of the
implementation it validates (literal double loops, closed forms, batch
solves) and compares. `spadlink oracle` runs the whole suite.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .detector import SpadArrayConfig, mean_detected_rate, simulate_counts
from .loading import SnrProfile, load_bits_energy, required_snr, snr_gap
from .rx import EqualizerConfig, VolterraWeights, build_regressors, rls_train, volterra_apply
from .tx import DriveConfig, OfdmConfig, clip_and_scale, ofdm_assemble
from .waveforms import OpticalWaveform


@dataclass
class OracleCheck:
    name: str
    passed: bool
    detail: str


def qfunc(x):
    return 0.5 * erfc(x / np.sqrt(2.0))


def volterra_reference(x, w1, w2):
    """Literal evaluation of the first- and second-order tap sums."""
    x = np.asarray(x, dtype=np.float64)
    n_l = len(w1)
    n_nl = w2.shape[0]
    out = np.zeros(x.size)
    for n in range(x.size):
        acc = 0.0
        for i in range(n_l):
            if n - i >= 0:
                acc += w1[i] * x[n - i]
        for m1 in range(n_nl):
            if n - m1 < 0:
                continue
            for m2 in range(m1, n_nl):
                if n - m2 >= 0:
                    acc += w2[m1, m2] * x[n - m1] * x[n - m2]
        out[n] = acc
    return out


def check_volterra(n_instances: int = 100, seed: int = 7) -> OracleCheck:
    """Fast Volterra path equals the brute-force double loop to 1e-12."""
    rng = np.random.default_rng(seed)
    shapes = [(2, 2), (8, 4), (41, 21)]
    worst = 0.0
    for k in range(n_instances):
        n_l, n_nl = shapes[k % len(shapes)]
        n = 200 if (n_l, n_nl) == (41, 21) else 400
        x = rng.normal(size=n)
        w1 = rng.normal(size=n_l)
        w2 = np.triu(rng.normal(size=(n_nl, n_nl)))
        w = VolterraWeights(w1=w1, w2=w2)
        fast = volterra_apply(x, w)
        ref = volterra_reference(x, w1, w2)
        scale = max(np.max(np.abs(ref)), 1e-30)
        worst = max(worst, float(np.max(np.abs(fast - ref)) / scale))
    return OracleCheck(
        name="volterra-vs-brute-force",
        passed=worst <= 1e-12,
        detail=f"worst relative deviation {worst:.3e} over {n_instances} instances",
    )


def check_rls_batch(seed: int = 11) -> OracleCheck:
    """RLS at forgetting 1 matches the ridge-regularized batch solution."""
    rng = np.random.default_rng(seed)
    cfg = EqualizerConfig(n_linear=6, n_nonlinear=3, rls_forgetting=1.0,
                          rls_delta=1e-6, decision_delay=2, mode="volterra")
    x = rng.normal(size=600)
    w_true = rng.normal(size=cfg.n_taps)
    u = build_regressors(x, cfg)
    d_full = u @ w_true
    reference = np.zeros_like(x)
    reference[: x.size - cfg.decision_delay] = d_full[cfg.decision_delay :]
    result = rls_train(x, reference, cfg)
    rows = u[cfg.decision_delay :]
    targets = d_full[cfg.decision_delay :]
    gram = rows.T @ rows + cfg.rls_delta * np.eye(cfg.n_taps)
    w_batch = np.linalg.solve(gram, rows.T @ targets)
    w_rls = np.concatenate(
        [result.weights.w1, result.weights.w2[np.triu_indices(cfg.n_nonlinear)]]
    )
    rel = np.linalg.norm(w_rls - w_batch) / np.linalg.norm(w_batch)
    return OracleCheck(
        name="rls-vs-batch-least-squares",
        passed=rel <= 1e-6,
        detail=f"weight deviation {rel:.3e}",
    )


def check_detected_rate_law(seed: int = 3) -> OracleCheck:
    """Short Monte Carlo agrees with the closed-form detected rate."""
    cfg = SpadArrayConfig()
    worst = 0.0
    for i, p_r in enumerate([5e-8, 1e-6, 2e-5]):
        rate = p_r * cfg.pde / cfg.photon_energy
        fs = max(rate / (0.05 * cfg.n_microcells), 20 / cfg.dead_time)
        n = int(round(2e-4 * fs))
        wave = OpticalWaveform(sample_rate=fs, samples=np.full(n, p_r))
        counts = simulate_counts(wave, cfg, seed + i)
        expected = mean_detected_rate(p_r, cfg)
        worst = max(worst, abs(counts.mean_rate() - expected) / expected)
    return OracleCheck(
        name="dead-time-monte-carlo-vs-closed-form",
        passed=worst <= 0.02,
        detail=f"worst relative error {worst:.4f} over 3 powers (0.2 ms each)",
    )


def check_parseval(seed: int = 5) -> OracleCheck:
    """OFDM block energy matches subcarrier energy under the IFFT scaling."""
    rng = np.random.default_rng(seed)
    cfg = OfdmConfig(cp_length=0)
    syms = rng.normal(size=cfg.n_data_subcarriers) + 1j * rng.normal(size=cfg.n_data_subcarriers)
    block = ofdm_assemble(syms, cfg)
    freq_energy = 2 * np.sum(np.abs(syms) ** 2)  # data bins plus mirror images
    time_energy = np.sum(block**2) * cfg.fft_size
    rel = abs(time_energy - freq_energy) / freq_energy
    return OracleCheck(
        name="ofdm-parseval",
        passed=rel <= 1e-10,
        detail=f"energy mismatch {rel:.3e}",
    )


def check_clip_fraction(seed: int = 9) -> OracleCheck:
    """Clipped fraction of a Gaussian matches the normal tail 2Q(eps)."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=1_000_000)
    drive = DriveConfig()
    result = clip_and_scale(x, 3.0, drive, sample_rate=1e9)
    expected = 2 * qfunc(3.0)
    sigma = np.sqrt(expected * (1 - expected) / x.size)
    dev = abs(result.clipped_fraction - expected)
    return OracleCheck(
        name="clip-fraction-vs-gaussian-tail",
        passed=dev <= 4 * sigma,
        detail=f"fraction {result.clipped_fraction:.5f} vs {expected:.5f} (4-sigma {4*sigma:.2e})",
    )


def check_gap_consistency(seed: int = 13) -> OracleCheck:
    """Every plan satisfies the gap inequality and conserves mean energy."""
    rng = np.random.default_rng(seed)
    cfg = OfdmConfig()
    gap = snr_gap(2e-3)
    ok = True
    detail = "gap inequality and energy conservation hold on 20 random profiles"
    for _ in range(20):
        snr = 10 ** (rng.uniform(-1.0, 3.5, size=cfg.n_data_subcarriers))
        plan = load_bits_energy(SnrProfile(snr=snr), 2e-3, cfg)
        active = plan.bits > 0
        if np.any(active):
            lhs = snr[active] * plan.energy[active]
            rhs = gap * (2.0 ** plan.bits[active] - 1)
            if np.any(lhs < rhs - 1e-9):
                ok, detail = False, "gap inequality violated"
                break
            mean_e = plan.energy[active].mean()
            if abs(mean_e - 1.0) > 1e-9:
                ok, detail = False, f"mean active energy {mean_e} != 1"
                break
    return OracleCheck(name="loading-gap-consistency", passed=ok, detail=detail)


def check_required_snr_floor() -> OracleCheck:
    """Per-order SNR floors dominate the plain gap rule where it is optimistic."""
    t = 2e-3
    gap = snr_gap(t)
    ok = all(required_snr(b, t) >= gap * (2.0**b - 1) - 1e-12 for b in (1, 2, 4, 6, 8, 10))
    bpsk = required_snr(1, t)
    expected_bpsk = 0.5 * (np.sqrt(2) * _erfcinv(2 * t)) ** 2
    return OracleCheck(
        name="required-snr-floors",
        passed=ok and abs(bpsk - expected_bpsk) / expected_bpsk < 1e-9,
        detail=f"BPSK floor {bpsk:.3f} (gap alone would give {gap:.3f})",
    )


def _erfcinv(y):
    from scipy.special import erfcinv

    return erfcinv(y)


ALL_CHECKS = (
    check_volterra,
    check_rls_batch,
    check_detected_rate_law,
    check_parseval,
    check_clip_fraction,
    check_gap_consistency,
    check_required_snr_floor,
)


def run_all() -> list:
    return [check() for check in ALL_CHECKS]
