"""SPAD/SiPM array model: saturation laws, dead-time Monte Carlo, front end.

The array is a bank of identical microcells with non-paralyzable dead time.
Closed-form expressions give the mean detected rate and the bias current;
`simulate_counts` runs a photon-level Monte Carlo that reproduces those laws
and, crucially, the dead-time memory and sub-Poissonian counting statistics
that the closed forms cannot capture.
"""

import math
from dataclasses import dataclass

import numba
import numpy as np
import scipy.constants as const
import scipy.signal

from .errors import ConfigError, DomainError
from .waveforms import CountSignal, ElectricalWaveform, OpticalWaveform

# Expected array-wide arrivals per bin must stay below this fraction of the
# microcell count so that within-bin collisions stay negligible.
MAX_BIN_OCCUPANCY = 0.1


@dataclass
class SpadArrayConfig:
    """Physical constants of the detector array."""

    n_microcells: int = 14410
    dead_time: float = 66e-9
    pde: float = 0.36
    recharge_charge: float = 0.14e-12
    wavelength: float = 405e-9
    f3db: float = 250e6
    dark_count_rate: float = 0.0
    fill_factor: float = 0.62  # informational only

    def __post_init__(self):
        if self.n_microcells < 1:
            raise DomainError("n_microcells must be >= 1")
        if self.dead_time < 0:
            raise DomainError("dead_time must be nonnegative")
        if not 0 < self.pde <= 1:
            raise DomainError("pde must be in (0, 1]")
        if self.recharge_charge <= 0:
            raise DomainError("recharge_charge must be positive")
        if self.wavelength <= 0:
            raise DomainError("wavelength must be positive")
        if self.f3db <= 0:
            raise DomainError("f3db must be positive")
        if self.dark_count_rate < 0:
            raise DomainError("dark_count_rate must be nonnegative")

    @property
    def photon_energy(self) -> float:
        """Energy of one photon at the configured wavelength, joules."""
        return const.h * const.c / self.wavelength


@dataclass
class FrontEndConfig:
    """Analog front end: count-to-voltage gain, low-pass response, noise.

    The filter is a single first-order low-pass with unity DC gain; only its
    3-dB point is a measured property of the receiver. `awgn_sigma` is the
    rms of the Gaussian noise added after the filter, per output sample.
    """

    f3db: float = 250e6
    awgn_sigma: float = 0.0
    gain: float = 1.0  # volts per detected count

    def __post_init__(self):
        if self.f3db <= 0:
            raise DomainError("f3db must be positive")
        if self.awgn_sigma < 0:
            raise DomainError("awgn_sigma must be nonnegative")
        if self.gain <= 0:
            raise DomainError("gain must be positive")


def mean_detected_rate(p_r, cfg: SpadArrayConfig):
    """Mean detected avalanche rate (counts/s) at received power `p_r` watts.

    C = P * pde / (E_photon + P * pde * T_d / N). Strictly increasing in
    power and bounded above by the saturation limit N / T_d.
    """
    p = np.asarray(p_r, dtype=np.float64)
    if np.any(p < 0):
        raise DomainError("received power must be nonnegative")
    num = p * cfg.pde
    den = cfg.photon_energy + p * cfg.pde * cfg.dead_time / cfg.n_microcells
    rate = num / den
    return float(rate) if np.isscalar(p_r) else rate


def saturation_limit(cfg: SpadArrayConfig) -> float:
    """Detected-rate ceiling N / T_d in counts/s (infinite for zero dead time)."""
    if cfg.dead_time == 0:
        return math.inf
    return cfg.n_microcells / cfg.dead_time


def bias_current(p_r, cfg: SpadArrayConfig):
    """Recharge current (amperes) needed to sustain the detected rate."""
    rate = mean_detected_rate(p_r, cfg)
    return cfg.recharge_charge * rate


@numba.njit(cache=True)
def _dead_time_kernel(lam, n_cells, dead_bins, seed):  # pragma: no cover
    """Sequential per-bin Monte Carlo of the microcell bank.

    lam[i] is the expected array-wide photon+dark arrival count in bin i.
    Arrivals land on uniformly random microcells; a registration puts its
    cell into a recovery queue for `dead_bins` bins (non-paralyzable).
    Registered counts per bin equal the number of *distinct live* cells hit,
    sampled as Binomial(live, 1 - (1 - 1/N)^arrivals); a guarded normal
    approximation replaces the exact binomial when its variance is large,
    because exact sampling is O(n*p).
    """
    np.random.seed(seed)
    n = lam.size
    counts = np.zeros(n, dtype=np.int64)
    if dead_bins <= 0:
        for i in range(n):
            counts[i] = np.random.poisson(lam[i])
        return counts

    ring = np.zeros(dead_bins, dtype=np.int64)
    live = n_cells
    for i in range(n):
        slot = i % dead_bins
        live += ring[slot]
        ring[slot] = 0
        if lam[i] <= 0.0:
            continue
        arrivals = np.random.poisson(lam[i])
        if arrivals == 0 or live == 0:
            continue
        # Registrations are a thinning of these same arrivals: hits on live
        # cells are Binomial(arrivals, live/N), minus the few arrivals that
        # share a live cell within the bin (approximately Poisson with mean
        # h(h-1)/(2*live)). Sampling Binomial(live, p_hit) instead would
        # nearly double the count variance at low occupancy.
        q = live / n_cells
        mu = arrivals * q
        var = mu * (1.0 - q)
        if var > 100.0:  # exact binomial sampling is O(n*p); normal is fine here
            hits = int(round(mu + math.sqrt(var) * np.random.standard_normal()))
            if hits < 0:
                hits = 0
            elif hits > arrivals:
                hits = arrivals
        else:
            hits = np.random.binomial(arrivals, q)
        reg = hits
        if hits > 1:
            collisions = np.random.poisson(hits * (hits - 1) / (2.0 * live))
            if collisions > hits - 1:
                collisions = hits - 1
            reg = hits - collisions
        if reg > live:
            reg = live
        counts[i] = reg
        live -= reg
        ring[slot] = reg
    return counts


def minimum_sample_rate(peak_power: float, cfg: SpadArrayConfig) -> float:
    """Smallest sample rate satisfying the bin-occupancy precondition."""
    peak_rate = peak_power * cfg.pde / cfg.photon_energy + cfg.dark_count_rate
    if peak_rate <= 0:
        return 0.0
    return peak_rate / (MAX_BIN_OCCUPANCY * cfg.n_microcells)


def simulate_counts(wave: OpticalWaveform, cfg: SpadArrayConfig, seed: int) -> CountSignal:
    """Monte Carlo detection of an optical waveform by the microcell bank.

    Per bin of width 1/sample_rate, arrivals are Poisson with rate
    P(t) * pde / E_photon + dark_count_rate; each arrival is assigned to a
    uniformly random microcell and registers only if that cell is not within
    one dead time of its previous registration. Deterministic given `seed`.
    """
    dt = 1.0 / wave.sample_rate
    arrival_rate = wave.samples * (cfg.pde / cfg.photon_energy) + cfg.dark_count_rate
    lam = arrival_rate * dt
    peak = float(lam.max()) if lam.size else 0.0
    if peak > MAX_BIN_OCCUPANCY * cfg.n_microcells:
        min_fs = minimum_sample_rate(float(wave.samples.max()), cfg)
        raise ConfigError(
            "expected arrivals per bin exceed n_microcells/10; "
            f"increase the sample rate to at least {min_fs:.4g} Hz"
        )
    if cfg.dead_time == 0:
        dead_bins = 0
    else:
        # Registrations happen mid-bin on average while recoveries land at
        # bin starts; the extra half bin centers the realized dead time.
        dead_bins = max(1, int(round(cfg.dead_time / dt + 0.5)))
    seed32 = int(np.random.SeedSequence(seed).generate_state(1)[0])
    counts = _dead_time_kernel(lam, cfg.n_microcells, dead_bins, seed32)
    return CountSignal(bin_width=dt, counts=counts)


def front_end(counts: CountSignal, fe: FrontEndConfig, seed: int) -> ElectricalWaveform:
    """Convert counts to voltage: gain, first-order low-pass, additive noise.

    The low-pass is a bilinear-transform first-order section prewarped so the
    discrete magnitude response is exactly -3 dB at `f3db`; DC gain is unity.
    Gaussian noise of std `awgn_sigma` is added after the filter.
    Deterministic given `seed`.
    """
    fs = 1.0 / counts.bin_width
    if fe.f3db >= fs / 2:
        raise ConfigError(
            f"front-end f3db {fe.f3db:.4g} Hz needs a sample rate above "
            f"{2 * fe.f3db:.4g} Hz (got {fs:.4g} Hz)"
        )
    x = counts.counts.astype(np.float64) * fe.gain
    b, a = scipy.signal.butter(1, fe.f3db, btype="low", fs=fs)
    y = scipy.signal.lfilter(b, a, x)
    if fe.awgn_sigma > 0:
        rng = np.random.default_rng(seed)
        y = y + rng.normal(0.0, fe.awgn_sigma, y.size)
    return ElectricalWaveform(sample_rate=fs, samples=y)
