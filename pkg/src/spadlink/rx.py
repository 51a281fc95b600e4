"""Receiver DSP: timing, matched filtering, Volterra/RLS equalization,
OFDM demodulation with single-tap FDE, decisions and BER accounting."""

from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from . import qam
from .dsp import rrc_taps
from .errors import (
    DivergenceError,
    DomainError,
    FdeSingularityError,
    FramingError,
    SyncError,
)
from .tx import OfdmConfig, OokConfig
from .waveforms import ElectricalWaveform


@dataclass
class VolterraWeights:
    """First-order tap vector and upper-triangular second-order tap matrix."""

    w1: np.ndarray
    w2: np.ndarray

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64).ravel()
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        if self.w2.ndim != 2 or self.w2.shape[0] != self.w2.shape[1]:
            raise DomainError("w2 must be a square matrix")
        if not (np.all(np.isfinite(self.w1)) and np.all(np.isfinite(self.w2))):
            raise DomainError("tap weights must be finite")
        if np.any(np.tril(self.w2, k=-1) != 0):
            raise DomainError("w2 must be upper-triangular")

    @property
    def n_linear(self) -> int:
        return self.w1.size

    @property
    def n_nonlinear(self) -> int:
        return self.w2.shape[0]


@dataclass
class EqualizerConfig:
    """Tap counts and RLS hyperparameters for the adaptive equalizer."""

    n_linear: int = 41
    n_nonlinear: int = 21
    rls_forgetting: float = 0.999
    rls_delta: float = 0.01
    decision_delay: int | None = None
    mode: str = "volterra"  # 'linear' or 'volterra'

    def __post_init__(self):
        if self.n_linear < 1:
            raise DomainError("n_linear must be >= 1")
        if not 0 <= self.n_nonlinear <= self.n_linear:
            raise DomainError("n_nonlinear must satisfy 0 <= n_nonlinear <= n_linear")
        if not 0 < self.rls_forgetting <= 1:
            raise DomainError("rls_forgetting must be in (0, 1]")
        if self.rls_delta <= 0:
            raise DomainError("rls_delta must be positive")
        if self.mode not in ("linear", "volterra"):
            raise DomainError("mode must be 'linear' or 'volterra'")
        if self.decision_delay is None:
            self.decision_delay = (self.n_linear - 1) // 2
        if not 0 <= self.decision_delay < self.n_linear:
            raise DomainError("decision_delay must be in [0, n_linear)")

    @property
    def n_taps(self) -> int:
        """Total trained coefficient count (linear plus upper-triangle products)."""
        n2 = self.n_nonlinear * (self.n_nonlinear + 1) // 2 if self.mode == "volterra" else 0
        return self.n_linear + n2


@dataclass
class BerReport:
    bits_compared: int
    bit_errors: int
    ber: float = field(init=False)

    def __post_init__(self):
        if self.bits_compared < 1:
            raise DomainError("bits_compared must be >= 1")
        if not 0 <= self.bit_errors <= self.bits_compared:
            raise DomainError("bit_errors out of range")
        self.ber = self.bit_errors / self.bits_compared

    def stderr(self) -> float:
        """Binomial standard error of the BER estimate."""
        p = max(self.ber, 1.0 / self.bits_compared)
        return float(np.sqrt(p * (1 - p) / self.bits_compared))


def merge_reports(reports) -> BerReport:
    bits = sum(r.bits_compared for r in reports)
    errs = sum(r.bit_errors for r in reports)
    return BerReport(bits_compared=bits, bit_errors=errs)


@dataclass
class RlsResult:
    weights: VolterraWeights
    mse_trace: np.ndarray = field(repr=False)

    def final_mse(self, window: int = 500) -> float:
        tail = self.mse_trace[-window:]
        return float(tail.mean()) if tail.size else float("nan")


def synchronize(rx: ElectricalWaveform, preamble) -> int:
    """Lag of the peak normalized cross-correlation with the known preamble.

    Ties break toward the smallest lag; a peak below 0.5 raises SyncError.
    """
    r = rx.samples
    p = np.asarray(preamble, dtype=np.float64).ravel()
    if p.size == 0 or r.size <= p.size:
        raise FramingError("received waveform must be longer than the preamble")
    num = scipy.signal.fftconvolve(r, p[::-1], mode="valid")
    csum = np.concatenate([[0.0], np.cumsum(r * r)])
    window_energy = csum[p.size :] - csum[: -p.size]
    denom = np.sqrt(np.maximum(window_energy, 0.0)) * np.linalg.norm(p)
    corr = num / np.maximum(denom, 1e-300)
    peak_idx = int(np.argmax(corr))
    if corr[peak_idx] < 0.5:
        raise SyncError(
            f"preamble correlation peak {corr[peak_idx]:.3f} below 0.5"
        )
    return peak_idx


def matched_filter_downsample(rx: ElectricalWaveform, cfg: OokConfig, offset: int):
    """RRC matched filter followed by symbol-instant sampling.

    `offset` is the sample index (from synchronize) where the transmitted
    waveform starts; symbol k then sits at offset + filter_delay + k*sps in
    the full-convolution output.
    """
    if offset < 0:
        raise FramingError("offset must be nonnegative")
    sps = cfg.samples_per_symbol
    taps = rrc_taps(sps, cfg.rrc_rolloff, cfg.rrc_span_symbols)
    mf = scipy.signal.fftconvolve(rx.samples, taps[::-1], mode="full")
    start = offset + taps.size - 1
    if start >= mf.size:
        raise FramingError("no samples left after the synchronization offset")
    idx = np.arange(start, mf.size, sps)
    if idx.size == 0:
        raise FramingError("no symbol instants fit in the received waveform")
    return mf[idx]


def _shifted_matrix(x: np.ndarray, depth: int) -> np.ndarray:
    """rows m = x delayed by m samples, zero-padded at the start."""
    n = x.size
    out = np.zeros((depth, n))
    for m in range(depth):
        out[m, m:] = x[: n - m]
    return out


def volterra_apply(x, w: VolterraWeights) -> np.ndarray:
    """Second-order Volterra filter output.

    d(n) = sum_i w1(i) x(n-i)
         + sum_{m1<=m2} w2(m1,m2) x(n-m1) x(n-m2),  with x(k<0) = 0.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    n = x.size
    out = np.convolve(x, w.w1)[:n]
    if w.n_nonlinear and np.any(w.w2):
        shifted = _shifted_matrix(x, w.n_nonlinear)
        inner = w.w2 @ shifted
        out = out + np.einsum("mn,mn->n", shifted, inner)
    return out


def build_regressors(x, cfg: EqualizerConfig) -> np.ndarray:
    """Stacked regressor rows: linear delays plus m1<=m2 products."""
    x = np.asarray(x, dtype=np.float64).ravel()
    shifted = _shifted_matrix(x, cfg.n_linear)
    cols = [shifted.T]
    if cfg.mode == "volterra" and cfg.n_nonlinear:
        m1, m2 = np.triu_indices(cfg.n_nonlinear)
        cols.append(shifted[m1].T * shifted[m2].T)
    return np.concatenate(cols, axis=1)


def _weights_from_vector(w: np.ndarray, cfg: EqualizerConfig) -> VolterraWeights:
    w1 = w[: cfg.n_linear]
    n2 = cfg.n_nonlinear if cfg.mode == "volterra" else 0
    w2 = np.zeros((cfg.n_nonlinear, cfg.n_nonlinear))
    if n2:
        m1, m2 = np.triu_indices(n2)
        w2[m1, m2] = w[cfg.n_linear :]
    return VolterraWeights(w1=w1, w2=w2)


def rls_train(x, reference, cfg: EqualizerConfig) -> RlsResult:
    """Exponentially weighted RLS over the Volterra regressor.

    Trains weights so that volterra_apply(x, w)[n] estimates
    reference[n - decision_delay]. The inverse correlation matrix starts at
    I/rls_delta; with rls_forgetting = 1 the result matches ridge-regularized
    batch least squares on the same regressors.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    reference = np.asarray(reference, dtype=np.float64).ravel()
    if reference.size != x.size:
        raise FramingError("reference must be aligned sample-for-sample with x")
    if x.size < 10 * cfg.n_taps:
        raise DomainError(
            f"training needs at least 10x the tap count "
            f"({10 * cfg.n_taps} samples, got {x.size})"
        )
    u_rows = build_regressors(x, cfg)
    delay = cfg.decision_delay
    lam = cfg.rls_forgetting
    dim = cfg.n_taps
    w = np.zeros(dim)
    p_mat = np.eye(dim) / cfg.rls_delta
    n_steps = x.size - delay
    mse = np.empty(n_steps)
    for step in range(n_steps):
        n = step + delay
        u = u_rows[n]
        d = reference[n - delay]
        pu = p_mat @ u
        denom = lam + u @ pu
        k = pu / denom
        err = d - w @ u
        if not np.isfinite(err):
            raise DivergenceError("RLS update produced a non-finite error")
        w = w + k * err
        p_mat = (p_mat - np.outer(k, pu)) / lam
        p_mat = 0.5 * (p_mat + p_mat.T)
        mse[step] = err * err
    if not np.all(np.isfinite(w)):
        raise DivergenceError("RLS weights diverged")
    return RlsResult(weights=_weights_from_vector(w, cfg), mse_trace=mse)


def equalize(x, result_or_weights, delay: int) -> np.ndarray:
    """Apply trained weights and undo the decision delay.

    Returns estimates aligned with the input timeline: out[n] estimates the
    reference at time n. The final `delay` samples lack future context and
    are dropped.
    """
    w = result_or_weights.weights if isinstance(result_or_weights, RlsResult) else result_or_weights
    d = volterra_apply(x, w)
    return d[delay:]


def estimate_fde(raw_pilot_symbols, tx_pilot_symbols) -> np.ndarray:
    """Least-squares per-subcarrier channel gains averaged over pilot blocks."""
    y = np.asarray(raw_pilot_symbols, dtype=np.complex128)
    x = np.asarray(tx_pilot_symbols, dtype=np.complex128)
    if y.shape != x.shape or y.ndim != 2:
        raise FramingError("pilot matrices must share a (n_blocks, n_subcarriers) shape")
    num = np.sum(y * np.conj(x), axis=0)
    den = np.sum(np.abs(x) ** 2, axis=0)
    if np.any(den == 0):
        raise FramingError("pilot symbols must be nonzero on every subcarrier")
    return num / den


def ofdm_demodulate(
    rx: ElectricalWaveform,
    cfg: OfdmConfig,
    offset: int,
    channel_estimate,
    n_symbols: int | None = None,
) -> np.ndarray:
    """Strip CP, forward-transform, divide by the per-bin channel estimate.

    Returns a (n_symbols, n_data_subcarriers) complex matrix. A scalar
    channel estimate is broadcast to all active bins.
    """
    x = rx.samples
    if offset < 0 or offset >= x.size:
        raise FramingError("offset outside the received waveform")
    sym_len = cfg.symbol_length
    avail = (x.size - offset) // sym_len
    if n_symbols is None:
        n_symbols = avail
    if n_symbols < 1 or n_symbols > avail:
        raise FramingError(
            f"requested {n_symbols} OFDM symbols but only {avail} fit"
        )
    h = np.asarray(channel_estimate, dtype=np.complex128)
    if h.ndim == 0:
        h = np.full(cfg.n_data_subcarriers, complex(h))
    if h.size != cfg.n_data_subcarriers:
        raise FramingError("channel estimate length must match n_data_subcarriers")
    if np.any(h == 0):
        raise FdeSingularityError("zero channel estimate on an active subcarrier")
    segs = x[offset : offset + n_symbols * sym_len].reshape(n_symbols, sym_len)
    spectra = np.fft.fft(segs[:, cfg.cp_length :], axis=1)
    return spectra[:, 1 : cfg.n_data_subcarriers + 1] / h


@dataclass
class OokSlicer:
    """Threshold decision for equalized OOK samples."""

    threshold: float = 0.0


@dataclass
class QamScheme:
    """Per-subcarrier minimum-distance demap, uniform order or a loading plan."""

    order: int | None = None
    bits: np.ndarray | None = None  # per-subcarrier bit counts
    energy: np.ndarray | None = None  # per-subcarrier energy scales


def train_slicer(equalized_training, training_bits) -> float:
    """Midpoint of the class-conditional means of the equalized training output."""
    y = np.asarray(equalized_training, dtype=np.float64).ravel()
    b = np.asarray(training_bits, dtype=np.int64).ravel()
    if y.size != b.size:
        raise FramingError("training output and bits must have equal length")
    ones = y[b == 1]
    zeros = y[b == 0]
    if ones.size == 0 or zeros.size == 0:
        raise DomainError("training bits must contain both classes")
    return float((ones.mean() + zeros.mean()) / 2)


def decide_and_count(soft, truth_bits, scheme) -> BerReport:
    """Hard decisions against the truth bits, returning a BerReport."""
    truth = np.asarray(truth_bits, dtype=np.int64).ravel()
    if isinstance(scheme, OokSlicer):
        samples = np.asarray(soft, dtype=np.float64).ravel()
        if samples.size != truth.size:
            raise FramingError("soft sample count must equal truth bit count")
        decided = (samples > scheme.threshold).astype(np.int64)
    elif isinstance(scheme, QamScheme):
        symbols = np.asarray(soft, dtype=np.complex128)
        if scheme.order is not None:
            decided = qam.qam_demap(symbols.ravel(), scheme.order)
        else:
            if symbols.ndim != 2:
                raise FramingError("loaded QAM decisions need a (n_symbols, n_sc) matrix")
            bits_k = np.asarray(scheme.bits, dtype=np.int64)
            energy_k = np.asarray(scheme.energy, dtype=np.float64)
            if bits_k.size != symbols.shape[1]:
                raise FramingError("loading plan length must match subcarrier count")
            chunks = []
            for k in np.nonzero(bits_k)[0]:
                y = symbols[:, k] / np.sqrt(energy_k[k])
                chunks.append(qam.qam_demap(y, 1 << bits_k[k]).reshape(symbols.shape[0], -1))
            if not chunks:
                raise FramingError("loading plan carries no bits")
            decided = np.full((symbols.shape[0], int(bits_k.sum())), 0, dtype=np.int64)
            col = 0
            order_cols = []
            for k in np.nonzero(bits_k)[0]:
                order_cols.append((col, col + bits_k[k], k))
                col += bits_k[k]
            for (c0, c1, k), chunk in zip(order_cols, chunks):
                decided[:, c0:c1] = chunk
            decided = decided.ravel()
        if decided.size != truth.size:
            raise FramingError(
                f"decided {decided.size} bits but truth has {truth.size}"
            )
    else:
        raise DomainError(f"unknown decision scheme {scheme!r}")
    errors = int(np.count_nonzero(decided != truth))
    return BerReport(bits_compared=truth.size, bit_errors=errors)
