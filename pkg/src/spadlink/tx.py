"""Transmit-side waveform synthesis for OOK and DC-biased optical OFDM."""

from dataclasses import dataclass, field

import numpy as np

from . import qam
from .dsp import rrc_taps
from .errors import DegenerateSignalError, DomainError, FramingError
from .waveforms import ElectricalWaveform, OpticalWaveform


@dataclass
class OokConfig:
    """On-off keying: 1 bit/symbol, RRC pulse shaping."""

    symbol_rate: float
    rrc_rolloff: float = 0.1
    samples_per_symbol: int = 4
    rrc_span_symbols: int = 16

    def __post_init__(self):
        if self.symbol_rate <= 0:
            raise DomainError("symbol_rate must be positive")
        if not 0 <= self.rrc_rolloff <= 1:
            raise DomainError("rrc_rolloff must be in [0, 1]")
        if self.samples_per_symbol < 2:
            raise DomainError("samples_per_symbol must be >= 2")
        if self.rrc_span_symbols < 2:
            raise DomainError("rrc_span_symbols must be >= 2")

    @property
    def sample_rate(self) -> float:
        return self.symbol_rate * self.samples_per_symbol

    @property
    def bit_rate(self) -> float:
        return self.symbol_rate


@dataclass
class OfdmConfig:
    """Hermitian-symmetric OFDM: real time signal, data on bins 1..n_data."""

    fft_size: int = 1024
    n_data_subcarriers: int = 511
    cp_length: int = 16
    modulation_bandwidth: float = 1.4e9
    clip_level: float = 3.0

    def __post_init__(self):
        if self.fft_size < 4 or self.fft_size & (self.fft_size - 1):
            raise DomainError("fft_size must be a power of two >= 4")
        if not 1 <= self.n_data_subcarriers <= self.fft_size // 2 - 1:
            raise DomainError("n_data_subcarriers must be <= fft_size/2 - 1")
        if not 0 <= self.cp_length < self.fft_size:
            raise DomainError("cp_length must be < fft_size")
        if self.modulation_bandwidth <= 0:
            raise DomainError("modulation_bandwidth must be positive")
        if self.clip_level <= 0:
            raise DomainError("clip_level must be positive")

    @property
    def symbol_length(self) -> int:
        return self.fft_size + self.cp_length

    @property
    def subcarrier_symbol_rate(self) -> float:
        return self.modulation_bandwidth / self.fft_size


@dataclass
class DriveConfig:
    """Electrical drive and affine electro-optic conversion of the laser."""

    vpp: float = 0.8
    laser_bias: float = 4.55
    eo_slope: float = 1e-3  # watts per volt
    eo_threshold: float = 4.13

    def __post_init__(self):
        if self.vpp <= 0:
            raise DomainError("vpp must be positive")
        if self.eo_slope <= 0:
            raise DomainError("eo_slope must be positive")
        if self.laser_bias - self.vpp / 2 < self.eo_threshold:
            raise DomainError(
                "laser must stay in its linear range: bias - vpp/2 >= threshold"
            )


@dataclass
class ClippedDrive:
    """Clipped, Vpp-scaled drive signal plus bookkeeping from clip_and_scale."""

    waveform: ElectricalWaveform
    clipped_fraction: float
    normalized: np.ndarray = field(repr=False)  # unit-variance clipped signal


def generate_bits(n: int, seed: int) -> np.ndarray:
    """n independent equiprobable bits, deterministic given seed."""
    if n < 0:
        raise DomainError("bit count must be nonnegative")
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, size=int(n), dtype=np.int64)


def ook_modulate(bits, cfg: OokConfig) -> ElectricalWaveform:
    """Bipolar +/-1 impulse train shaped by a unit-energy RRC filter."""
    bits = np.asarray(bits, dtype=np.int64).ravel()
    if bits.size == 0:
        raise FramingError("ook_modulate needs a nonempty bit sequence")
    levels = 2.0 * bits - 1.0
    sps = cfg.samples_per_symbol
    up = np.zeros(bits.size * sps)
    up[::sps] = levels
    taps = rrc_taps(sps, cfg.rrc_rolloff, cfg.rrc_span_symbols)
    shaped = np.convolve(up, taps)
    return ElectricalWaveform(sample_rate=cfg.sample_rate, samples=shaped)


qam_map = qam.qam_map


def ofdm_assemble(symbols, cfg: OfdmConfig) -> np.ndarray:
    """One real OFDM block with cyclic prefix from n_data_subcarriers symbols.

    Symbols occupy bins 1..n_data, conjugate images the mirror bins; DC and
    Nyquist are nulled so the inverse transform is real (the imaginary
    residue is checked against 1e-12 of the signal rms and discarded).
    """
    symbols = np.asarray(symbols, dtype=np.complex128).ravel()
    n = cfg.n_data_subcarriers
    if symbols.size != n:
        raise FramingError(f"expected {n} subcarrier symbols, got {symbols.size}")
    spec = np.zeros(cfg.fft_size, dtype=np.complex128)
    spec[1 : n + 1] = symbols
    spec[cfg.fft_size - n :] = np.conj(symbols[::-1])
    block = np.fft.ifft(spec)
    rms = np.sqrt(np.mean(block.real**2))
    if rms > 0 and np.max(np.abs(block.imag)) > 1e-12 * rms:
        raise FramingError("inverse transform produced a non-real block")
    real_block = block.real
    return np.concatenate([real_block[-cfg.cp_length :], real_block]) if cfg.cp_length else real_block


def ofdm_assemble_frame(symbol_matrix, cfg: OfdmConfig) -> np.ndarray:
    """Concatenate blocks for a (n_symbols, n_data_subcarriers) matrix."""
    symbol_matrix = np.asarray(symbol_matrix, dtype=np.complex128)
    if symbol_matrix.ndim != 2:
        raise FramingError("symbol matrix must be two-dimensional")
    return np.concatenate([ofdm_assemble(row, cfg) for row in symbol_matrix])


def clip_and_scale(
    blocks, clip_level: float, drive: DriveConfig, sample_rate: float
) -> ClippedDrive:
    """Normalize to zero mean/unit variance, clip at +/-clip_level, scale to Vpp.

    The post-scale signal never exceeds vpp/2 in magnitude. The returned
    `normalized` array is the unit-variance clipped signal before Vpp
    scaling; it serves as the equalizer training reference.
    """
    if clip_level <= 0:
        raise DomainError("clip_level must be positive")
    x = np.asarray(blocks, dtype=np.float64).ravel()
    std = x.std()
    if std == 0:
        raise DegenerateSignalError("cannot clip a zero-variance signal")
    z = (x - x.mean()) / std
    clipped_fraction = float(np.mean(np.abs(z) > clip_level))
    z = np.clip(z, -clip_level, clip_level)
    scaled = z * (drive.vpp / (2 * clip_level))
    wave = ElectricalWaveform(sample_rate=sample_rate, samples=scaled)
    return ClippedDrive(waveform=wave, clipped_fraction=clipped_fraction, normalized=z)


def electro_optic(
    drive_wave: ElectricalWaveform,
    drive: DriveConfig,
    attenuation: float = 1.0,
    target_rx_power: float | None = None,
) -> OpticalWaveform:
    """Affine laser map P(t) = slope * (bias + v(t) - threshold), attenuated.

    With `target_rx_power` set, the output is rescaled so its time average
    equals the target exactly (emulating the variable optical attenuator).
    """
    if not 0 < attenuation <= 1:
        raise DomainError("attenuation must be in (0, 1]")
    v = drive.laser_bias + drive_wave.samples
    if v.size and v.min() < drive.eo_threshold - 1e-12:
        raise DomainError(
            "drive signal falls below the laser threshold (clipping at zero); "
            "reduce the AC swing or raise the bias"
        )
    p = drive.eo_slope * (v - drive.eo_threshold) * attenuation
    if target_rx_power is not None:
        if target_rx_power < 0:
            raise DomainError("target_rx_power must be nonnegative")
        mean = p.mean() if p.size else 0.0
        if mean <= 0:
            raise DegenerateSignalError("cannot rescale a zero-power waveform")
        p = p * (target_rx_power / mean)
    return OpticalWaveform(sample_rate=drive_wave.sample_rate, samples=p)
