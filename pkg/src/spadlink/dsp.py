"""Small DSP helpers: pulse shaping and rational-rate resampling."""

from fractions import Fraction

import numpy as np
import scipy.signal

from .errors import DomainError
from .waveforms import ElectricalWaveform


def rrc_taps(samples_per_symbol: int, rolloff: float, span_symbols: int) -> np.ndarray:
    """Root-raised-cosine filter taps with unit energy.

    Length span_symbols * samples_per_symbol + 1, centered. rolloff = 0
    degenerates to a truncated sinc.
    """
    if not 0 <= rolloff <= 1:
        raise DomainError("rolloff must be in [0, 1]")
    sps = int(samples_per_symbol)
    n = span_symbols * sps + 1
    t = (np.arange(n) - (n - 1) / 2) / sps
    a = rolloff
    h = np.empty(n)
    for i, ti in enumerate(t):
        if abs(ti) < 1e-12:
            h[i] = 1.0 + a * (4 / np.pi - 1)
        elif a > 0 and abs(abs(ti) - 1 / (4 * a)) < 1e-9:
            h[i] = (a / np.sqrt(2)) * (
                (1 + 2 / np.pi) * np.sin(np.pi / (4 * a))
                + (1 - 2 / np.pi) * np.cos(np.pi / (4 * a))
            )
        else:
            num = np.sin(np.pi * ti * (1 - a)) + 4 * a * ti * np.cos(np.pi * ti * (1 + a))
            den = np.pi * ti * (1 - (4 * a * ti) ** 2)
            h[i] = num / den
    return h / np.sqrt(np.sum(h * h))


def resample_waveform(wave: ElectricalWaveform, new_rate: float) -> ElectricalWaveform:
    """Band-limited resampling to a rationally related sample rate."""
    if new_rate <= 0:
        raise DomainError("new_rate must be positive")
    if abs(new_rate - wave.sample_rate) / new_rate < 1e-12:
        return wave
    ratio = Fraction(new_rate / wave.sample_rate).limit_denominator(10000)
    if abs(float(ratio) * wave.sample_rate - new_rate) > 1e-6 * new_rate:
        raise DomainError(
            f"sample rates {wave.sample_rate:.6g} -> {new_rate:.6g} are not "
            "rationally related"
        )
    y = scipy.signal.resample_poly(wave.samples, ratio.numerator, ratio.denominator)
    return ElectricalWaveform(sample_rate=new_rate, samples=y)
