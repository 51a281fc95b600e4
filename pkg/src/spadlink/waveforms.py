"""Uniformly sampled signal containers shared by every stage of the chain."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass
class OpticalWaveform:
    """Nonnegative optical power trace in watts at a fixed sample rate."""

    sample_rate: float
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise DomainError("sample_rate must be positive")
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DomainError("samples must be one-dimensional")
        if self.samples.size and self.samples.min() < 0:
            raise DomainError("optical power samples must be nonnegative")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def mean_power(self) -> float:
        return float(self.samples.mean()) if self.samples.size else 0.0


@dataclass
class ElectricalWaveform:
    """Signed voltage trace in volts at a fixed sample rate."""

    sample_rate: float
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise DomainError("sample_rate must be positive")
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DomainError("samples must be one-dimensional")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class CountSignal:
    """Detected avalanche counts per simulation time bin."""

    bin_width: float
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.bin_width <= 0:
            raise DomainError("bin_width must be positive")
        self.counts = np.asarray(self.counts)
        if not np.issubdtype(self.counts.dtype, np.integer):
            raise DomainError("counts must be integers")
        if self.counts.size and self.counts.min() < 0:
            raise DomainError("counts must be nonnegative")

    @property
    def duration(self) -> float:
        return self.counts.size * self.bin_width

    def mean_rate(self) -> float:
        """Average detected rate in counts/second over the whole record."""
        if self.counts.size == 0:
            return 0.0
        return float(self.counts.sum()) / self.duration
