"""Gray-mapped square QAM constellations with unit average symbol energy."""

import numpy as np

from .errors import DomainError, FramingError

SUPPORTED_ORDERS = (2, 4, 16, 64, 256, 1024)


def _pam_levels(n_bits: int) -> np.ndarray:
    """Gray-ordered PAM amplitudes for one dimension, indexed by bit label."""
    m = 1 << n_bits
    idx = np.arange(m)
    gray = idx ^ (idx >> 1)
    levels = np.empty(m)
    levels[gray] = 2 * idx - (m - 1)
    return levels


def constellation(order: int) -> np.ndarray:
    """Unit-average-energy constellation indexed by the integer bit label.

    The label's high bits select the in-phase amplitude, the low bits the
    quadrature amplitude; each dimension is Gray coded. Order 2 is BPSK on
    the real axis with bit 0 -> -1, bit 1 -> +1.
    """
    if order not in SUPPORTED_ORDERS:
        raise DomainError(f"unsupported QAM order {order}")
    if order == 2:
        return np.array([-1.0 + 0j, 1.0 + 0j])
    half = int(np.log2(order)) // 2
    pam = _pam_levels(half)
    m = 1 << half
    labels_i = np.repeat(np.arange(m), m)
    labels_q = np.tile(np.arange(m), m)
    points = pam[labels_i] + 1j * pam[labels_q]
    scale = np.sqrt(2 * (m * m - 1) / 3)
    return points / scale


def qam_map(bits, order: int) -> np.ndarray:
    """Map a bit sequence to Gray-coded unit-energy QAM symbols."""
    bits = np.asarray(bits, dtype=np.int64).ravel()
    k = int(np.log2(order)) if order in SUPPORTED_ORDERS else 0
    if order not in SUPPORTED_ORDERS:
        raise DomainError(f"unsupported QAM order {order}")
    if bits.size % k:
        raise FramingError(f"bit count {bits.size} not divisible by log2({order})={k}")
    groups = bits.reshape(-1, k)
    labels = groups @ (1 << np.arange(k - 1, -1, -1))
    return constellation(order)[labels]


def qam_demap(symbols, order: int) -> np.ndarray:
    """Hard minimum-distance demap back to bits (per-dimension slicing)."""
    symbols = np.asarray(symbols, dtype=np.complex128).ravel()
    if order not in SUPPORTED_ORDERS:
        raise DomainError(f"unsupported QAM order {order}")
    if order == 2:
        return (symbols.real > 0).astype(np.int64)
    half = int(np.log2(order)) // 2
    m = 1 << half
    scale = np.sqrt(2 * (m * m - 1) / 3)

    def _slice_dim(vals):
        idx = np.clip(np.round((vals * scale + (m - 1)) / 2).astype(np.int64), 0, m - 1)
        gray = idx ^ (idx >> 1)
        shifts = np.arange(half - 1, -1, -1)
        return (gray[:, None] >> shifts) & 1

    bits_i = _slice_dim(symbols.real)
    bits_q = _slice_dim(symbols.imag)
    return np.concatenate([bits_i, bits_q], axis=1).ravel()


def bits_per_symbol(order: int) -> int:
    if order not in SUPPORTED_ORDERS:
        raise DomainError(f"unsupported QAM order {order}")
    return int(np.log2(order))
