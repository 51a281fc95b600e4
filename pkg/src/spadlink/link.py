"""End-to-end single-operating-point link simulations.

Wires TX waveform synthesis -> electro-optic conversion -> dead-time Monte
Carlo detection -> analog front end -> receiver DSP, for both OOK and
DC-biased optical OFDM. Every function is a pure function of its explicit
configuration and seed material.

Synchronization detail: the receiver correlates against a template pushed
through the deterministic part of the channel model (static saturation law
plus the front-end low-pass). The raw transmit preamble decorrelates badly
once the array compresses, while the model template keeps the peak well
above the sync threshold everywhere the link is usable. Each frame also
starts with a settle pad so the microcell occupancy reaches steady state
before the preamble arrives.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.signal

from . import qam
from .detector import (
    FrontEndConfig,
    SpadArrayConfig,
    front_end,
    mean_detected_rate,
    simulate_counts,
)
from .dsp import resample_waveform, rrc_taps
from .errors import ConfigError, SyncError
from .loading import LoadingPlan, SnrProfile, estimate_snr
from .rx import (
    BerReport,
    EqualizerConfig,
    OokSlicer,
    QamScheme,
    decide_and_count,
    equalize,
    estimate_fde,
    matched_filter_downsample,
    ofdm_demodulate,
    rls_train,
    synchronize,
    train_slicer,
)
from .tx import (
    DriveConfig,
    OfdmConfig,
    OokConfig,
    clip_and_scale,
    electro_optic,
    generate_bits,
    ofdm_assemble_frame,
    ook_modulate,
)
from .waveforms import ElectricalWaveform


@dataclass
class LinkSetup:
    """Shared physical-layer configuration for one simulated link."""

    spad: SpadArrayConfig = field(default_factory=SpadArrayConfig)
    frontend: FrontEndConfig = field(default_factory=FrontEndConfig)
    drive: DriveConfig = field(default_factory=DriveConfig)
    equalizer: EqualizerConfig = field(default_factory=EqualizerConfig)
    channel_sample_rate: float = 11.2e9
    bypass_detector: bool = False  # ideal channel: drive voltage passes through
    # OFDM time-domain equalizer oversampling: second-order products of a
    # full-band signal alias when equalizing at the modulation rate, so the
    # equalizer runs at this multiple and decimates before the transform.
    neq_oversample: int = 2

    def __post_init__(self):
        if self.channel_sample_rate <= 0:
            raise ConfigError("channel_sample_rate must be positive")
        if self.neq_oversample < 1:
            raise ConfigError("neq_oversample must be >= 1")


def _through_channel(
    drive_wave: ElectricalWaveform,
    setup: LinkSetup,
    p_r: float,
    seeds,
    processing_rate: float,
) -> ElectricalWaveform:
    """Drive voltage -> optics -> detector -> front end -> processing rate.

    The upsampled drive is limited to +/-vpp/2 before the laser: the drive
    chain saturates there physically, and band-limited interpolation rings
    past the bound around clipped edges and pulse overshoots.
    """
    if setup.bypass_detector:
        rx = drive_wave
    else:
        up = resample_waveform(drive_wave, setup.channel_sample_rate)
        half = setup.drive.vpp / 2
        up = ElectricalWaveform(up.sample_rate, np.clip(up.samples, -half, half))
        optical = electro_optic(up, setup.drive, target_rx_power=p_r)
        counts = simulate_counts(optical, setup.spad, int(seeds[0]))
        rx = front_end(counts, setup.frontend, int(seeds[1]))
    rx = resample_waveform(rx, processing_rate)
    samples = rx.samples - rx.samples.mean()  # AC coupling
    rms = np.sqrt(np.mean(samples**2))
    if rms > 0:
        samples = samples / rms
    return ElectricalWaveform(sample_rate=processing_rate, samples=samples)


def _model_template(
    drive_ac: np.ndarray,
    sample_rate: float,
    setup: LinkSetup,
    p_r: float,
    keep_from: int = 0,
) -> np.ndarray:
    """Deterministic receive-shape model of a known drive segment.

    Applies the affine electro-optic map scaled to the operating power, then
    the mean-field occupancy dynamics of the microcell bank,

        L[i+1] = L[i] + R[i-D] - R[i],   R[i] = lam[i] * L[i] / N,

    and finally the front-end low-pass, removing the mean. The delay term
    captures the saturated array's high-pass character that a static
    saturation law misses; noise and the stochastic recovery ringing are
    ignored. `keep_from` drops warm-up context samples from the output.
    """
    if setup.bypass_detector:
        segment = drive_ac[keep_from:]
        return segment - segment.mean()
    spad = setup.spad
    headroom = setup.drive.laser_bias - setup.drive.eo_threshold
    power = np.maximum(headroom + drive_ac, 0.0) * (p_r / headroom)
    lam = (power * (spad.pde / spad.photon_energy) + spad.dark_count_rate) / sample_rate
    n = lam.size
    if spad.dead_time == 0:
        rate = lam
    else:
        d_bins = max(1, int(round(spad.dead_time * sample_rate)))
        mean_lam = lam.mean()
        occupancy = spad.n_microcells / (1.0 + mean_lam * d_bins / spad.n_microcells)
        rate = np.empty(n)
        ring = np.full(d_bins, mean_lam * occupancy / spad.n_microcells)
        live = occupancy
        for i in range(n):
            slot = i % d_bins
            live += ring[slot]
            r = lam[i] * live / spad.n_microcells
            if r > live:
                r = live
            rate[i] = r
            live -= r
            ring[slot] = r
    if setup.frontend.f3db < sample_rate / 2:
        b, a = scipy.signal.butter(1, setup.frontend.f3db, btype="low", fs=sample_rate)
        rate = scipy.signal.lfilter(b, a, rate)
    segment = rate[keep_from:]
    return segment - segment.mean()


def _whiten_pair(rx_samples: np.ndarray, template: np.ndarray, sample_rate: float,
                 band_edge: float) -> tuple:
    """Spectrally whiten both correlation arms inside the signal band.

    The saturated array rings at harmonics of the dead-time recovery rate;
    those narrowband spikes dominate a plain normalized correlation. Scaling
    both arms by 1/sqrt(PSD_rx) (zero above `band_edge`) flattens the noise
    so the preamble correlation peak stays usable.
    """
    nper = min(4096, max(256, 1 << int(np.log2(max(rx_samples.size // 8, 256)))))
    freqs, psd = scipy.signal.welch(rx_samples, fs=sample_rate, nperseg=nper)
    floor = psd.max() * 1e-9 + 1e-300
    gain = 1.0 / np.sqrt(psd + floor)
    gain[freqs > band_edge] = 0.0

    def _apply(x):
        spec = np.fft.rfft(x)
        f = np.fft.rfftfreq(x.size, 1.0 / sample_rate)
        return np.fft.irfft(spec * np.interp(f, freqs, gain), n=x.size)

    return _apply(rx_samples), _apply(template)


# ---------------------------------------------------------------------------
# OOK
# ---------------------------------------------------------------------------

OOK_PAD_SYMBOLS = 256
OOK_PREAMBLE_SYMBOLS = 256
OOK_TAIL_SYMBOLS = 64


@dataclass
class OokPointResult:
    report: BerReport
    training_mse: float


@dataclass
class _OokCalibration:
    weights: object
    threshold: float


def run_ook_frame(
    setup: LinkSetup,
    cfg: OokConfig,
    p_r: float,
    bits_parts,
    channel_seeds,
    calibration: _OokCalibration | None,
    eq_cfg: EqualizerConfig,
):
    """Simulate one OOK frame; train on the first frame, reuse afterwards."""
    pad_bits, preamble_bits, training_bits, payload_bits = bits_parts
    tail_bits = np.zeros(OOK_TAIL_SYMBOLS, dtype=np.int64)
    frame_bits = np.concatenate([pad_bits, preamble_bits, training_bits, payload_bits, tail_bits])
    shaped = ook_modulate(frame_bits, cfg)
    drive_wave = ElectricalWaveform(
        sample_rate=shaped.sample_rate, samples=shaped.samples * (setup.drive.vpp / 2)
    )
    rx = _through_channel(drive_wave, setup, p_r, channel_seeds, cfg.sample_rate)

    sps = cfg.samples_per_symbol
    context_bits = np.concatenate([pad_bits, preamble_bits])
    context_drive = ook_modulate(context_bits, cfg).samples * (setup.drive.vpp / 2)
    template = _model_template(
        context_drive, cfg.sample_rate, setup, p_r, keep_from=pad_bits.size * sps
    )
    search_span = (pad_bits.size + 2 * preamble_bits.size) * sps
    rx_corr = rx.samples[:search_span]
    if not setup.bypass_detector:
        band_edge = min(1.5 * setup.frontend.f3db, 0.49 * cfg.sample_rate)
        rx_corr, template = _whiten_pair(rx_corr, template, cfg.sample_rate, band_edge)
    try:
        offset = synchronize(ElectricalWaveform(cfg.sample_rate, rx_corr), template)
    except SyncError as exc:
        raise SyncError(f"{exc} (p_r={p_r:.4g} W, rate={cfg.symbol_rate:.4g} Bd)") from exc
    # The template starts at the preamble; step back to the frame start.
    offset -= pad_bits.size * sps
    if offset < 0:
        raise SyncError(
            f"sync offset fell before the frame start (p_r={p_r:.4g} W)"
        )
    soft = matched_filter_downsample(rx, cfg, offset)
    soft = soft / max(np.sqrt(np.mean(soft**2)), 1e-30)

    n_head = pad_bits.size + preamble_bits.size
    n_train = training_bits.size
    n_pay = payload_bits.size
    needed = n_head + n_train + n_pay + eq_cfg.decision_delay
    if soft.size < needed:
        soft = np.pad(soft, (0, needed - soft.size))

    if calibration is None:
        x_train = soft[n_head : n_head + n_train]
        ref = 2.0 * training_bits - 1.0
        result = rls_train(x_train, ref, eq_cfg)
        eq_train = equalize(x_train, result, eq_cfg.decision_delay)
        threshold = train_slicer(eq_train, training_bits[: eq_train.size])
        calibration = _OokCalibration(weights=result.weights, threshold=threshold)
        training_mse = result.final_mse()
    else:
        training_mse = float("nan")

    eq_all = equalize(soft, calibration.weights, eq_cfg.decision_delay)
    payload_soft = eq_all[n_head + n_train : n_head + n_train + n_pay]
    report = decide_and_count(
        payload_soft, payload_bits, OokSlicer(threshold=calibration.threshold)
    )
    return report, calibration, training_mse


def run_ook_point(
    setup: LinkSetup,
    cfg: OokConfig,
    p_r: float,
    eq_mode: str,
    seed_seq: np.random.SeedSequence,
    min_errors: int = 100,
    max_bits: float = 2e7,
    training_symbols: int = 20000,
    payload_symbols: int = 100000,
) -> OokPointResult:
    """Accumulate OOK frames at one operating point until the stopping rule."""
    eq_cfg = replace(setup.equalizer, mode=eq_mode)
    point_seq = seed_seq.generate_state(4).astype(np.int64)
    pad_bits = generate_bits(OOK_PAD_SYMBOLS, int(point_seq[0]) ^ 0x5A5A)
    # Preamble bits repeat 4x so the sync waveform concentrates below the
    # front-end corner and survives saturation compression.
    preamble_bits = np.repeat(
        generate_bits(OOK_PREAMBLE_SYMBOLS // 4, int(point_seq[0])), 4
    )
    training_bits = generate_bits(training_symbols, int(point_seq[1]))
    calibration = None
    training_mse = float("nan")
    bits_done = 0
    errors = 0
    frame_idx = 0
    while True:
        payload_bits = generate_bits(payload_symbols, int(point_seq[2]) + frame_idx)
        ch_seeds = np.random.SeedSequence(
            [int(point_seq[3]), frame_idx]
        ).generate_state(2)
        report, calibration, mse = run_ook_frame(
            setup,
            cfg,
            p_r,
            (pad_bits, preamble_bits, training_bits, payload_bits),
            ch_seeds,
            calibration,
            eq_cfg,
        )
        if frame_idx == 0:
            training_mse = mse
        bits_done += report.bits_compared
        errors += report.bit_errors
        frame_idx += 1
        if errors >= min_errors or bits_done >= max_bits:
            break
    merged = BerReport(bits_compared=bits_done, bit_errors=errors)
    return OokPointResult(report=merged, training_mse=training_mse)


# ---------------------------------------------------------------------------
# OFDM
# ---------------------------------------------------------------------------

OFDM_PAD_SYMBOLS = 1
OFDM_SYNC_SYMBOLS = 2
OFDM_PILOT_SYMBOLS = 4
OFDM_PROBE_SYMBOLS = 64
OFDM_TAIL_SAMPLES = 1200


@dataclass
class OfdmProbeResult:
    profile: SnrProfile
    weights: object  # trained NEQ weights, or None in FDE-only mode
    clipped_fraction: float


def _qpsk_matrix(n_symbols: int, n_sc: int, seed: int) -> np.ndarray:
    bits = generate_bits(2 * n_symbols * n_sc, seed)
    return qam.qam_map(bits, 4).reshape(n_symbols, n_sc)


def _frame_symbol_matrix(payload_matrix, cfg: OfdmConfig, seeds):
    """Settle pad + sync preamble + pilots + payload, all known to the bench."""
    pad = _qpsk_matrix(OFDM_PAD_SYMBOLS, cfg.n_data_subcarriers, int(seeds[0]) ^ 0x5A5A)
    sync = _qpsk_matrix(OFDM_SYNC_SYMBOLS, cfg.n_data_subcarriers, int(seeds[0]))
    pilots = _qpsk_matrix(OFDM_PILOT_SYMBOLS, cfg.n_data_subcarriers, int(seeds[1]))
    return np.concatenate([pad, sync, pilots, payload_matrix]), pilots


def _ofdm_transmit(symbol_matrix, setup: LinkSetup, cfg: OfdmConfig, clip_level, p_r, seeds):
    """Assemble, clip, pad, drive, and push one OFDM frame through the channel.

    The received waveform comes back at neq_oversample times the modulation
    bandwidth so the time-domain equalizer can work above the signal band.
    """
    blocks = ofdm_assemble_frame(symbol_matrix, cfg)
    clipped = clip_and_scale(blocks, clip_level, setup.drive, cfg.modulation_bandwidth)
    padded = np.concatenate([clipped.waveform.samples, np.zeros(OFDM_TAIL_SAMPLES)])
    drive_wave = ElectricalWaveform(cfg.modulation_bandwidth, padded)
    rx = _through_channel(
        drive_wave, setup, p_r, seeds,
        setup.neq_oversample * cfg.modulation_bandwidth,
    )
    return rx, clipped


def _ofdm_sync(rx, clipped_normalized, setup: LinkSetup, cfg: OfdmConfig, p_r):
    """Locate the frame start from the model-shaped sync preamble."""
    sym_len = cfg.symbol_length
    pre_start = OFDM_PAD_SYMBOLS * sym_len
    pre_len = OFDM_SYNC_SYMBOLS * sym_len
    drive_scale = setup.drive.vpp / (2 * cfg.clip_level)
    context = clipped_normalized[: pre_start + pre_len] * drive_scale
    template = _model_template(
        context, cfg.modulation_bandwidth, setup, p_r, keep_from=pre_start
    )
    fs = cfg.modulation_bandwidth
    search_span = pre_start + pre_len + 2 * sym_len
    rx_corr = rx.samples[:search_span]
    if not setup.bypass_detector:
        band_edge = min(1.5 * setup.frontend.f3db, 0.49 * fs)
        rx_corr, template = _whiten_pair(rx_corr, template, fs, band_edge)
    offset = synchronize(ElectricalWaveform(fs, rx_corr), template)
    offset -= pre_start
    if offset < 0:
        raise SyncError(f"sync offset fell before the frame start (p_r={p_r:.4g} W)")
    return offset


def _ofdm_receive_symbols(
    rx: ElectricalWaveform,
    clipped_normalized: np.ndarray,
    setup: LinkSetup,
    cfg: OfdmConfig,
    p_r: float,
    eq_mode: str,
    weights,
    train_samples: int,
    n_symbols: int,
):
    """Synchronize, optionally equalize in time domain, and demodulate.

    `rx` arrives at neq_oversample x the modulation bandwidth; timing is
    recovered at the modulation rate, the equalizer runs at the oversampled
    rate against an equally oversampled reference, and its output is
    anti-alias decimated before the transform. Returns the per-symbol
    subcarrier matrix (before FDE) for the frame minus its settle pad, plus
    the trained weights.
    """
    over = setup.neq_oversample
    rx_base = resample_waveform(rx, cfg.modulation_bandwidth)
    offset = _ofdm_sync(rx_base, clipped_normalized, setup, cfg, p_r)
    if eq_mode in ("volterra", "linear"):
        eq_cfg = replace(setup.equalizer, mode=eq_mode)
        x = rx.samples
        offset_os = offset * over
        reference = (
            scipy.signal.resample_poly(clipped_normalized, over, 1)
            if over > 1 else clipped_normalized
        )
        usable = min(train_samples * over, reference.size, x.size - offset_os)
        if weights is None:
            result = rls_train(
                x[offset_os : offset_os + usable], reference[:usable], eq_cfg
            )
            weights = result.weights
        eq = equalize(x[offset_os:], weights, eq_cfg.decision_delay)
        if over > 1:
            eq = scipy.signal.resample_poly(eq, 1, over)
        stream = ElectricalWaveform(sample_rate=cfg.modulation_bandwidth, samples=eq)
        sym_offset = OFDM_PAD_SYMBOLS * cfg.symbol_length
    else:
        stream = rx_base
        sym_offset = offset + OFDM_PAD_SYMBOLS * cfg.symbol_length
    raw = ofdm_demodulate(
        stream, cfg, sym_offset, np.ones(cfg.n_data_subcarriers), n_symbols=n_symbols
    )
    return raw, weights


def run_ofdm_probe(
    setup: LinkSetup,
    cfg: OfdmConfig,
    p_r: float,
    clip_level: float,
    eq_mode: str,
    seed_seq: np.random.SeedSequence,
    train_symbols: int = 20,
) -> OfdmProbeResult:
    """Measure the per-subcarrier SNR profile with known QPSK probe symbols."""
    cfg = replace(cfg, clip_level=clip_level)
    seeds = seed_seq.generate_state(5).astype(np.int64)
    probe = _qpsk_matrix(OFDM_PROBE_SYMBOLS, cfg.n_data_subcarriers, int(seeds[2]))
    matrix, pilots = _frame_symbol_matrix(probe, cfg, seeds)
    rx, clipped = _ofdm_transmit(matrix, setup, cfg, clip_level, p_r, seeds[3:5])
    n_after_pad = OFDM_SYNC_SYMBOLS + OFDM_PILOT_SYMBOLS + OFDM_PROBE_SYMBOLS
    raw, weights = _ofdm_receive_symbols(
        rx, clipped.normalized, setup, cfg, p_r, eq_mode, None,
        train_samples=train_symbols * cfg.symbol_length,
        n_symbols=n_after_pad,
    )
    h = estimate_fde(raw[OFDM_SYNC_SYMBOLS : OFDM_SYNC_SYMBOLS + OFDM_PILOT_SYMBOLS], pilots)
    eq_syms = raw[OFDM_SYNC_SYMBOLS + OFDM_PILOT_SYMBOLS :] / h
    profile = estimate_snr(eq_syms, probe)
    return OfdmProbeResult(
        profile=profile, weights=weights, clipped_fraction=clipped.clipped_fraction
    )


def _loaded_payload(plan: LoadingPlan, n_symbols: int, seed: int, n_sc: int):
    """Random payload bits mapped onto the loaded constellations."""
    bps = plan.bits_per_symbol
    bits = generate_bits(bps * n_symbols, seed)
    matrix = np.zeros((n_symbols, n_sc), dtype=np.complex128)
    col = 0
    per_row = bits.reshape(n_symbols, bps)
    for k in np.nonzero(plan.bits)[0]:
        b = int(plan.bits[k])
        chunk = per_row[:, col : col + b].reshape(-1)
        syms = qam.qam_map(chunk, 1 << b).reshape(n_symbols)
        matrix[:, k] = syms * np.sqrt(plan.energy[k])
        col += b
    return bits, matrix


def run_ofdm_payload(
    setup: LinkSetup,
    cfg: OfdmConfig,
    p_r: float,
    clip_level: float,
    eq_mode: str,
    plan: LoadingPlan,
    seed_seq: np.random.SeedSequence,
    min_errors: int = 100,
    max_bits: float = 2e7,
    train_symbols: int = 20,
    payload_symbols: int = 48,
    weights=None,
) -> BerReport:
    """Transmit loaded payload frames until the error/bit stopping rule.

    `weights` carries the equalizer calibration from the probe of the same
    operating point; when absent, the first payload frame trains its own.
    """
    if plan.bits_per_symbol == 0:
        raise ConfigError("cannot run a payload with an empty loading plan")
    cfg = replace(cfg, clip_level=clip_level)
    base = seed_seq.generate_state(2).astype(np.int64)
    bits_done = 0
    errors = 0
    frame_idx = 0
    n_after_pad = OFDM_SYNC_SYMBOLS + OFDM_PILOT_SYMBOLS + payload_symbols
    while True:
        seeds = np.random.SeedSequence([int(base[0]), frame_idx]).generate_state(5).astype(np.int64)
        payload_bits, payload_matrix = _loaded_payload(
            plan, payload_symbols, int(seeds[2]), cfg.n_data_subcarriers
        )
        matrix, pilots = _frame_symbol_matrix(payload_matrix, cfg, seeds)
        rx, clipped = _ofdm_transmit(matrix, setup, cfg, clip_level, p_r, seeds[3:5])
        raw, weights = _ofdm_receive_symbols(
            rx, clipped.normalized, setup, cfg, p_r, eq_mode, weights,
            train_samples=train_symbols * cfg.symbol_length,
            n_symbols=n_after_pad,
        )
        h = estimate_fde(
            raw[OFDM_SYNC_SYMBOLS : OFDM_SYNC_SYMBOLS + OFDM_PILOT_SYMBOLS], pilots
        )
        eq_syms = raw[OFDM_SYNC_SYMBOLS + OFDM_PILOT_SYMBOLS :] / h
        report = decide_and_count(
            eq_syms,
            payload_bits,
            QamScheme(bits=plan.bits, energy=plan.energy),
        )
        bits_done += report.bits_compared
        errors += report.bit_errors
        frame_idx += 1
        if errors >= min_errors or bits_done >= max_bits:
            break
    return BerReport(bits_compared=bits_done, bit_errors=errors)
