"""Experiment harness: sweeps over operating points, rate search, reporting.

Determinism contract: every output row is a pure function of the resolved
configuration and the master seed. Each operating point derives its RNG
stream as SeedSequence([master_seed, crc32(scenario), point_index, *step]),
so points can run in any order or in parallel with identical results.
"""

import hashlib
import os
import tempfile
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from math import isnan

import numpy as np

from . import __version__
from .detector import FrontEndConfig, SpadArrayConfig, bias_current, simulate_counts
from .errors import ConfigError, DomainError, SyncError
from .link import (
    LinkSetup,
    run_ofdm_payload,
    run_ofdm_probe,
    run_ook_point,
)
from .loading import (
    ALLOWED_BITS,
    LoadingPlan,
    SnrProfile,
    achievable_rate,
    load_bits_energy,
)
from .rx import BerReport, EqualizerConfig
from .tx import DriveConfig, OfdmConfig, OokConfig
from .waveforms import OpticalWaveform

SCENARIOS = (
    "bias-curve",
    "ber-vs-power",
    "ber-vs-rate",
    "clipping-sweep",
    "rate-vs-power",
    "snr-bits-report",
)

DEFAULT_CLIPPING_GRID = (2.0, 2.5, 3.0, 3.5, 4.0, 4.5)


@dataclass
class ExperimentConfig:
    """Fully resolved description of one sweep."""

    scenario: str = "ber-vs-power"
    modulation: str = "ook"  # 'ook' or 'dco-ofdm'
    eq_modes: tuple = ("volterra",)
    power_grid: tuple = (1e-7, 3e-7, 8.5e-7, 3e-6, 1e-5)
    rate_grid: tuple = (1.0e9,)
    clipping_grid: tuple = DEFAULT_CLIPPING_GRID
    target_ber: float = 2e-3
    min_errors: int = 100
    max_bits: float = 2e7
    master_seed: int = 1
    sim_duration: float = 1e-3  # bias-curve Monte Carlo span per point

    spad: SpadArrayConfig = field(default_factory=SpadArrayConfig)
    # Desk calibration: gain maps one count to 1 mV, the noise floor adds
    # one count-equivalent rms per sample, placing the OOK BER minimum near
    # 1e-4 at the middle of the default power grid.
    frontend: FrontEndConfig = field(
        default_factory=lambda: FrontEndConfig(awgn_sigma=1e-3, gain=1e-3)
    )
    drive: DriveConfig = field(default_factory=DriveConfig)
    # Long stationary training favors a forgetting factor near 1; the type
    # default (0.999) leaves too little averaging for the 272-tap regressor.
    equalizer: EqualizerConfig = field(
        default_factory=lambda: EqualizerConfig(rls_forgetting=0.9999)
    )
    ofdm: OfdmConfig = field(default_factory=OfdmConfig)

    channel_sample_rate: float = 11.2e9
    bypass_detector: bool = False
    rrc_rolloff: float = 0.1
    samples_per_symbol: int = 4
    rrc_span_symbols: int = 16
    ook_training_symbols: int = 20000
    ook_payload_symbols: int = 100000
    ofdm_train_symbols: int = 20
    ofdm_payload_symbols: int = 48
    loading_margin_step_db: float = 0.5
    loading_max_retries: int = 5
    allowed_bits: tuple = ALLOWED_BITS

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.modulation not in ("ook", "dco-ofdm"):
            raise ConfigError(f"unknown modulation {self.modulation!r}")
        self.eq_modes = tuple(self.eq_modes)
        self.power_grid = tuple(float(p) for p in self.power_grid)
        self.rate_grid = tuple(float(r) for r in self.rate_grid)
        self.clipping_grid = tuple(float(e) for e in self.clipping_grid)
        self.allowed_bits = tuple(int(b) for b in self.allowed_bits)
        for m in self.eq_modes:
            if m not in ("none", "linear", "volterra"):
                raise ConfigError(f"unknown equalizer mode {m!r}")
        if not self.eq_modes:
            raise ConfigError("eq_modes must be nonempty")
        if not self.power_grid or min(self.power_grid) < 0:
            raise ConfigError("power grid must be nonempty and nonnegative")
        if not self.rate_grid or min(self.rate_grid) <= 0:
            raise ConfigError("rate grid must be nonempty and positive")
        if not self.clipping_grid or min(self.clipping_grid) <= 0:
            raise ConfigError("clipping grid must be nonempty and positive")
        if not 0 < self.target_ber < 0.5:
            raise ConfigError("target_ber must be in (0, 0.5)")
        if self.min_errors < 20:
            raise ConfigError("min_errors must be >= 20")

    def link_setup(self) -> LinkSetup:
        return LinkSetup(
            spad=self.spad,
            frontend=self.frontend,
            drive=self.drive,
            equalizer=self.equalizer,
            channel_sample_rate=self.channel_sample_rate,
            bypass_detector=self.bypass_detector,
        )

    def ook_config(self, symbol_rate: float) -> OokConfig:
        return OokConfig(
            symbol_rate=symbol_rate,
            rrc_rolloff=self.rrc_rolloff,
            samples_per_symbol=self.samples_per_symbol,
            rrc_span_symbols=self.rrc_span_symbols,
        )


@dataclass
class SweepResult:
    scenario: str
    columns: tuple
    rows: list
    master_seed: int
    config_hash: str
    config_text: str
    version: str = __version__
    extra_files: dict = field(default_factory=dict)  # name -> (columns, rows)


@dataclass
class RatePoint:
    rate: float
    ber: float
    bits: int
    errors: int
    clip_level: float = float("nan")
    flagged: bool = False
    plan: LoadingPlan | None = None
    profile: SnrProfile | None = None


def _seq(*parts) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts])


def point_entropy(cfg: ExperimentConfig, point_index: int) -> tuple:
    return (cfg.master_seed, zlib.crc32(cfg.scenario.encode()), point_index)


def config_hash(cfg: ExperimentConfig) -> str:
    blob = repr(asdict(cfg)).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def config_text(cfg: ExperimentConfig) -> str:
    lines = []
    for key, value in sorted(asdict(cfg).items()):
        lines.append(f"{key} = {value!r}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Operating points
# ---------------------------------------------------------------------------


def ofdm_fixed_rate_plan(cfg: ExperimentConfig, rate: float) -> LoadingPlan:
    """Uniform-order plan hitting a target rate (for BER-vs-rate sweeps).

    Picks the smallest allowed order whose uniform use reaches the target,
    then trims the active subcarrier count from the top of the band, where
    the front end attenuates most.
    """
    ofdm = cfg.ofdm
    total_bits = rate * ofdm.symbol_length / ofdm.modulation_bandwidth
    n_sc = ofdm.n_data_subcarriers
    for b in [x for x in sorted(cfg.allowed_bits) if x > 0]:
        if b * n_sc >= total_bits:
            n_active = int(np.ceil(total_bits / b))
            bits = np.zeros(n_sc, dtype=np.int64)
            bits[:n_active] = b
            energy = np.zeros(n_sc)
            energy[:n_active] = 1.0
            return LoadingPlan(
                bits=bits,
                energy=energy,
                total_rate=float(bits.sum()) * ofdm.modulation_bandwidth / ofdm.symbol_length,
            )
    raise DomainError(f"target rate {rate:.4g} bps exceeds the maximum loadable rate")


def run_point(
    cfg: ExperimentConfig,
    p_r: float,
    rate: float | None = None,
    clip_level: float | None = None,
    eq_mode: str | None = None,
    entropy: tuple = (0,),
) -> BerReport:
    """Measure BER at one operating point, frames until the stopping rule."""
    setup = cfg.link_setup()
    mode = eq_mode or cfg.eq_modes[0]
    try:
        if cfg.modulation == "ook":
            if rate is None:
                raise ConfigError("OOK operating point needs a data rate")
            result = run_ook_point(
                setup,
                cfg.ook_config(rate),
                p_r,
                mode,
                _seq(*entropy),
                min_errors=cfg.min_errors,
                max_bits=cfg.max_bits,
                training_symbols=cfg.ook_training_symbols,
                payload_symbols=cfg.ook_payload_symbols,
            )
            return result.report
        if rate is None:
            raise ConfigError("OFDM operating point needs a data rate or a plan")
        plan = ofdm_fixed_rate_plan(cfg, rate)
        eps = clip_level if clip_level is not None else cfg.ofdm.clip_level
        return run_ofdm_payload(
            setup,
            cfg.ofdm,
            p_r,
            eps,
            mode,
            plan,
            _seq(*entropy, 1),
            min_errors=cfg.min_errors,
            max_bits=cfg.max_bits,
            train_symbols=cfg.ofdm_train_symbols,
            payload_symbols=cfg.ofdm_payload_symbols,
        )
    except SyncError as exc:
        raise SyncError(
            f"{exc} at operating point (p_r={p_r:.4g} W, rate={rate}, "
            f"clip={clip_level}, mode={mode})"
        ) from exc


def _ook_rate_feasible(cfg, p_r, rate, eq_mode, entropy) -> BerReport | None:
    """BER at a candidate OOK rate; None when synchronization fails."""
    try:
        return run_point(cfg, p_r, rate=rate, eq_mode=eq_mode, entropy=entropy)
    except SyncError:
        return None


def find_achievable_rate(
    cfg: ExperimentConfig,
    p_r: float,
    clip_level: float | None = None,
    eq_mode: str | None = None,
    entropy: tuple = (0,),
) -> RatePoint:
    """Highest rate meeting the BER target at this power.

    OOK: top-down scan of the rate grid for the highest passing rate, then
    one binary refinement step toward the next higher grid rate. OFDM: bit
    loading on the measured SNR profile at the given clipping level,
    validated by a confirmation run; the loading margin steps up by
    loading_margin_step_db and reloads on failure, up to the retry limit.
    """
    mode = eq_mode or cfg.eq_modes[0]
    if cfg.modulation == "ook":
        grid = sorted(cfg.rate_grid)
        best = None
        best_idx = -1
        for idx in range(len(grid) - 1, -1, -1):
            report = _ook_rate_feasible(cfg, p_r, grid[idx], mode, (*entropy, idx))
            if report is not None and report.ber <= cfg.target_ber:
                best = report
                best_idx = idx
                break
        if best is None:
            return RatePoint(rate=0.0, ber=1.0, bits=0, errors=0, flagged=True)
        rate = grid[best_idx]
        if best_idx + 1 < len(grid):
            mid = (grid[best_idx] + grid[best_idx + 1]) / 2
            mid_report = _ook_rate_feasible(cfg, p_r, mid, mode, (*entropy, 100))
            if mid_report is not None and mid_report.ber <= cfg.target_ber:
                rate, best = mid, mid_report
        return RatePoint(
            rate=rate, ber=best.ber, bits=best.bits_compared, errors=best.bit_errors
        )

    eps = clip_level if clip_level is not None else cfg.ofdm.clip_level
    setup = cfg.link_setup()
    try:
        probe = run_ofdm_probe(
            setup, cfg.ofdm, p_r, eps, mode, _seq(*entropy, 2),
            train_symbols=cfg.ofdm_train_symbols,
        )
    except SyncError:
        return RatePoint(rate=0.0, ber=1.0, bits=0, errors=0, clip_level=eps, flagged=True)
    margin_db = 0.0
    report = None
    for attempt in range(cfg.loading_max_retries + 1):
        derated = SnrProfile(snr=probe.profile.snr / 10 ** (margin_db / 10))
        plan = load_bits_energy(derated, cfg.target_ber, cfg.ofdm, cfg.allowed_bits)
        if plan.bits_per_symbol == 0:
            return RatePoint(
                rate=0.0, ber=1.0, bits=0, errors=0, clip_level=eps,
                flagged=True, profile=probe.profile,
            )
        try:
            report = run_ofdm_payload(
                setup, cfg.ofdm, p_r, eps, mode, plan, _seq(*entropy, 3, attempt),
                min_errors=cfg.min_errors, max_bits=cfg.max_bits,
                train_symbols=cfg.ofdm_train_symbols,
                payload_symbols=cfg.ofdm_payload_symbols,
                weights=probe.weights,
            )
        except SyncError:
            return RatePoint(
                rate=0.0, ber=1.0, bits=0, errors=0, clip_level=eps,
                flagged=True, profile=probe.profile,
            )
        if report.ber <= 1.5 * cfg.target_ber:
            return RatePoint(
                rate=achievable_rate(plan, cfg.ofdm),
                ber=report.ber,
                bits=report.bits_compared,
                errors=report.bit_errors,
                clip_level=eps,
                plan=plan,
                profile=probe.profile,
            )
        margin_db += cfg.loading_margin_step_db
    return RatePoint(
        rate=0.0, ber=report.ber, bits=report.bits_compared,
        errors=report.bit_errors, clip_level=eps, flagged=True,
        profile=probe.profile,
    )


def optimize_clipping(
    cfg: ExperimentConfig,
    p_r: float,
    eq_mode: str | None = None,
    entropy: tuple = (0,),
) -> tuple[float, RatePoint]:
    """Clipping level maximizing the achievable rate; ties prefer smaller."""
    best_eps = None
    best_point = None
    for j, eps in enumerate(sorted(cfg.clipping_grid)):
        point = find_achievable_rate(
            cfg, p_r, clip_level=eps, eq_mode=eq_mode, entropy=(*entropy, j)
        )
        if best_point is None or point.rate > best_point.rate:
            best_eps, best_point = eps, point
    return best_eps, best_point


# ---------------------------------------------------------------------------
# Scenarios: point enumeration and per-point execution
# ---------------------------------------------------------------------------


def _bias_current_mc(cfg: ExperimentConfig, p_r: float, seed: int) -> float:
    """Monte Carlo bias current from a constant-power run of sim_duration."""
    if p_r == 0:
        return 0.0
    rate = p_r * cfg.spad.pde / cfg.spad.photon_energy + cfg.spad.dark_count_rate
    fs = max(rate / (0.05 * cfg.spad.n_microcells), 20 / cfg.spad.dead_time)
    n = int(round(cfg.sim_duration * fs))
    wave = OpticalWaveform(sample_rate=fs, samples=np.full(n, p_r))
    counts = simulate_counts(wave, cfg.spad, seed)
    return cfg.spad.recharge_charge * counts.mean_rate()


def scenario_columns(cfg: ExperimentConfig) -> tuple:
    return {
        "bias-curve": ("power_w", "bias_model_a", "bias_mc_a", "rel_err", "seed"),
        "ber-vs-power": ("power_w", "rate_bps", "clip_level", "eq_mode",
                         "ber", "bits", "errors", "seed"),
        "ber-vs-rate": ("power_w", "rate_bps", "clip_level", "eq_mode",
                        "ber", "bits", "errors", "seed"),
        "clipping-sweep": ("power_w", "clip_level", "rate_bps", "ber",
                           "bits", "errors", "seed"),
        "rate-vs-power": ("power_w", "modulation", "eq_mode", "clip_level",
                          "rate_bps", "ber", "bits", "errors", "flagged", "seed"),
        "snr-bits-report": ("power_w", "eq_mode", "clip_level", "rate_bps",
                            "ber", "bits", "errors", "seed"),
    }[cfg.scenario]


def scenario_points(cfg: ExperimentConfig) -> list:
    """The ordered operating-point specs of a scenario."""
    if cfg.scenario == "bias-curve":
        return [(p,) for p in cfg.power_grid]
    if cfg.scenario == "ber-vs-power":
        return [(p, r, m) for p in cfg.power_grid for r in cfg.rate_grid
                for m in cfg.eq_modes]
    if cfg.scenario == "ber-vs-rate":
        clip_levels = (
            tuple(sorted(cfg.clipping_grid)) if cfg.modulation == "dco-ofdm"
            else (float("nan"),)
        )
        return [(p, r, e, m) for p in cfg.power_grid for r in cfg.rate_grid
                for e in clip_levels for m in cfg.eq_modes]
    if cfg.scenario == "clipping-sweep":
        return [(p, e) for p in cfg.power_grid for e in sorted(cfg.clipping_grid)]
    if cfg.scenario in ("rate-vs-power", "snr-bits-report"):
        return [(p, m) for p in cfg.power_grid for m in cfg.eq_modes]
    raise ConfigError(f"unknown scenario {cfg.scenario!r}")


def execute_point(cfg: ExperimentConfig, point_index: int, spec: tuple):
    """Compute one output row (and optional extra files) for a point spec."""
    entropy = point_entropy(cfg, point_index)
    seed = int(_seq(*entropy).generate_state(1)[0])
    extras = {}
    if cfg.scenario == "bias-curve":
        (p_r,) = spec
        model = bias_current(p_r, cfg.spad)
        mc = _bias_current_mc(cfg, p_r, seed)
        rel = abs(mc - model) / model if model > 0 else 0.0
        return (p_r, model, mc, rel, seed), extras

    if cfg.scenario == "ber-vs-power":
        p_r, rate, mode = spec
        eps = cfg.ofdm.clip_level if cfg.modulation == "dco-ofdm" else float("nan")
        try:
            rep = run_point(cfg, p_r, rate=rate, eq_mode=mode, entropy=entropy)
            return (p_r, rate, eps, mode, rep.ber, rep.bits_compared,
                    rep.bit_errors, seed), extras
        except SyncError:
            return (p_r, rate, eps, mode, 1.0, 0, 0, seed), extras

    if cfg.scenario == "ber-vs-rate":
        p_r, rate, eps, mode = spec
        clip = None if isnan(eps) else eps
        try:
            rep = run_point(cfg, p_r, rate=rate, clip_level=clip,
                            eq_mode=mode, entropy=entropy)
            return (p_r, rate, eps, mode, rep.ber, rep.bits_compared,
                    rep.bit_errors, seed), extras
        except SyncError:
            return (p_r, rate, eps, mode, 1.0, 0, 0, seed), extras

    if cfg.scenario == "clipping-sweep":
        p_r, eps = spec
        point = find_achievable_rate(cfg, p_r, clip_level=eps, entropy=entropy)
        return (p_r, eps, point.rate, point.ber, point.bits, point.errors, seed), extras

    if cfg.scenario == "rate-vs-power":
        p_r, mode = spec
        if cfg.modulation == "dco-ofdm":
            eps, point = optimize_clipping(cfg, p_r, eq_mode=mode, entropy=entropy)
        else:
            point = find_achievable_rate(cfg, p_r, eq_mode=mode, entropy=entropy)
            eps = float("nan")
        return (p_r, cfg.modulation, mode, eps, point.rate, point.ber,
                point.bits, point.errors, int(point.flagged), seed), extras

    if cfg.scenario == "snr-bits-report":
        p_r, mode = spec
        if len(cfg.clipping_grid) > 1:
            eps, point = optimize_clipping(cfg, p_r, eq_mode=mode, entropy=entropy)
        else:
            eps = cfg.clipping_grid[0]
            point = find_achievable_rate(cfg, p_r, clip_level=eps,
                                         eq_mode=mode, entropy=entropy)
        if point.plan is not None and point.profile is not None:
            sub_rows = [
                (k, float(db), int(b))
                for k, (db, b) in enumerate(zip(point.profile.db(), point.plan.bits))
            ]
            extras[f"snr_bits_p{point_index:02d}"] = (
                ("subcarrier", "snr_db", "bits"), sub_rows)
        return (p_r, mode, eps, point.rate, point.ber,
                point.bits, point.errors, seed), extras

    raise ConfigError(f"unknown scenario {cfg.scenario!r}")


def _pool_entry(args):
    cfg, point_index, spec = args
    row, extras = execute_point(cfg, point_index, spec)
    return point_index, row, extras


def run_scenario(cfg: ExperimentConfig, workers: int = 1) -> SweepResult:
    """Execute a scenario; rows come out sorted by point index regardless of
    worker count, so the emitted files are byte-identical."""
    points = scenario_points(cfg)
    columns = scenario_columns(cfg)
    results = []
    if workers <= 1:
        for idx, spec in enumerate(points):
            row, extras = execute_point(cfg, idx, spec)
            results.append((idx, row, extras))
    else:
        jobs = [(cfg, idx, spec) for idx, spec in enumerate(points)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_pool_entry, jobs))
    results.sort(key=lambda item: item[0])
    rows = [row for _, row, _ in results]
    extra_files = {}
    for _, _, extras in results:
        extra_files.update(extras)
    return SweepResult(
        scenario=cfg.scenario,
        columns=columns,
        rows=rows,
        master_seed=cfg.master_seed,
        config_hash=config_hash(cfg),
        config_text=config_text(cfg),
        extra_files=extra_files,
    )


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------


def format_number(value) -> str:
    """Plain decimal formatting, stable across runs."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if isnan(value):
            return "nan"
        return np.format_float_positional(float(value), trim="0")
    return str(value)


def _atomic_write(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(columns, rows) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(format_number(v) for v in row))
    return "\n".join(lines) + "\n"


def emit_report(result: SweepResult, out_dir: str) -> list:
    """Write the sweep CSV, the run manifest, and any per-point extras.

    Files are written to a temporary name and renamed into place, so a
    failing write leaves nothing partial behind. Returns written paths.
    """
    written = []
    base = result.scenario.replace("-", "_")
    csv_path = os.path.join(out_dir, f"{base}.csv")
    _atomic_write(csv_path, _csv_text(result.columns, result.rows))
    written.append(csv_path)
    manifest = "\n".join([
        f"scenario: {result.scenario}",
        f"version: {result.version}",
        f"master_seed: {result.master_seed}",
        f"config_hash: {result.config_hash}",
        "seeding: point seed = SeedSequence([master_seed, crc32(scenario), "
        "point_index, *step]); rows sorted by point index before emission",
        "",
        "[resolved config]",
        result.config_text,
        "",
    ])
    manifest_path = os.path.join(out_dir, f"{base}_manifest.txt")
    _atomic_write(manifest_path, manifest)
    written.append(manifest_path)
    for name, (cols, rows) in sorted(result.extra_files.items()):
        path = os.path.join(out_dir, f"{name}.csv")
        _atomic_write(path, _csv_text(cols, rows))
        written.append(path)
    return written
