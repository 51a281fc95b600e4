"""Harness config files: a flat INI document, one section per module type.

Unknown sections or keys are errors. Grid-valued keys accept either a comma
list ("0.5e9, 1e9, 2e9") or an inclusive start:step:stop range ("2:0.5:4.5").
"""

import configparser
import dataclasses
import io

from .bench import ExperimentConfig
from .detector import FrontEndConfig, SpadArrayConfig
from .errors import ConfigError
from .rx import EqualizerConfig
from .tx import DriveConfig, OfdmConfig

_SECTION_FIELDS = {
    "experiment": {
        "scenario": str,
        "modulation": str,
        "eq_modes": "str_list",
        "power_grid": "float_list",
        "rate_grid": "float_list",
        "clipping_grid": "float_list",
        "target_ber": float,
        "min_errors": int,
        "max_bits": float,
        "master_seed": int,
        "sim_duration": float,
        "channel_sample_rate": float,
        "bypass_detector": bool,
        "ook_training_symbols": int,
        "ook_payload_symbols": int,
        "ofdm_train_symbols": int,
        "ofdm_payload_symbols": int,
        "loading_margin_step_db": float,
        "loading_max_retries": int,
        "allowed_bits": "int_list",
    },
    "ook": {
        "rrc_rolloff": float,
        "samples_per_symbol": int,
        "rrc_span_symbols": int,
    },
    "spad": {
        "n_microcells": int,
        "dead_time": float,
        "pde": float,
        "recharge_charge": float,
        "wavelength": float,
        "f3db": float,
        "dark_count_rate": float,
        "fill_factor": float,
    },
    "frontend": {
        "f3db": float,
        "awgn_sigma": float,
        "gain": float,
    },
    "drive": {
        "vpp": float,
        "laser_bias": float,
        "eo_slope": float,
        "eo_threshold": float,
    },
    "equalizer": {
        "n_linear": int,
        "n_nonlinear": int,
        "rls_forgetting": float,
        "rls_delta": float,
        "decision_delay": int,
    },
    "ofdm": {
        "fft_size": int,
        "n_data_subcarriers": int,
        "cp_length": int,
        "modulation_bandwidth": float,
        "clip_level": float,
    },
}


def _parse_list(text: str, cast):
    text = text.strip()
    if ":" in text and "," not in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"range syntax is start:step:stop, got {text!r}")
        start, step, stop = (float(p) for p in parts)
        if step <= 0:
            raise ConfigError("range step must be positive")
        values = []
        v = start
        while v <= stop + 1e-12 * max(abs(stop), 1.0):
            values.append(cast(v))
            v += step
        return tuple(values)
    return tuple(cast(p) for p in text.split(",") if p.strip())


def _parse_value(text: str, kind):
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    if kind is int:
        return int(float(text))
    if kind is float:
        return float(text)
    if kind is str:
        return text
    if kind == "float_list":
        return _parse_list(text, float)
    if kind == "int_list":
        return _parse_list(text, lambda v: int(round(float(v))))
    if kind == "str_list":
        return tuple(p.strip() for p in text.split(",") if p.strip())
    raise ConfigError(f"unhandled config type {kind!r}")


def parse_config(text: str) -> ExperimentConfig:
    """Parse an INI config document into a fully resolved ExperimentConfig."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file: {exc}") from exc

    sections = {}
    for section in parser.sections():
        if section not in _SECTION_FIELDS:
            raise ConfigError(f"unknown config section [{section}]")
        allowed = _SECTION_FIELDS[section]
        values = {}
        for key, raw in parser.items(section):
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            try:
                values[key] = _parse_value(raw, allowed[key])
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(
                    f"bad value for {key!r} in [{section}]: {raw!r}"
                ) from exc
        sections[section] = values

    try:
        return ExperimentConfig(
            spad=SpadArrayConfig(**sections.get("spad", {})),
            frontend=FrontEndConfig(**sections.get("frontend", {})),
            drive=DriveConfig(**sections.get("drive", {})),
            equalizer=EqualizerConfig(**sections.get("equalizer", {})),
            ofdm=OfdmConfig(**sections.get("ofdm", {})),
            **sections.get("ook", {}),
            **sections.get("experiment", {}),
        )
    except (ConfigError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str) -> ExperimentConfig:
    try:
        with io.open(path, "r") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config(text)


def dump_defaults() -> str:
    """Render the built-in defaults as a complete config document."""
    cfg = ExperimentConfig()
    out = []
    groups = {
        "experiment": cfg,
        "ook": cfg,
        "spad": cfg.spad,
        "frontend": cfg.frontend,
        "drive": cfg.drive,
        "equalizer": cfg.equalizer,
        "ofdm": cfg.ofdm,
    }
    for section, obj in groups.items():
        out.append(f"[{section}]")
        for key in _SECTION_FIELDS[section]:
            value = getattr(obj, key)
            if isinstance(value, tuple):
                value = ", ".join(str(v) for v in value)
            out.append(f"{key} = {value}")
        out.append("")
    return "\n".join(out)
