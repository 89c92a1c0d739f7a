"""Experiment configuration: sectioned key = value files with overrides.

The format is plain INI (configparser) so sweeps stay diffable.  Every key is
declared in the schema below with its type and default; unknown sections or
keys are rejected.  ``--set section.key=value`` overrides are applied before
validation, and the effective configuration is digested so output artifacts
are traceable to exact settings.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field

from .errors import InvalidConfig


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise InvalidConfig(f"not a boolean: {text!r}")


# section -> key -> (parser, default); defaults are already-parsed values.
SCHEMA = {
    "run": {
        "strategy": (str, "shifted"),
        "panorama_width": (int, 256),
        "window_width": (int, 64),
        "stride": (int, 16),
        "height": (int, 8),
        "channels": (int, 4),
        "steps": (int, 50),
        "schedule": (str, "linear"),
        "rule": (str, "ddpm"),
        "eta": (float, 0.0),
        "seed": (int, 0),
        "shift_law": (str, "uniform_integer"),
        "shift_file": (str, ""),
    },
    "prior": {
        "amplitude": (float, 1.0),
        "sigma0": (float, 1.0),
        "correlation_length": (float, 8.0),
    },
    "denoiser": {
        "kind": (str, "mrf"),
        "fixture": (str, ""),
        "command": (str, ""),
        "timeout": (float, 30.0),
    },
    "output": {
        "dir": (str, "out"),
        "emit_pgm": (_bool, True),
        "emit_raw": (_bool, True),
        "emit_csv": (_bool, True),
    },
    "compare": {
        "strategies": (str, "shifted,multidiffusion@16,multidiffusion@64"),
        "seeds": (int, 1),
    },
    "calibration": {
        "seeds": (int, 100),
    },
}

_CHOICES = {
    ("run", "strategy"): ("plain", "multidiffusion", "shifted"),
    ("run", "schedule"): ("linear", "cosine"),
    ("run", "rule"): ("ddpm", "ddim"),
    ("run", "shift_law"): ("uniform_integer", "forced_zero", "fixed_sequence"),
    ("denoiser", "kind"): ("mrf", "replay", "external"),
}


@dataclass
class ExperimentConfig:
    values: dict[str, dict[str, object]] = field(default_factory=dict)

    def get(self, section: str, key: str):
        return self.values[section][key]

    def digest(self) -> str:
        lines = sorted(
            f"{section}.{key}={self.values[section][key]}"
            for section in self.values
            for key in self.values[section]
        )
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


def _apply(cfg: dict, section: str, key: str, raw: str) -> None:
    if section not in SCHEMA:
        raise InvalidConfig(f"unknown config section [{section}]")
    if key not in SCHEMA[section]:
        raise InvalidConfig(f"unknown key {key!r} in section [{section}]")
    parser = SCHEMA[section][key][0]
    try:
        value = parser(raw)
    except (ValueError, InvalidConfig) as exc:
        raise InvalidConfig(f"bad value for {section}.{key}: {raw!r} ({exc})") from exc
    choices = _CHOICES.get((section, key))
    if choices and value not in choices:
        raise InvalidConfig(
            f"{section}.{key} must be one of {choices}, got {value!r}"
        )
    cfg[section][key] = value


def load_config(path: str | None, overrides: list[str] = ()) -> ExperimentConfig:
    """Parse a config file plus ``section.key=value`` overrides."""
    cfg = {s: {k: default for k, (_, default) in keys.items()} for s, keys in SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise InvalidConfig(f"cannot read config file {path!r}")
        for section in parser.sections():
            for key, raw in parser.items(section):
                _apply(cfg, section, key, raw)
    for override in overrides:
        if "=" not in override or "." not in override.split("=", 1)[0]:
            raise InvalidConfig(
                f"override must look like section.key=value, got {override!r}"
            )
        dotted, raw = override.split("=", 1)
        section, key = dotted.split(".", 1)
        _apply(cfg, section.strip(), key.strip(), raw.strip())
    return ExperimentConfig(cfg)
