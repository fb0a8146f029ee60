"""Plain-text experiment configuration.

Format: ``key = value`` lines grouped under ``[model]``, ``[data]``,
``[sampler]`` and ``[experiment]``; ``#`` starts a comment. Unknown sections
or keys are errors.
"""
import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


def _floats(text):
    return [float(v) for v in str(text).replace(",", " ").split()]


def _ints(text):
    return [int(v) for v in str(text).replace(",", " ").split()]


def _paths(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


SCHEMA = {
    "model": {
        "lowpass": str,
        "conditional": _paths,
        "pixel": str,
        "checkpoint": str,
        "J": int,
        "role": str,
        "rf": int,
        "width": int,
        "layers": int,
        "scale": int,
        "oracle_basis": str,
        "oracle_spectrum": str,
    },
    "data": {
        "source": str,
        "side": int,
        "n_train": int,
        "n_test": int,
        "seed": int,
        "input": str,
    },
    "sampler": {
        "h": float,
        "beta": float,
        "sigma0": float,
        "sigma_inf": float,
        "max_iters": int,
        "seed": int,
    },
    "experiment": {
        "output": str,
        "sigmas": _floats,
        "sigma": float,
        "seed": int,
        "pipeline": str,
        "epochs": int,
        "batch_size": int,
        "lr": float,
        "steps": int,
        "time_budget": float,
        "flip": _bool,
        "coordinate": _ints,
        "n_samples": int,
        "zoom": int,
    },
}

DEFAULTS = {
    "model": {"J": 2, "role": "lowpass", "rf": 13, "width": 64, "scale": 1,
              "oracle_basis": "haar", "oracle_spectrum": "powerlaw:1.5"},
    "data": {"source": "toyfaces", "side": 64, "n_train": 5000, "n_test": 100, "seed": 0},
    "sampler": {"h": 0.01, "beta": 0.1, "sigma0": 1.0, "sigma_inf": 0.01,
                "max_iters": 10_000, "seed": 0},
    "experiment": {"output": "out", "sigmas": [0.05, 0.1, 0.2, 0.4, 0.7, 1.0], "sigma": 0.1,
                   "seed": 0, "pipeline": "multiscale", "epochs": 1, "batch_size": 16,
                   "lr": 1e-3, "flip": False, "n_samples": 1, "zoom": 4},
}


@dataclass
class ExperimentConfig:
    model: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)
    source: str = "<defaults>"

    def section(self, name):
        return getattr(self, name)

    def get(self, section, key, default=None):
        return self.section(section).get(key, default)

    def set(self, section, key, raw):
        """Set ``section.key`` from its text form, with type checking."""
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        conv = SCHEMA[section].get(key)
        if conv is None:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        try:
            self.section(section)[key] = conv(raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc


def default_config():
    return ExperimentConfig(**{s: dict(v) for s, v in DEFAULTS.items()})


def parse_config(text, source="<string>"):
    cp = configparser.ConfigParser(
        inline_comment_prefixes=("#",), comment_prefixes=("#",),
        delimiters=("=",), interpolation=None,
    )
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    cfg = default_config()
    cfg.source = source
    for section in cp.sections():
        for key, value in cp.items(section):
            try:
                cfg.set(section, key, value)
            except ConfigError as exc:
                raise ConfigError(f"{source}: {exc}") from exc
    return cfg


def load_config(path):
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, source=str(p))


def config_text(cfg):
    """Serialize ``cfg`` back to the ``key = value`` format."""
    lines = []
    for section, keys in SCHEMA.items():
        values = cfg.section(section)
        if not values:
            continue
        lines.append(f"[{section}]")
        for key in keys:
            if key not in values:
                continue
            v = values[key]
            if isinstance(v, list):
                v = ", ".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = int(v)
            lines.append(f"{key} = {v}")
        lines.append("")
    return "\n".join(lines)
