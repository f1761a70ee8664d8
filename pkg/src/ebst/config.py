"""Experiment configuration: flat "dotted.key = value" text files.

The format is deliberately dependency-free: one key per line, ``#`` starts a
comment, lists are comma-separated. CLI flags override file values. A report
embeds the fully resolved configuration (minus the output directory, which is
an execution detail) so any run can be reproduced from its own report.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError, ParseError
from .selftrain import MODES


@dataclass
class ExperimentConfig:
    # data
    generator: str = "two_moons"        # two_moons | gaussian_shift | csv
    n: int = 400
    noise_sd: float = 0.1
    theta_degrees: float = 45.0
    data_seed: int = 7
    classes: int = 3                    # gaussian_shift only
    mean_shift: tuple = (1.0, 1.0)      # gaussian_shift only
    source_csv: str = ""
    target_csv: str = ""
    csv_k: int = 0                      # 0 = infer from the labeled rows
    # model
    hidden: tuple = (32, 32)
    # training
    mode: str = "rebm"
    rounds: int = 6
    alpha: float = 1.0
    epsilon: float = 0.1
    portion_start: float = 0.2
    portion_step: float = 0.05
    portion_max: float = 0.5
    lr: float = 1e-3
    epochs_per_round: int = 20
    batch_size: int = 32                # 0 = full batch
    weight_decay: float = 5e-4
    momentum: float = 0.9
    source_epochs: int = 200
    source_lr: float = 1e-2
    lambda_schedule: str = "recompute"  # recompute | fixed
    step2_energy: bool = True
    use_cd: bool = True
    cd_steps: int = 30
    cd_step_size: float = 0.2
    cd_noise: float = 0.4472135954999579
    cd_box_margin: float = 0.5
    seeds: tuple = (0,)
    # metrics
    kl_direction: str = "true_pred"
    # output (never embedded in reports)
    out_dir: str = "runs"


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _int_list(raw: str) -> tuple:
    return tuple(int(v.strip()) for v in raw.split(",") if v.strip())


def _float_list(raw: str) -> tuple:
    return tuple(float(v.strip()) for v in raw.split(",") if v.strip())


# dotted key -> (dataclass field, parser)
KEY_SPECS = {
    "data.generator": ("generator", str),
    "data.n": ("n", int),
    "data.noise_sd": ("noise_sd", float),
    "data.theta_degrees": ("theta_degrees", float),
    "data.seed": ("data_seed", int),
    "data.classes": ("classes", int),
    "data.mean_shift": ("mean_shift", _float_list),
    "data.source_csv": ("source_csv", str),
    "data.target_csv": ("target_csv", str),
    "data.csv_k": ("csv_k", int),
    "model.hidden": ("hidden", _int_list),
    "train.mode": ("mode", str),
    "train.rounds": ("rounds", int),
    "train.alpha": ("alpha", float),
    "train.epsilon": ("epsilon", float),
    "train.portion.start": ("portion_start", float),
    "train.portion.step": ("portion_step", float),
    "train.portion.max": ("portion_max", float),
    "train.lr": ("lr", float),
    "train.epochs_per_round": ("epochs_per_round", int),
    "train.batch_size": ("batch_size", int),
    "train.weight_decay": ("weight_decay", float),
    "train.momentum": ("momentum", float),
    "train.source_epochs": ("source_epochs", int),
    "train.source_lr": ("source_lr", float),
    "train.lambda_schedule": ("lambda_schedule", str),
    "train.step2_energy": ("step2_energy", _parse_bool),
    "train.use_cd": ("use_cd", _parse_bool),
    "train.cd_steps": ("cd_steps", int),
    "train.cd_step_size": ("cd_step_size", float),
    "train.cd_noise": ("cd_noise", float),
    "train.cd_box_margin": ("cd_box_margin", float),
    "train.seeds": ("seeds", _int_list),
    "metrics.kl_direction": ("kl_direction", str),
    "out.dir": ("out_dir", str),
}

_FIELD_TO_KEY = {spec[0]: key for key, spec in KEY_SPECS.items()}


def parse_config_text(text: str) -> dict:
    """Parse "key = value" lines into a {dotted key: raw string} dict."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ParseError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in KEY_SPECS:
            raise ParseError(f"line {lineno}: unknown key {key!r}")
        values[key] = raw.strip()
    return values


def apply_key_values(config: ExperimentConfig, values: dict) -> ExperimentConfig:
    updates = {}
    for key, raw in values.items():
        if key not in KEY_SPECS:
            raise ConfigError(f"unknown key {key!r}")
        name, parser = KEY_SPECS[key]
        try:
            updates[name] = parser(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    return replace(config, **updates)


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then the config file, then CLI overrides; validated."""
    config = ExperimentConfig()
    if path is not None:
        config = apply_key_values(config, parse_config_text(Path(path).read_text(encoding="utf-8")))
    if overrides:
        config = apply_key_values(config, {k: str(v) for k, v in overrides.items()})
    validate_config(config)
    return config


def validate_config(config: ExperimentConfig) -> None:
    if config.generator not in ("two_moons", "gaussian_shift", "csv"):
        raise ConfigError(f"unknown generator {config.generator!r}")
    if config.mode not in MODES:
        raise ConfigError(f"unknown mode {config.mode!r}; choose one of {MODES}")
    if config.rounds < 1:
        raise ConfigError("train.rounds must be >= 1")
    if not config.seeds:
        raise ConfigError("train.seeds must name at least one seed")
    if not 0.0 < config.portion_start <= 1.0:
        raise ConfigError("train.portion.start must be in (0, 1]")
    if config.alpha < 0:
        raise ConfigError("train.alpha must be >= 0")
    if not 0.0 <= config.epsilon < 1.0:
        raise ConfigError("train.epsilon must be in [0, 1)")
    if config.lambda_schedule not in ("recompute", "fixed"):
        raise ConfigError(f"unknown lambda schedule {config.lambda_schedule!r}")
    if config.kl_direction not in ("true_pred", "pred_true"):
        raise ConfigError(f"unknown KL direction {config.kl_direction!r}")
    if config.generator == "csv":
        for label, path in (("data.source_csv", config.source_csv),
                            ("data.target_csv", config.target_csv)):
            if not path:
                raise ConfigError(f"{label} is required for the csv generator")
            if not Path(path).exists():
                raise ConfigError(f"{label}: no such file {path!r}")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def embed_config(config: ExperimentConfig, seed: int | None = None) -> dict:
    """Flat, fully resolved key/value view for report embedding.

    ``out.dir`` is dropped (reports must not depend on where they were
    written); when ``seed`` is given the seed list collapses to just that
    seed so the embedded config replays a single run.
    """
    resolved = config if seed is None else replace(config, seeds=(int(seed),))
    out = {}
    for f in fields(resolved):
        if f.name == "out_dir":
            continue
        out[_FIELD_TO_KEY[f.name]] = _format_value(getattr(resolved, f.name))
    return out


def config_from_embedded(values: dict, out_dir: str = "runs") -> ExperimentConfig:
    """Rebuild a runnable config from a report's embedded key/value dict."""
    config = apply_key_values(ExperimentConfig(out_dir=out_dir), values)
    validate_config(config)
    return config
