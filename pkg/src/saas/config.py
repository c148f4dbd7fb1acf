"""Run configuration files (TOML).

Layout::

    seed = 7
    output_dir = "saas_out"

    [data]          # DataConfig
    dataset = "two_moons"

    [saas]          # SaasConfig (master_seed comes from the top-level seed)
    [saas.augmentation]
    [saas.phase2]

    [experiment]    # ExperimentConfig

Only ``seed`` and ``data.dataset`` are required.  Unknown keys are errors.
"""
from __future__ import annotations

import sys
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .data import DataConfig
from .saas_core import SaasConfig


class ConfigError(Exception):
    code = "config"


class ConfigNotFoundError(ConfigError):
    code = "missing-file"


class ConfigParseError(ConfigError):
    code = "parse-error"


class ConfigValueError(ConfigError):
    code = "constraint"


@dataclass
class ExperimentConfig:
    n_seeds: int = 3
    fractions: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    corruption_n: int = 800  # dataset size for corruption-speed; 0 keeps data.n
    epochs_budget: int = 10
    corruption_lr: float = 0.1
    corruption_momentum: float = 0.0
    corruption_mode: str = "uniform"
    M_list: list = field(default_factory=lambda: [1, 10, 40])
    probe_epochs: int = 10
    probe_lr: float = 0.1
    unlabeled_counts: list = field(default_factory=lambda: [50, 200, 800])

    def validate(self):
        if self.n_seeds < 1:
            raise ValueError("n_seeds: must be >= 1")
        if any(not 0 <= f <= 1 for f in self.fractions):
            raise ValueError("fractions: every entry must be in [0, 1]")
        if self.corruption_mode not in ("wrong_class", "uniform"):
            raise ValueError("corruption_mode: must be 'wrong_class' or 'uniform'")
        if not self.M_list or any(m < 0 for m in self.M_list):
            raise ValueError("M_list: must be a non-empty list of counts >= 0")
        if self.probe_epochs < 2:
            raise ValueError("probe_epochs: must be >= 2")
        if any(c < 0 for c in self.unlabeled_counts) or not self.unlabeled_counts:
            raise ValueError("unlabeled_counts: must be a non-empty list of counts >= 0")
        for key in ("epochs_budget", "corruption_n"):
            if getattr(self, key) < 0:
                raise ValueError(f"{key}: must be >= 0")
        if self.corruption_lr <= 0 or self.probe_lr <= 0:
            raise ValueError("corruption_lr/probe_lr: must be > 0")
        if not 0 <= self.corruption_momentum < 1:
            raise ValueError("corruption_momentum: must be in [0, 1)")


@dataclass
class RunConfigFile:
    seed: int
    data: DataConfig
    saas: SaasConfig = field(default_factory=SaasConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    output_dir: str = "saas_out"

    def saas_config(self, seed: int | None = None) -> SaasConfig:
        from dataclasses import replace
        return replace(self.saas, master_seed=self.seed if seed is None else seed)


_SKIP = {SaasConfig: {"master_seed"}}


def _coerce(value, hint, key):
    origin = typing.get_origin(hint)
    if origin is typing.Union or type(hint).__name__ == "UnionType":
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        return _coerce(value, args[0], key)
    if is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigValueError(f"{key}: expected a table")
        return _build(hint, value, key + ".")
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigValueError(f"{key}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigValueError(f"{key}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigValueError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigValueError(f"{key}: expected a string, got {value!r}")
        return value
    if hint is list or origin is list:
        if not isinstance(value, list):
            raise ConfigValueError(f"{key}: expected a list, got {value!r}")
        return value
    return value


def _build(cls, table: dict, prefix: str = ""):
    hints = typing.get_type_hints(cls)
    allowed = {f.name for f in fields(cls)} - _SKIP.get(cls, set())
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigValueError(f"{prefix}{unknown[0]}: unknown key")
    kwargs = {k: _coerce(v, hints[k], prefix + k) for k, v in table.items()}
    try:
        return cls(**kwargs)
    except TypeError as err:
        raise ConfigValueError(f"{prefix.rstrip('.') or 'config'}: {err}") from err
    except ValueError as err:
        raise ConfigValueError(f"{prefix}{err}") from err


def config_from_dict(doc: dict) -> RunConfigFile:
    if "seed" not in doc:
        raise ConfigValueError("seed: required key missing")
    if "dataset" not in doc.get("data", {}):
        raise ConfigValueError("data.dataset: required key missing")
    cfg = _build(RunConfigFile, doc)
    if not 0 <= cfg.seed < 2**64:
        raise ConfigValueError("seed: must be in [0, 2^64)")
    for prefix, part in (("data.", cfg.data), ("saas.", cfg.saas), ("experiment.", cfg.experiment)):
        try:
            part.validate()
        except ValueError as err:
            raise ConfigValueError(f"{prefix}{err}") from err
    return cfg


def parse_config_text(text: str) -> RunConfigFile:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigParseError(f"invalid TOML: {err}") from err
    return config_from_dict(doc)


def parse_config(path) -> RunConfigFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as err:
        raise ConfigNotFoundError(f"config file not found: {path}") from err
    except OSError as err:
        raise ConfigNotFoundError(f"cannot read config file {path}: {err}") from err
    try:
        return parse_config_text(text)
    except ConfigParseError as err:
        raise ConfigParseError(f"{path}: {err}") from err


def _drop_none(obj):
    if isinstance(obj, dict):
        return {k: _drop_none(v) for k, v in obj.items() if v is not None}
    return obj


def config_to_dict(cfg: RunConfigFile) -> dict:
    doc = _drop_none(asdict(cfg))
    doc["saas"].pop("master_seed", None)
    return doc


def dump_config(cfg: RunConfigFile) -> str:
    return tomli_w.dumps(config_to_dict(cfg))
