"""Flat ``key = value`` experiment configuration."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Union

from .data import SplitMode
from .mechanism import ContractError, MechanismParams
from .mf import HyperParams
from .simulation import Mode

DATA_DIR_ENV = "FEDCF_DATA_DIR"
FULL = "full"

Size = Union[int, str]


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass(frozen=True)
class ExperimentConfig:
    data_path: str = "ratings.csv"
    min_interactions: int = 60
    n_users: Size = FULL
    n_items: Size = FULL
    n_factors: int = 5
    reg: float = 1e-6
    learning_rate: float = 1e-3
    confidence_alpha: float = 40.0
    epochs: int = 20
    inner_steps: int = 20
    epsilon: float = 2.5
    k: int = 100
    split_mode: str = SplitMode.RANDOM.value
    n_splits: int = 1
    ks: tuple[int, ...] = (2, 5, 10)
    seed: int = 0
    output_path: str = "trace.csv"
    mode: str = Mode.LDP.value

    def __post_init__(self):
        try:
            self.hp
        except ValueError as exc:
            raise ConfigError(str(exc), _key_for(str(exc))) from None
        for key in ("n_users", "n_items"):
            value = getattr(self, key)
            if value != FULL and (not isinstance(value, int) or value < 1):
                raise ConfigError(f"must be a positive count or {FULL!r}", key)
        if self.min_interactions < 1:
            raise ConfigError("must be >= 1", "min_interactions")
        if self.n_splits < 1:
            raise ConfigError("must be >= 1", "n_splits")
        if not self.ks or list(self.ks) != sorted(set(self.ks)) or self.ks[0] < 1:
            raise ConfigError("must be distinct positive counts in ascending order", "ks")
        try:
            SplitMode.parse(self.split_mode)
        except ValueError as exc:
            raise ConfigError(str(exc), "split_mode") from None
        try:
            Mode(self.mode)
        except ValueError:
            raise ConfigError(f"unknown mode {self.mode!r}", "mode") from None

    @property
    def hp(self) -> HyperParams:
        return HyperParams(
            n_factors=self.n_factors,
            reg=self.reg,
            learning_rate=self.learning_rate,
            confidence_alpha=self.confidence_alpha,
            epochs=self.epochs,
            inner_steps=self.inner_steps,
            epsilon=self.epsilon,
            updates_per_epoch=self.k,
        )

    def mechanism(self, n_items: int) -> MechanismParams:
        return MechanismParams(self.epsilon, n_items, self.n_factors, self.k)

    @property
    def user_budget(self) -> float:
        """Composed user-level epsilon per epoch (``k * epsilon``)."""
        return self.k * self.epsilon

    def resolved_data_path(self) -> Path:
        path = Path(self.data_path).expanduser()
        if not path.is_absolute() and not path.exists() and os.environ.get(DATA_DIR_ENV):
            path = Path(os.environ[DATA_DIR_ENV]) / path
        return path

    def replace(self, **changes) -> ExperimentConfig:
        return replace(self, **changes)


_HP_KEYS = {
    "n_factors": "n_factors",
    "reg": "reg",
    "learning_rate": "learning_rate",
    "confidence_alpha": "confidence_alpha",
    "epochs": "epochs",
    "inner_steps": "inner_steps",
    "epsilon": "epsilon",
    "updates_per_epoch": "k",
}


def _key_for(message: str) -> str | None:
    for hp_name, key in _HP_KEYS.items():
        if message.startswith(hp_name):
            return key
    return None


FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def parse_value(key: str, raw: str):
    if key not in FIELD_TYPES:
        raise ConfigError("unknown key", key)
    raw = raw.strip()
    default = getattr(ExperimentConfig, key)
    try:
        if key in ("n_users", "n_items"):
            return FULL if raw.lower() == FULL else int(raw)
        if key == "ks":
            return tuple(int(p) for p in raw.split(",") if p.strip())
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r}", key) from None
    return raw


def loads(text: str) -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, raw = (p.strip() for p in line.split("=", 1))
        try:
            values[key] = parse_value(key, raw)
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], key, lineno) from None
    return ExperimentConfig(**values)


def load_config(path: str | Path) -> ExperimentConfig:
    return loads(Path(path).read_text(encoding="utf-8"))


def dumps(config: ExperimentConfig) -> str:
    lines = []
    for key, value in asdict(config).items():
        if key == "ks":
            value = ",".join(str(k) for k in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def apply_overrides(config: ExperimentConfig, overrides: dict[str, str | None]) -> ExperimentConfig:
    """Apply ``--key value`` style overrides given as raw strings."""
    changes = {k: parse_value(k, v) for k, v in overrides.items() if v is not None}
    try:
        return config.replace(**changes)
    except ContractError as exc:
        raise ConfigError(str(exc)) from None
