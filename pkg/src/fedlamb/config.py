"""Experiment configuration: a flat key=value text format.

One `key = value` pair per line; `#` starts a comment. Lists are
comma-separated. The full schema with defaults is in KEY_TYPES below and
documented in the README.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .federation import PROTOCOLS
from .models import ACTIVATIONS, KINDS
from .optim import IDENTITY, ScalingFn, clipped


class ConfigError(ValueError):
    """A config file failed to parse or validate."""


@dataclass
class ExperimentConfig:
    # protocol and model
    protocol: str = ""
    model: str = "mlp"
    input_dim: int = 0
    hidden: tuple[int, ...] = (200,)
    classes: int = 10
    activation: str = "relu"
    # data source: exactly one of blobs / csv
    data: str = "blobs"
    csv_train: str = ""
    csv_test: str = ""
    train_per_class: int = 500
    test_per_class: int = 100
    separation: float = 6.0
    noise: float = 1.5
    # federation shape
    n_clients: int = 1
    participation: float = 1.0
    rounds: int = 1
    local_epochs: int = 1
    batch_size: int = 64
    iid: bool = True
    classes_per_client: int = 2
    reshard_each_round: bool = False
    # hyperparameters
    alpha: float = 0.01
    eta_local: float = 0.0
    eta_global: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    lam: float = 0.0
    eps: float = 1e-8
    lazy_period: int = 1
    milestones: tuple[int, ...] = ()
    lr_factor: float = 0.1
    momentum: float = 0.0
    phi: str = "identity"
    # run control
    seed: int = 0
    repeat: int = 1
    workers: int = 1
    out: str = ""

    def validate(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"key 'protocol': unknown protocol {self.protocol!r}")
        if self.model not in KINDS:
            raise ConfigError(f"key 'model': unknown model kind {self.model!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"key 'activation': unknown activation {self.activation!r}")
        if self.data not in ("blobs", "csv"):
            raise ConfigError(f"key 'data': must be 'blobs' or 'csv'")
        if self.data == "csv" and not (self.csv_train and self.csv_test):
            raise ConfigError("key 'csv_train'/'csv_test': required when data = csv")
        if self.input_dim < 1:
            raise ConfigError("key 'input_dim': must be >= 1")
        for key in ("n_clients", "rounds", "local_epochs", "batch_size",
                    "classes", "repeat", "workers", "lazy_period"):
            if getattr(self, key) < 1:
                raise ConfigError(f"key '{key}': must be >= 1")
        if not 0 < self.participation <= 1:
            raise ConfigError("key 'participation': must be in (0, 1]")
        if self.protocol == "adp-fed":
            if not (self.eta_local > 0 and self.eta_global > 0):
                raise ConfigError("key 'eta_local'/'eta_global': required for adp-fed")
        elif not self.alpha > 0:
            raise ConfigError("key 'alpha': must be positive")
        if not self.eps > 0:
            raise ConfigError("key 'eps': must be positive")
        self.scaling_fn()  # validates phi syntax
        return self

    def scaling_fn(self) -> ScalingFn:
        if self.phi == "identity":
            return IDENTITY
        if self.phi.startswith("clipped:"):
            parts = self.phi.split(":")
            if len(parts) != 3:
                raise ConfigError("key 'phi': expected 'clipped:<lo>:<hi>'")
            try:
                return clipped(float(parts[1]), float(parts[2]))
            except ValueError as exc:
                raise ConfigError(f"key 'phi': {exc}") from exc
        raise ConfigError(f"key 'phi': unknown scaling {self.phi!r}")


_INT_TUPLE_KEYS = {"hidden", "milestones"}
_BOOL_KEYS = {"iid", "reshard_each_round"}


def _parse_value(key: str, raw: str, kind):
    raw = raw.strip()
    try:
        if key in _INT_TUPLE_KEYS:
            return tuple(int(p) for p in raw.split(",") if p.strip()) if raw else ()
        if key in _BOOL_KEYS:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: {exc}") from exc


def parse_config(path) -> ExperimentConfig:
    """Parse and validate a key=value config file."""
    spec_fields = {f.name: f.type for f in fields(ExperimentConfig)}
    kinds = {
        name: (int if t in ("int",) else float if t == "float" else str)
        for name, t in spec_fields.items()
    }
    cfg = ExperimentConfig()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in spec_fields:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            setattr(cfg, key, _parse_value(key, raw, kinds[key]))
    return cfg.validate()


def write_config(cfg: ExperimentConfig, path):
    """Inverse of parse_config: one key = value line per field."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for f in fields(ExperimentConfig):
            value = getattr(cfg, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            fh.write(f"{f.name} = {value}\n")
