"""Run configuration and the flat ``key=value`` config file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Any

# search spaces used for hyperparameter sweeps
GRIDS: dict[str, tuple] = {
    "learning_rate": (1e-3, 5e-4, 1e-4, 1e-5),
    "lambda2": (1e-2, 1e-3, 1e-4, 1e-5, 1e-6),
    "lambda1": (2e-2, 2e-3, 2e-4, 2e-5, 2e-6),
    "tau": (0.1, 0.25, 0.5, 0.75, 1.0),
    "layers": (1, 2, 3, 4),
}


class ConfigKeyError(KeyError):
    """Unknown or malformed configuration key."""

    def __str__(self) -> str:
        return str(self.args[0])


@dataclass(frozen=True)
class TrainingConfig:
    dim: int = 32
    layers: int = 2
    K: int = 8
    alpha: float = 0.5
    tau: float = 0.5
    lambda1: float = 2e-2
    lambda2: float = 1e-4
    learning_rate: float = 1e-3
    batch_size: int = 1024
    epochs: int = 100
    seed: int = 0
    no_sa: bool = False
    no_dh: bool = False
    no_ssl: bool = False
    phi: str = "multiply"
    activation: str = "tanh"
    stare_variant: bool = False
    # reference configuration: drop the hypergraph branch entirely (plain LightGCN / MF)
    hypergraph: bool = True
    include_self: bool = False
    include_positive: bool = False
    contrast_scope: str = "batch"
    leaky_slope: float = 0.2
    eval_every: int = 1
    patience: int = 20
    topk: int = 20
    groups: int = 4
    mad_source: str = "final"

    def __post_init__(self):
        checks = [
            (self.dim >= 1, "dim must be >= 1"),
            (0 <= self.layers <= max(GRIDS["layers"]), "layers must lie in [0, 4]"),
            (self.K >= 1, "K must be >= 1"),
            (0.0 <= self.alpha <= 1.0, "alpha must lie in [0, 1]"),
            (min(GRIDS["tau"]) <= self.tau <= max(GRIDS["tau"]), "tau outside [0.1, 1.0]"),
            (0.0 <= self.lambda1 <= max(GRIDS["lambda1"]), "lambda1 outside [0, 2e-2]"),
            (0.0 <= self.lambda2 <= max(GRIDS["lambda2"]), "lambda2 outside [0, 1e-2]"),
            (0.0 <= self.learning_rate <= max(GRIDS["learning_rate"]), "learning_rate outside [0, 1e-3]"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.phi in ("multiply", "subtract", "rotate"), f"unknown phi {self.phi!r}"),
            (self.activation in ("tanh", "leaky_relu", "identity"), f"unknown activation {self.activation!r}"),
            (self.contrast_scope in ("batch", "full"), f"unknown contrast_scope {self.contrast_scope!r}"),
            (self.mad_source in ("final", "last"), f"unknown mad_source {self.mad_source!r}"),
            (self.groups >= 2, "groups must be >= 2"),
            (self.eval_every >= 1, "eval_every must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ValueError(message)
        if self.phi == "rotate" and self.dim % 2:
            raise ValueError("phi=rotate needs an even dim")

    @property
    def effective_lambda1(self) -> float:
        return 0.0 if self.no_ssl or not self.hypergraph else self.lambda1

    @property
    def variant(self) -> str:
        return "stare" if self.stare_variant else "head_mean"

    def replace(self, **changes) -> "TrainingConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        return "".join(f"{k}={_format(v)}\n" for k, v in self.to_dict().items())

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "TrainingConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigKeyError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(known[key].type, raw, key)
        return cls(**kwargs)


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(type_name, raw, key: str):
    if not isinstance(raw, str):
        return raw
    try:
        if type_name in ("bool", bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if type_name in ("int", int):
            return int(raw)
        if type_name in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigKeyError(f"bad value {raw!r} for config key {key!r}") from None
    return raw.strip()


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigKeyError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path, overrides: dict[str, Any] | None = None) -> TrainingConfig:
    values: dict[str, Any] = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    values.update(overrides or {})
    return TrainingConfig.from_dict(values)
