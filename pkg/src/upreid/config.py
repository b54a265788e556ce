"""Run configuration and the plain-text config grammar.

Grammar: one ``key = value`` per line; ``#`` starts a comment; blank lines are
ignored. Tuples are comma-separated (``output_size = 64, 32``). Keys are the
fields of :class:`TrainConfig` plus those of
:class:`~upreid.augmentation.AugmentConfig` (augmentation keys are flat).
"""
import dataclasses
import os
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from upreid.augmentation import AugmentConfig
from upreid.encoder import EncoderConfig
from upreid.losses import LossWeights
from upreid.mining import resolve_kind


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    M: int = 8
    N: int = 4096
    D: int = 128
    m: float = 0.9
    lambda_g: float = 0.8
    lambda_p: float = 0.2
    lambda_c: float = 1.0
    tau1: float = 0.1
    tau2: float = 0.1
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    steps: int = 300
    seed: int = 0
    mining: str = "horizontally_symmetric"
    output_dir: str = "runs/pretrain"
    channels: tuple[int, ...] = (16, 32, 64)
    hidden_dim: int = 0  # 0 -> 2 * D
    dtype: str = "float32"
    # data source: an image directory, or the synthetic generator when empty
    data_dir: str = ""
    data_layout: str = "flat"
    synthetic_ids: int = 20
    synthetic_per_id: int = 10
    symmetry_noise: float = 0.0
    holdout: int = 0
    aug: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.batch_size > self.N:
            raise ConfigError(f"batch_size {self.batch_size} exceeds queue capacity N={self.N}")
        if self.M < 2 or self.M % 2:
            raise ConfigError(f"M must be even and >= 2, got {self.M}")
        if not 0.0 <= self.m < 1.0:
            raise ConfigError(f"m must be in [0, 1), got {self.m}")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")
        try:
            object.__setattr__(self, "mining", resolve_kind(self.mining))
            self.weights
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def weights(self) -> LossWeights:
        return LossWeights(lambda_g=self.lambda_g, lambda_p=self.lambda_p, tau1=self.tau1,
                           tau2=self.tau2, lambda_c=self.lambda_c)

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(channels=tuple(self.channels), embedding_dim=self.D,
                             hidden_dim=self.hidden_dim or None)

    def replace(self, **changes) -> "TrainConfig":
        aug_keys = set(AugmentConfig.keys())
        aug_changes = {k: v for k, v in changes.items() if k in aug_keys}
        rest = {k: v for k, v in changes.items() if k not in aug_keys}
        if aug_changes:
            rest["aug"] = dataclasses.replace(rest.get("aug", self.aug), **aug_changes)
        return dataclasses.replace(self, **rest)

    def flat(self) -> dict:
        """All keys as a flat mapping, augmentation keys inlined."""
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "aug"}
        out.update({k: getattr(self.aug, k) for k in AugmentConfig.keys()})
        return out


def tiny_config(**changes) -> TrainConfig:
    """Smallest configuration used for gradient checks (double precision)."""
    base = TrainConfig(M=4, N=16, D=8, batch_size=4, channels=(4, 8, 8), hidden_dim=16,
                       dtype="float64", steps=1, aug=AugmentConfig(output_size=(32, 16)))
    return base.replace(**changes)


def _field_types() -> dict:
    types = {f.name: f.type for f in fields(TrainConfig) if f.name != "aug"}
    types.update({f.name: f.type for f in fields(AugmentConfig)})
    return types


def coerce(key: str, raw):
    """Convert a string to the declared type of config ``key``."""
    types = _field_types()
    if key not in types:
        raise ConfigError(f"unknown config key '{key}'")
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(raw, list) else raw
    typ = types[key]
    try:
        if typing.get_origin(typ) is tuple:
            conv = typing.get_args(typ)[0]
            return tuple(conv(p.strip()) for p in raw.split(",") if p.strip())
        if typ in (int, float):
            return typ(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for '{key}': {raw!r}") from exc


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {line!r}")
        key = key.strip()
        if key in values:
            raise ConfigError(f"{origin}:{lineno}: duplicate key '{key}'")
        values[key] = coerce(key, value.strip())
    return values


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def build_config(file_values: dict, overrides: dict | None = None, log=None) -> TrainConfig:
    """File values, then overrides; every override of a file value is reported via ``log``."""
    values = dict(file_values)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        value = coerce(key, value)
        if key in values and values[key] != value and log is not None:
            log(f"flag overrides config: {key} = {values[key]!r} -> {value!r}")
        values[key] = value
    if "seed" not in values and os.environ.get("UPREID_SEED"):
        values["seed"] = coerce("seed", os.environ["UPREID_SEED"])
    try:
        return TrainConfig().replace(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def render_config(cfg: TrainConfig) -> str:
    lines = []
    for key, value in cfg.flat().items():
        if isinstance(value, tuple):
            value = ", ".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
