"""Flat key=value run configuration shared by every command."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .backtranslator import BTConfig
from .paraphraser import ParaphraserConfig

# config-file keys that are Python keywords
ALIASES = {"lambda": "lam"}


class ConfigError(ValueError):
    def __init__(self, message: str, unknown: list[str] | None = None):
        super().__init__(message)
        self.unknown = unknown or []


@dataclass
class RunConfig:
    # data
    dataset: str = "quora"  # quora | mscoco | text
    data_path: str = ""
    data_target_path: str = ""  # second aligned file in text mode
    valid_size: int = 3000
    test_size: int = 3000
    vocab_size: int = 25000  # content tokens, specials not counted
    max_len: int = 20
    # paraphraser
    d_e: int = 300
    d_h: int = 512
    d_z: int = 128
    layers: int = 2
    dropout: float = 0.0
    # back-translator
    bt_layers: int = 3
    bt_model_dim: int = 450
    bt_heads: int = 9
    bt_ff_dim: int = 0  # 0 -> 4 * bt_model_dim
    bt_dropout: float = 0.1
    # training
    lam: float = 1.0
    epochs: int = 30
    batch_size: int = 50
    tau_max: float = 5.0
    tau_direction: str = "as-printed"  # as-printed | increasing
    rounds_trained: int = 2
    bt_rounds: str = "all"  # all | first
    lr: float = 1e-4
    optimizer: str = "adam"  # adam | sgd
    clip_norm: float = 5.0
    seed: int = 0
    kl_weight: float = 1.0
    kl_anneal_steps: int = 0
    first_word_mode: str = "replace"  # replace | add | off
    steps_per_epoch: int = 0  # 0 -> full pass over the training split
    decode_max_len: int = 21
    # generation
    rounds: int = 10
    sample_decode: bool = False

    def __post_init__(self):
        if self.rounds_trained < 1:
            raise ConfigError("rounds_trained must be >= 1")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.tau_direction not in ("as-printed", "increasing"):
            raise ConfigError(f"bad tau_direction {self.tau_direction!r}")
        if self.bt_rounds not in ("all", "first"):
            raise ConfigError(f"bad bt_rounds {self.bt_rounds!r}")
        if self.first_word_mode not in ("replace", "add", "off"):
            raise ConfigError(f"bad first_word_mode {self.first_word_mode!r}")

    def paraphraser_config(self, vocab_size: int) -> ParaphraserConfig:
        return ParaphraserConfig(vocab_size, self.d_e, self.d_h, self.d_z, self.layers, self.dropout)

    def bt_config(self, vocab_size: int) -> BTConfig:
        return BTConfig(
            vocab_size,
            layers=self.bt_layers,
            model_dim=self.bt_model_dim,
            heads=self.bt_heads,
            ff_dim=self.bt_ff_dim or None,
            dropout=self.bt_dropout,
        )

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["lambda"] = out.pop("lam")
        return out

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def keys(cls) -> list[str]:
        inv = {v: k for k, v in ALIASES.items()}
        return [inv.get(f.name, f.name) for f in fields(cls)]

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "RunConfig":
        return cls(**coerce(values))


def _convert(name: str, raw: Any) -> Any:
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: not a boolean: {raw!r}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    return raw


def coerce(values: dict[str, Any]) -> dict[str, Any]:
    names = {f.name for f in fields(RunConfig)}
    out, unknown = {}, []
    for key, raw in values.items():
        name = ALIASES.get(key, key.replace("-", "_"))
        if name not in names:
            unknown.append(key)
            continue
        out[name] = _convert(name, raw)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}", unknown)
    return out


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """File values first, then ``overrides`` (the CLI flags) on top."""
    values: dict[str, Any] = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    merged = coerce(values)
    merged.update(coerce(overrides or {}))
    return RunConfig(**merged)


def dump_config(config: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in config.to_dict().items())
