"""Run configuration: defaults, the key-value config file, flag overrides.

Defaults follow the reference operating point where one exists (four
memory slots, 15 decode steps, Adam at 1e-3 with 5e-5 weight decay, 50
epochs) with desk-scale dimensions. A config file is plain ``key = value``
lines; command-line flags win over file values.
"""

from dataclasses import dataclass, fields

from .errors import ConfigError, ParseError
from .memory import ADDRESSING_MODES


@dataclass
class RunConfig:
    hidden_size: int = 64
    embed_size: int = 64
    image_dim: int = 32
    key_dim: int = 32
    n_det: int = 4
    max_steps: int = 15
    lr: float = 1e-3
    weight_decay: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 16
    seed: int = 7
    min_count: int = 1
    clip_norm: float = 5.0
    addressing: str = "softmax"
    key_projection: bool = False
    bptt_through_query: bool = True
    image_to_cell: bool = False
    train_mode: str = "dnoc"
    dataset: str = "data/dataset.jsonl"
    vocab: str = "data/vocab.txt"
    manifest: str = "data/split.json"
    world: str = ""
    checkpoint: str = "out/model.ckpt"
    report: str = "out/report.json"
    train_log: str = "out/train.log"


_BOOL_WORDS = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _convert(name: str, kind, raw: str):
    if kind is bool:
        try:
            return _BOOL_WORDS[raw.lower()]
        except KeyError:
            raise ConfigError(f"config: {name} expects true/false, got {raw!r}") from None
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"config: {name} expects {kind.__name__}, got {raw!r}") from None


def _field_types() -> dict[str, type]:
    by_name = {"int": int, "float": float, "str": str, "bool": bool}
    return {f.name: (f.type if isinstance(f.type, type) else by_name[f.type])
            for f in fields(RunConfig)}


def load_config(path) -> RunConfig:
    """Parse a key-value config file into a RunConfig."""
    known = _field_types()
    values = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ParseError(f"config: line {line_no}: expected 'key = value'")
            key, _, value = stripped.partition("=")
            key = key.strip().replace("-", "_")
            if key not in known:
                raise ParseError(f"config: line {line_no}: unknown key {key!r}")
            values[key] = _convert(key, known[key], value.strip())
    return RunConfig(**values)


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Return a config with non-None override values applied (flags win)."""
    known = {f.name for f in fields(RunConfig)}
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in known:
            raise ConfigError(f"config: unknown option {key!r}")
        setattr(cfg, key, value)
    return cfg


def validate_config(cfg: RunConfig) -> RunConfig:
    for name in ("hidden_size", "embed_size", "image_dim", "key_dim", "n_det",
                 "epochs", "batch_size", "min_count"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"config: {name} must be >= 1, got {getattr(cfg, name)}")
    if cfg.max_steps < 0:
        raise ConfigError(f"config: max_steps must be >= 0, got {cfg.max_steps}")
    if cfg.lr <= 0:
        raise ConfigError(f"config: lr must be > 0, got {cfg.lr}")
    if cfg.weight_decay < 0:
        raise ConfigError(f"config: weight_decay must be >= 0, got {cfg.weight_decay}")
    if cfg.addressing not in ADDRESSING_MODES:
        raise ConfigError(f"config: addressing must be one of {ADDRESSING_MODES}, got {cfg.addressing!r}")
    if cfg.train_mode not in ("dnoc", "no-placeholder"):
        raise ConfigError(f"config: train_mode must be dnoc or no-placeholder, got {cfg.train_mode!r}")
    return cfg
