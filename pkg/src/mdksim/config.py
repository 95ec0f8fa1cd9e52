"""Model / hardware / run configuration and the per-node shard plan.

All configuration objects are frozen dataclasses. ``load_config`` reads the
YAML document format (sections ``model``, ``hardware``, ``run``, ``flags``)
and rejects unknown keys so a typo'd calibration knob fails loudly instead
of silently falling back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass(frozen=True)
class ModelConfig:
    # GPT-2-medium (345M) shape
    n_layers: int = 24
    l_embed: int = 1024
    n_heads: int = 16
    head_dim: int | None = None
    ffn_dim: int = 4096
    vocab_size: int = 50257
    max_seq_len: int = 1024

    def __post_init__(self):
        if self.head_dim is None and self.n_heads > 0:
            object.__setattr__(self, "head_dim", self.l_embed // self.n_heads)


@dataclass(frozen=True)
class HardwareConfig:
    """Per-node accelerator parameters plus the ring network.

    Defaults are the shipped calibration. ``mha_parallelism`` of ``None``
    means ``n_group`` MACs per key/value HBM channel.
    """

    n_nodes: int = 1
    n_channel: int = 16
    n_group: int = 32
    freq_hz: float = 285e6
    hbm_bw_per_channel: float = 8.49e9
    net_bw: float = 8.49e9
    net_hop_latency: float = 0.2e-6
    datapack_bytes: int = 32
    mp_fill_cycles: int = 16
    mha_fill_cycles: int = 8
    mha_kv_channels: int = 8
    mha_parallelism: int | None = None
    softmax_parallelism: int = 16
    ln_parallelism: int = 32
    ln_parallelism_unfused: int = 2
    aux_parallelism: int = 1

    @property
    def mha_macs(self) -> int:
        if self.mha_parallelism is not None:
            return self.mha_parallelism
        return self.n_group * self.mha_kv_channels

    @property
    def mp_block_rows(self) -> int:
        """Output rows produced by one pass of all MAC units."""
        return self.n_channel * self.n_group


@dataclass(frozen=True)
class Flags:
    fused_ln_res: bool = True
    headwise_pipeline: bool = True
    sync_overlap: bool = True

    @classmethod
    def all_off(cls) -> "Flags":
        return cls(False, False, False)


@dataclass(frozen=True)
class RunConfig:
    prompt_len: int = 64
    gen_len: int = 512
    seed: int = 0
    weights: str | None = None


@dataclass(frozen=True)
class SimConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    hardware: HardwareConfig = field(default_factory=HardwareConfig)
    run: RunConfig = field(default_factory=RunConfig)
    flags: Flags = field(default_factory=Flags)

    def replace(self, **sections: Mapping[str, Any]) -> "SimConfig":
        """Return a copy with selected fields of the named sections overridden."""
        out = {}
        for name in ("model", "hardware", "run", "flags"):
            cur = getattr(self, name)
            upd = sections.get(name)
            out[name] = dataclasses.replace(cur, **upd) if upd else cur
        return SimConfig(**out)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# validation

def validate_config(model: ModelConfig, hw: HardwareConfig) -> list[str]:
    """Return every invariant violation; an empty list means the pair is valid."""
    errors: list[str] = []
    for name in ("n_layers", "l_embed", "n_heads", "ffn_dim", "vocab_size", "max_seq_len"):
        if getattr(model, name) < 1:
            errors.append(f"model.{name} must be >= 1")
    if model.head_dim is None or model.head_dim < 1:
        errors.append("model.head_dim must be >= 1")
    elif model.n_heads * model.head_dim != model.l_embed:
        errors.append(
            f"model.n_heads * head_dim = {model.n_heads * model.head_dim} != l_embed = {model.l_embed}"
        )

    for name in ("n_channel", "n_group", "datapack_bytes", "mha_kv_channels",
                 "softmax_parallelism", "ln_parallelism", "ln_parallelism_unfused",
                 "aux_parallelism"):
        if getattr(hw, name) < 1:
            errors.append(f"hardware.{name} must be >= 1")
    for name in ("mp_fill_cycles", "mha_fill_cycles"):
        if getattr(hw, name) < 0:
            errors.append(f"hardware.{name} must be >= 0")
    if hw.mha_parallelism is not None and hw.mha_parallelism < 1:
        errors.append("hardware.mha_parallelism must be >= 1")
    for name in ("freq_hz", "hbm_bw_per_channel", "net_bw"):
        if not getattr(hw, name) > 0:
            errors.append(f"hardware.{name} must be > 0")
    if hw.net_hop_latency < 0:
        errors.append("hardware.net_hop_latency must be >= 0")
    if hw.n_group >= 1 and hw.datapack_bytes >= 1 and hw.datapack_bytes != hw.n_group:
        errors.append(
            f"hardware.datapack_bytes ({hw.datapack_bytes}) must equal n_group ({hw.n_group}) for int8 payloads"
        )

    n = hw.n_nodes
    if n < 1 or n & (n - 1):
        errors.append(f"hardware.n_nodes = {n} must be a power of two")
    elif n > 1:
        for name in ("n_heads", "l_embed", "ffn_dim"):
            val = getattr(model, name)
            if val >= 1 and val % n:
                errors.append(f"model.{name} = {val} is not divisible by n_nodes = {n}")
    return errors


def check_config(model: ModelConfig, hw: HardwareConfig) -> None:
    errors = validate_config(model, hw)
    if errors:
        raise ConfigError("; ".join(errors))


# ---------------------------------------------------------------------------
# sharding

LINEAR_LAYERS = ("q", "k", "v", "o", "fc1", "fc2")


def linear_shapes(model: ModelConfig) -> dict[str, tuple[int, int]]:
    """(out_dim, in_dim) of every linear layer in one transformer block."""
    d, f = model.l_embed, model.ffn_dim
    return {"q": (d, d), "k": (d, d), "v": (d, d), "o": (d, d), "fc1": (f, d), "fc2": (d, f)}


@dataclass(frozen=True)
class NodeShard:
    node_id: int
    rows: Mapping[str, tuple[int, int]]
    heads: tuple[int, int]

    @property
    def n_local_heads(self) -> int:
        return self.heads[1] - self.heads[0]

    def n_rows(self, layer: str) -> int:
        lo, hi = self.rows[layer]
        return hi - lo


@dataclass(frozen=True)
class ShardPlan:
    n_nodes: int
    nodes: tuple[NodeShard, ...]

    def __getitem__(self, node_id: int) -> NodeShard:
        return self.nodes[node_id]


def make_shard_plan(model: ModelConfig, hw: HardwareConfig) -> ShardPlan:
    """Equal contiguous split of every linear layer's output rows and of the heads."""
    n = hw.n_nodes
    if n < 1:
        raise ConfigError(f"n_nodes must be >= 1, got {n}")
    bad = [f"{name} = {getattr(model, name)}" for name in ("n_heads", "l_embed", "ffn_dim")
           if getattr(model, name) % n]
    if bad:
        raise ConfigError(f"not divisible by n_nodes = {n}: {', '.join(bad)}")

    shapes = linear_shapes(model)
    hs = model.n_heads // n
    nodes = []
    for i in range(n):
        rows = {}
        for layer, (out_dim, _) in shapes.items():
            step = out_dim // n
            rows[layer] = (i * step, (i + 1) * step)
        nodes.append(NodeShard(i, rows, (i * hs, (i + 1) * hs)))
    return ShardPlan(n, tuple(nodes))


# ---------------------------------------------------------------------------
# file format

_SECTIONS = {
    "model": ModelConfig,
    "hardware": HardwareConfig,
    "run": RunConfig,
    "flags": Flags,
}


def _coerce(section: str, key: str, value, annotation: str):
    """Check a YAML scalar against the field annotation; ints may stand in for floats."""
    if value is None and "None" in annotation:
        return None
    base = annotation.split("|")[0].strip()
    ok = {
        "int": isinstance(value, int) and not isinstance(value, bool),
        "float": isinstance(value, (int, float)) and not isinstance(value, bool),
        "bool": isinstance(value, bool),
        "str": isinstance(value, str),
    }.get(base, True)
    if not ok:
        raise ConfigError(f"{section}.{key}: expected {base}, got {value!r}")
    return float(value) if base == "float" else value


def config_from_dict(doc: Mapping[str, Any] | None) -> SimConfig:
    doc = dict(doc or {})
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    parts = {}
    for name, cls in _SECTIONS.items():
        section = doc.get(name) or {}
        if not isinstance(section, Mapping):
            raise ConfigError(f"section '{name}' must be a mapping")
        allowed = {f.name for f in dataclasses.fields(cls)}
        bad = set(section) - allowed
        if bad:
            raise ConfigError(f"unknown key(s) in '{name}': {sorted(bad)}")
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        section = {k: _coerce(name, k, v, types[k]) for k, v in section.items()}
        try:
            parts[name] = cls(**section)
        except TypeError as exc:
            raise ConfigError(f"section '{name}': {exc}") from exc
    cfg = SimConfig(**parts)
    check_config(cfg.model, cfg.hardware)
    return cfg


def load_config(path: str | Path) -> SimConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if doc is not None and not isinstance(doc, Mapping):
        raise ConfigError(f"config {path} must be a mapping at top level")
    return config_from_dict(doc)


def dump_config(cfg: SimConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
