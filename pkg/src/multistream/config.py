"""Run configuration: a YAML file with six sections, every key optional.

Schema and defaults::

    model:                      # topology of the encoder
      input_dim: 8
      num_classes: 4
      seed: 0
      num_blocks: 2             # shorthand: identical blocks ...
      dilations: [1, 2, 3]      # ... one stream per dilation rate
      head_budget: 15           # total heads per block, split evenly
      conv_layers: 3            # Conv-F layers per stream
      context: [15, 15]         # attended positions left / right
      blocks: null              # explicit list of blocks; overrides the shorthand
      d_model: 32
      d_q: 8
      d_k: 8
      d_v: 8
      bottleneck: 16
      ff_mode: factorized       # or "plain"
      d_ff: 1024                # plain mode only
      dropout: 0.1
      skip_scale: 0.66
    train:
      epochs: 10
      batch_size: 8
      lr_start: 1.0e-3
      lr_end: 1.0e-5
      optimizer: adam           # or "sgd"
      clip_norm: 5.0
      seed: 0
    semi_ortho:
      mode: step                # "step", "penalty" or "off"
      interval: 4
      step_scale: 0.125
      penalty_weight: 1.0e-3
    data:                       # synthetic task; dims come from ``model``
      num_sequences: 64
      eval_sequences: 32
      length_range: [96, 96]
      event_scales: [3, 9, 15]
      noise: 0.5
      background_fraction: 0.25
      amplitude: 1.0
      amplitude_jitter: 0.3
      seed: 0                   # training sample
      eval_seed: 1              # held-out sample
      task_seed: 0              # the task itself, shared by both samples
    paths:                      # relative paths resolve against the working directory
      train_features: null      # feature container; synthetic data when null
      eval_features: null
      checkpoint: checkpoint.npz
      metrics: null             # JSON-lines copy of the metrics stream
    gradcheck:
      batch: 2
      frames: 11
      eps: 1.0e-6
      tolerance: 1.0e-4
      max_coords: 16            # probed entries per tensor; null probes all
      seed: 0

Each ``blocks`` entry holds ``streams`` (a list of ``{rate, conv_layers,
heads, context}``) and may set any of the per-block dimension keys; unset
ones fall back to the ``model`` section. Unknown keys anywhere are errors.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .constraint import SemiOrthoConfig
from .data import TaskSpec
from .errors import ConfigError
from .model import BlockConfig, ModelConfig, StreamConfig
from .train import TrainConfig

_BOOL = "tag:yaml.org,2002:bool"


class _Loader(yaml.SafeLoader):
    """Safe loader where only true/false are booleans (so ``mode: off`` stays a string)."""


_Loader.yaml_implicit_resolvers = {
    k: [(tag, rx) for tag, rx in v if tag != _BOOL]
    for k, v in yaml.SafeLoader.yaml_implicit_resolvers.items()
}
_Loader.add_implicit_resolver(_BOOL, re.compile(r"^(?:true|True|TRUE|false|False|FALSE)$"),
                              list("tTfF"))
# also read exponents without a mantissa dot (1e-3) as floats
_Loader.add_implicit_resolver("tag:yaml.org,2002:float",
                              re.compile(r"^[-+]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)[eE][-+]?[0-9]+$"),
                              list("-+0123456789."))


def _yaml(text: str):
    return yaml.load(text, Loader=_Loader)


_BLOCK_DIMS = ("d_model", "d_q", "d_k", "d_v", "bottleneck", "ff_mode", "d_ff",
               "dropout", "skip_scale")


@dataclass
class ModelSection:
    input_dim: int = 8
    num_classes: int = 4
    seed: int = 0
    num_blocks: int = 2
    dilations: list[int] = field(default_factory=lambda: [1, 2, 3])
    head_budget: int = 15
    conv_layers: int = 3
    context: list[int] = field(default_factory=lambda: [15, 15])
    blocks: list[dict] | None = None
    d_model: int = 32
    d_q: int = 8
    d_k: int = 8
    d_v: int = 8
    bottleneck: int = 16
    ff_mode: str = "factorized"
    d_ff: int = 1024
    dropout: float = 0.1
    skip_scale: float = 0.66

    def build(self) -> ModelConfig:
        dims = {k: getattr(self, k) for k in _BLOCK_DIMS}
        if self.blocks is None:
            if self.num_blocks < 0:
                raise ConfigError("model.num_blocks must be >= 0")
            return ModelConfig.uniform(self.num_blocks, self.dilations, self.head_budget,
                                       self.conv_layers, self.context, self.input_dim,
                                       self.num_classes, self.seed, **dims)
        blocks = []
        for i, raw in enumerate(self.blocks):
            where = f"model.blocks.{i}"
            if not isinstance(raw, dict):
                raise ConfigError(f"{where} must be a mapping")
            _reject_unknown(raw, set(_BLOCK_DIMS) | {"streams"}, where)
            streams = raw.get("streams")
            if not isinstance(streams, list) or not streams:
                raise ConfigError(f"{where}.streams must be a non-empty list")
            parsed = []
            for j, s in enumerate(streams):
                if not isinstance(s, dict):
                    raise ConfigError(f"{where}.streams.{j} must be a mapping")
                _reject_unknown(s, _names(StreamConfig), f"{where}.streams.{j}")
                parsed.append(StreamConfig(**s))
            blocks.append(BlockConfig(streams=parsed, **{**dims, **{k: v for k, v in raw.items()
                                                                     if k != "streams"}}))
        return ModelConfig(blocks=blocks, input_dim=self.input_dim,
                           num_classes=self.num_classes, seed=self.seed, d_model=self.d_model)


@dataclass
class DataSection:
    num_sequences: int = 64
    eval_sequences: int = 32
    length_range: list[int] = field(default_factory=lambda: [96, 96])
    event_scales: list[int] = field(default_factory=lambda: [3, 9, 15])
    noise: float = 0.5
    background_fraction: float = 0.25
    amplitude: float = 1.0
    amplitude_jitter: float = 0.3
    seed: int = 0
    eval_seed: int = 1
    task_seed: int = 0


@dataclass
class PathsSection:
    train_features: str | None = None
    eval_features: str | None = None
    checkpoint: str | None = "checkpoint.npz"
    metrics: str | None = None


@dataclass
class GradCheckSection:
    batch: int = 2
    frames: int = 11
    eps: float = 1e-6
    tolerance: float = 1e-4
    max_coords: int | None = 16
    seed: int = 0

    def __post_init__(self):
        if self.batch < 1 or self.frames < 2:
            raise ConfigError("gradcheck needs batch >= 1 and frames >= 2")
        if self.tolerance <= 0:
            raise ConfigError("gradcheck.tolerance must be positive")
        if self.max_coords is not None and self.max_coords < 1:
            raise ConfigError("gradcheck.max_coords must be >= 1 or null")


_SECTIONS = {
    "model": ModelSection,
    "train": None,  # handled below: TrainConfig minus its nested semi_ortho
    "semi_ortho": SemiOrthoConfig,
    "data": DataSection,
    "paths": PathsSection,
    "gradcheck": GradCheckSection,
}


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    train: dict = field(default_factory=dict)
    semi_ortho: SemiOrthoConfig = field(default_factory=SemiOrthoConfig)
    data: DataSection = field(default_factory=DataSection)
    paths: PathsSection = field(default_factory=PathsSection)
    gradcheck: GradCheckSection = field(default_factory=GradCheckSection)

    def model_config(self) -> ModelConfig:
        return self.model.build()

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train, semi_ortho=self.semi_ortho)

    def task_spec(self, split: str = "train") -> TaskSpec:
        if split not in ("train", "eval"):
            raise ConfigError(f"split must be 'train' or 'eval', got {split!r}")
        d = self.data
        return TaskSpec(
            num_classes=self.model.num_classes,
            input_dim=self.model.input_dim,
            length_range=tuple(d.length_range),
            event_scales=list(d.event_scales),
            noise=d.noise,
            num_sequences=d.num_sequences if split == "train" else d.eval_sequences,
            background_fraction=d.background_fraction,
            amplitude=d.amplitude,
            amplitude_jitter=d.amplitude_jitter,
            seed=d.seed if split == "train" else d.eval_seed,
            task_seed=d.task_seed,
        )

    def to_dict(self) -> dict:
        out = {f.name: dataclasses.asdict(getattr(self, f.name))
               for f in fields(self) if f.name != "train"}
        train = dataclasses.asdict(self.train_config())
        del train["semi_ortho"]
        return {"model": out.pop("model"), "train": train, **out}


def _names(cls) -> set[str]:
    return {f.name for f in fields(cls)}


_TRAIN_KEYS = _names(TrainConfig) - {"semi_ortho"}


def _reject_unknown(raw: dict, allowed: set[str], where: str):
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def parse_config(raw: dict | None) -> RunConfig:
    """Validate a raw mapping into a ``RunConfig``; nothing is built yet."""
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping of sections")
    _reject_unknown(raw, set(_SECTIONS), "configuration")
    sections = {}
    for name, cls in _SECTIONS.items():
        body = raw.get(name)
        body = {} if body is None else body
        if not isinstance(body, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        if cls is None:
            _reject_unknown(body, _TRAIN_KEYS, name)
            try:
                TrainConfig(**body)  # validate early
            except TypeError as exc:
                raise ConfigError(f"section 'train': {exc}") from exc
            sections[name] = dict(body)
            continue
        _reject_unknown(body, _names(cls), name)
        try:
            sections[name] = cls(**body)
        except TypeError as exc:
            raise ConfigError(f"section {name!r}: {exc}") from exc
    cfg = RunConfig(**sections)
    try:
        cfg.model_config()
        cfg.task_spec("train")
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def apply_override(raw: dict, assignment: str) -> dict:
    """Apply one ``section.key=value`` assignment (value parsed as YAML)."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, text = assignment.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) < 2 or not all(parts):
        raise ConfigError(f"override key {key!r} must look like section.key")
    try:
        value = _yaml(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {assignment!r}: cannot parse value") from exc
    node = raw
    for i, part in enumerate(parts[:-1]):
        if isinstance(node, list):
            node = node[_index(node, part, parts[:i + 1])]
            continue
        if node.get(part) is None:
            node[part] = {}
        node = node[part]
        if not isinstance(node, (dict, list)):
            raise ConfigError(f"override {key!r}: {'.'.join(parts[:i + 1])} is not a section")
    last = parts[-1]
    if isinstance(node, list):
        node[_index(node, last, parts)] = value
    else:
        node[last] = value
    return raw


def _index(seq: list, part: str, path) -> int:
    try:
        i = int(part)
    except ValueError:
        raise ConfigError(f"override path {'.'.join(path)}: expected a list index") from None
    if not 0 <= i < len(seq):
        raise ConfigError(f"override path {'.'.join(path)}: index out of range")
    return i


def load_config(path=None, overrides=()) -> RunConfig:
    """Read ``path`` (defaults only when ``None``), then apply dotted overrides."""
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = _yaml(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: invalid YAML ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be a mapping of sections")
    for assignment in overrides:
        apply_override(raw, assignment)
    return parse_config(raw)
