"""Stream, block, and full-encoder assembly plus parameter accounting."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .layers import BatchNorm, ConvF, Dropout, FactorizedFF, Linear, TimeRestrictedAttention
from .module import Module, Parameter, glorot
from .tensor import Tensor, as_tensor, concat
from . import functional as F


@dataclass
class StreamConfig:
    rate: int = 1
    conv_layers: int = 3
    heads: int = 5
    context: tuple[int, int] = (15, 15)

    def __post_init__(self):
        self.context = tuple(int(c) for c in self.context)
        if self.rate < 1 or self.heads < 1 or self.conv_layers < 0:
            raise ConfigError(f"invalid stream: {self}")
        if len(self.context) != 2 or min(self.context) < 0:
            raise ConfigError(f"stream context must be two non-negative sizes, got {self.context}")


@dataclass
class BlockConfig:
    streams: list[StreamConfig]
    d_model: int = 256
    d_q: int = 40
    d_k: int = 40
    d_v: int = 80
    bottleneck: int = 128
    ff_mode: str = "factorized"
    d_ff: int = 1024
    dropout: float = 0.1
    skip_scale: float = 0.66

    def __post_init__(self):
        self.streams = [s if isinstance(s, StreamConfig) else StreamConfig(**s) for s in self.streams]
        if not self.streams:
            raise ConfigError("a block needs at least one stream")
        if self.ff_mode not in ("factorized", "plain"):
            raise ConfigError(f"ff_mode must be 'factorized' or 'plain', got {self.ff_mode!r}")
        if self.d_q != self.d_k:
            raise ConfigError("d_q and d_k must be equal")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @classmethod
    def from_budget(cls, dilations, head_budget: int = 15, conv_layers: int = 3,
                    context=(15, 15), **dims) -> "BlockConfig":
        """Split ``head_budget`` evenly over one stream per dilation rate."""
        S = len(dilations)
        if S == 0 or head_budget % S:
            raise ConfigError(f"head budget {head_budget} is not divisible by {S} streams")
        streams = [StreamConfig(rate=r, conv_layers=conv_layers, heads=head_budget // S,
                                context=tuple(context)) for r in dilations]
        return cls(streams=streams, **dims)


@dataclass
class ModelConfig:
    blocks: list[BlockConfig] = field(default_factory=list)
    input_dim: int = 40
    num_classes: int = 2
    seed: int = 0
    d_model: int | None = None

    def __post_init__(self):
        self.blocks = [b if isinstance(b, BlockConfig) else BlockConfig(**b) for b in self.blocks]
        widths = {b.d_model for b in self.blocks}
        if len(widths) > 1:
            raise ConfigError(f"all blocks must share d_model, got {sorted(widths)}")
        if widths:
            (width,) = widths
            if self.d_model not in (None, width):
                raise ConfigError(f"d_model {self.d_model} disagrees with blocks ({width})")
            self.d_model = width
        elif self.d_model is None:
            self.d_model = 256
        if self.input_dim < 1 or self.num_classes < 2:
            raise ConfigError("input_dim must be >= 1 and num_classes >= 2")

    @classmethod
    def uniform(cls, num_blocks: int, dilations, head_budget: int = 15, conv_layers: int = 3,
                context=(15, 15), input_dim: int = 40, num_classes: int = 2, seed: int = 0,
                **dims) -> "ModelConfig":
        blocks = [BlockConfig.from_budget(dilations, head_budget, conv_layers, context, **dims)
                  for _ in range(num_blocks)]
        return cls(blocks=blocks, input_dim=input_dim, num_classes=num_classes, seed=seed,
                   d_model=dims.get("d_model", 256))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["blocks"] = [BlockConfig(**dict(b, streams=[StreamConfig(**s) for s in b["streams"]]))
                       for b in d.get("blocks", [])]
        return cls(**d)


def best_model_config(input_dim: int = 140, num_classes: int = 6000, seed: int = 0) -> ModelConfig:
    """Three blocks of five streams (dilations 1..5), seven Conv-F layers each."""
    return ModelConfig.uniform(3, [1, 2, 3, 4, 5], head_budget=15, conv_layers=7,
                               input_dim=input_dim, num_classes=num_classes, seed=seed)


def child_seed(seed, *path: int) -> np.random.SeedSequence:
    """Deterministic sub-seed addressed by ``path`` below ``seed``."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key + tuple(path))
    return np.random.SeedSequence(seed, spawn_key=tuple(path))


def _rng(seed, *path):
    return np.random.default_rng(child_seed(seed, *path))


class StreamEncoder(Module):
    """Conv-F stack at the stream rate, then attention, then feed-forward."""

    def __init__(self, stream: StreamConfig, block: BlockConfig, seed=0):
        L, R = stream.context
        self.convs = [ConvF(block.d_model, block.bottleneck, stream.rate, block.dropout,
                            block.skip_scale, seed=_rng(seed, 0, i))
                      for i in range(stream.conv_layers)]
        self.attention = TimeRestrictedAttention(block.d_model, stream.heads, block.d_q, block.d_k,
                                                 block.d_v, stream.rate, L, R, seed=_rng(seed, 1))
        self.ff = FactorizedFF(block.d_model, block.bottleneck, block.ff_mode, block.d_ff,
                               seed=_rng(seed, 2))

    def forward(self, x):
        for conv in self.convs:
            x = conv(x)
        return self.ff(self.attention(x))


class FinalProjection(Module):
    """Concatenated stream outputs -> ``d_model``, then ReLU, batch norm, dropout."""

    def __init__(self, num_streams: int, d_model: int, dropout: float = 0.1, seed=0):
        rng = _rng(seed, 0)
        width = num_streams * d_model
        self.weight = Parameter(glorot(rng, (width, d_model), width, d_model))
        self.bn = BatchNorm(d_model)
        self.dropout = Dropout(dropout, seed=_rng(seed, 1))

    def forward(self, merged):
        return self.dropout(self.bn(F.relu(as_tensor(merged) @ self.weight)))


def stream_seed(block_seed, s: int) -> np.random.SeedSequence:
    return child_seed(block_seed, 0, s)


def projection_seed(block_seed) -> np.random.SeedSequence:
    return child_seed(block_seed, 1)


class MultiStreamBlock(Module):
    def __init__(self, block: BlockConfig, seed=0):
        self.config = block
        self.streams = [StreamEncoder(s, block, seed=stream_seed(seed, i))
                        for i, s in enumerate(block.streams)]
        self.final = FinalProjection(len(block.streams), block.d_model, block.dropout,
                                     seed=projection_seed(seed))

    def stream_outputs(self, x) -> list[Tensor]:
        outs = [stream(x) for stream in self.streams]
        lengths = {o.shape[-2] for o in outs}
        if len(lengths) != 1 or x.shape[-2] not in lengths:
            raise AssertionError(f"stream outputs disagree in length: {sorted(lengths)}")
        return outs

    def forward(self, x):
        outs = self.stream_outputs(as_tensor(x))
        merged = outs[0] if len(outs) == 1 else concat(outs, axis=-1)
        return self.final(merged)


class MultiStreamEncoder(Module):
    """Input lift, stacked multi-stream blocks, and a per-frame classifier."""

    def __init__(self, config: ModelConfig):
        self.config = config
        d = config.d_model
        self.lift = Linear(config.input_dim, d, seed=_rng(config.seed, 0))
        self.blocks = [MultiStreamBlock(b, seed=child_seed(config.seed, 1, i))
                       for i, b in enumerate(config.blocks)]
        self.head = Linear(d, config.num_classes, seed=_rng(config.seed, 2))
        for name, p in self.named_parameters():
            p.name = name

    def embed(self, features) -> Tensor:
        """Final block embedding, ``(..., T, d_model)``."""
        x = as_tensor(features)
        if x.shape[-1] != self.config.input_dim:
            raise DimensionError(
                f"features have {x.shape[-1]} dims, model expects {self.config.input_dim}")
        h = self.lift(x)
        for block in self.blocks:
            h = block(h)
        return h

    def forward(self, features) -> Tensor:
        return self.head(self.embed(features))


@dataclass
class ParamCount:
    total: int
    components: dict[str, int]
    by_kind: dict[str, int]

    def format_table(self) -> str:
        width = max([len(k) for k in self.components] + [10])
        lines = [f"{k:<{width}}  {v:>12,d}" for k, v in self.components.items()]
        lines.append("-" * (width + 14))
        lines += [f"{k:<{width}}  {v:>12,d}" for k, v in self.by_kind.items()]
        lines.append(f"{'total':<{width}}  {self.total:>12,d}")
        return "\n".join(lines)


def param_count(config: ModelConfig) -> ParamCount:
    """Closed-form trainable-parameter count (running statistics excluded)."""
    d = config.d_model
    comps: dict[str, int] = {"input_lift": config.input_dim * d + d}
    kinds = {"affine": 0, "conv_f": 0, "attention": 0, "feed_forward": 0, "projection": 0}
    for i, block in enumerate(config.blocks):
        b = block.bottleneck
        for s, stream in enumerate(block.streams):
            key = f"blocks.{i}.streams.{s}"
            conv = stream.conv_layers * (2 * d * b + 2 * b * d + 2 * d)
            attn = stream.heads * d * (block.d_q + block.d_k + block.d_v) \
                + stream.heads * block.d_v * d + 2 * d
            if block.ff_mode == "factorized":
                ff = 2 * d * b + 2 * d
            else:
                ff = 2 * d * block.d_ff + block.d_ff + d + 2 * d
            comps[f"{key}.conv_f"] = conv
            comps[f"{key}.attention"] = attn
            comps[f"{key}.feed_forward"] = ff
            kinds["conv_f"] += conv
            kinds["attention"] += attn
            kinds["feed_forward"] += ff
        proj = len(block.streams) * d * d + 2 * d
        comps[f"blocks.{i}.projection"] = proj
        kinds["projection"] += proj
    comps["head"] = d * config.num_classes + config.num_classes
    kinds["affine"] = comps["input_lift"] + comps["head"]
    return ParamCount(total=sum(comps.values()), components=comps, by_kind=kinds)


def enumerate_params(model: Module) -> int:
    """Count parameters by walking every instantiated tensor."""
    return sum(p.size for p in model.parameters())
