"""Synthetic multi-resolution frame-labeling task and the feature container.

Feature container (little-endian throughout)::

    header   4s   magic  b"MSFC"
             u32  version (1)
             u32  input_dim
             u8   has_labels (0 or 1)
             3x   reserved, zero
    record   u32  T
             f32  T * input_dim features, row-major
             i32  T labels (only when has_labels == 1)

Records repeat until end of file. A record with ``T == 0`` is an empty
utterance: it is skipped with a warning.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, CorruptionError, FormatError

MAGIC = b"MSFC"
VERSION = 1
_HEADER = struct.Struct("<4sIIB3x")
_LEN = struct.Struct("<I")


@dataclass
class FrameBatch:
    """One utterance: ``features`` is ``(T, input_dim)`` float32, ``labels`` ``(T,)``."""

    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise ConfigError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int32)
            if self.labels.shape != (self.features.shape[0],):
                raise ConfigError(f"labels shape {self.labels.shape} does not match "
                                  f"{self.features.shape[0]} frames")

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]


@dataclass
class TaskSpec:
    """Synthetic task: class 0 is background, classes ``1..k-1`` are events.

    Event class ``c`` has span ``event_scales[(c - 1) % len(event_scales)]``.
    ``background_fraction`` is the target share of background frames; event
    classes split the remaining frames equally. ``task_seed`` fixes the task
    itself (the carrier direction) and ``seed`` the sample drawn from it, so
    train and held-out sets share a task but not sequences.
    """

    num_classes: int = 4
    input_dim: int = 8
    length_range: tuple[int, int] = (96, 96)
    event_scales: list[int] = field(default_factory=lambda: [3, 9, 15])
    noise: float = 0.5
    num_sequences: int = 64
    background_fraction: float = 0.25
    amplitude: float = 1.0
    amplitude_jitter: float = 0.3
    seed: int = 0
    task_seed: int = 0

    def __post_init__(self):
        self.length_range = tuple(int(v) for v in self.length_range)
        self.event_scales = [int(s) for s in self.event_scales]
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if not self.event_scales or min(self.event_scales) < 1:
            raise ConfigError("event scales must be >= 1")
        lo, hi = self.length_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"invalid length range {self.length_range}")
        if not 0.0 <= self.background_fraction < 1.0:
            raise ConfigError("background_fraction must lie in [0, 1)")
        if not all(np.isfinite([self.noise, self.amplitude, self.amplitude_jitter])):
            raise ConfigError("noise and amplitude settings must be finite")
        if self.noise < 0 or self.input_dim < 1 or self.num_sequences < 0:
            raise ConfigError("noise, input_dim and num_sequences must be non-negative")
        if not 0.0 <= self.amplitude_jitter < 1.0:
            raise ConfigError("amplitude_jitter must lie in [0, 1)")

    def class_scale(self, c: int) -> int:
        return self.event_scales[(c - 1) % len(self.event_scales)]

    def class_priors(self) -> np.ndarray:
        k = self.num_classes
        priors = np.full(k, (1.0 - self.background_fraction) / (k - 1))
        priors[0] = self.background_fraction
        return priors


def event_pattern(scale: int) -> np.ndarray:
    """Per-frame signed amplitude of an event of the given span.

    Spans up to 4 frames alternate sign frame to frame, a pattern visible in
    any small window. Longer spans are flat boxes: every interior frame looks
    the same, so telling a 9-frame from a 15-frame event takes context on the
    order of the span itself.
    """
    if scale <= 4:
        return np.where(np.arange(scale) % 2 == 0, 1.0, -1.0)
    return np.ones(scale)


def generate_synthetic(spec: TaskSpec) -> list[FrameBatch]:
    """Deterministic dataset of labeled sequences for ``spec``."""
    rng = np.random.default_rng(spec.seed)
    # shared carrier: all event classes live along one direction, so temporal
    # structure alone identifies the class
    carrier = np.random.default_rng(spec.task_seed).normal(size=spec.input_dim)
    carrier /= np.linalg.norm(carrier)
    event_classes = np.arange(1, spec.num_classes)
    scales = np.array([spec.class_scale(c) for c in event_classes], dtype=float)
    # pick events inversely to span so frame shares come out equal
    picks = (1.0 / scales) / (1.0 / scales).sum()
    mean_span = float((picks * scales).sum())
    b = spec.background_fraction
    mean_gap = b / (1.0 - b) * mean_span
    patterns = {c: event_pattern(spec.class_scale(c)) for c in event_classes}

    data = []
    lo, hi = spec.length_range
    for _ in range(spec.num_sequences):
        T = int(rng.integers(lo, hi + 1))
        labels = np.zeros(T, dtype=np.int32)
        envelope = np.zeros(T)
        t = 0
        while t < T:
            if mean_gap > 0:
                t += _gap_length(rng, mean_gap)
                if t >= T:
                    break
            c = int(rng.choice(event_classes, p=picks))
            pat = patterns[c]
            amp = spec.amplitude * (1.0 + spec.amplitude_jitter * rng.uniform(-1.0, 1.0))
            span = min(len(pat), T - t)
            labels[t:t + span] = c
            envelope[t:t + span] = amp * pat[:span]
            t += len(pat)
        feats = envelope[:, None] * carrier[None, :]
        if spec.noise > 0:
            feats = feats + spec.noise * rng.normal(size=(T, spec.input_dim))
        data.append(FrameBatch(feats.astype(np.float32), labels))
    return data


def _gap_length(rng, mean_gap: float) -> int:
    # integer gap with the requested mean: floor/ceil mix of a uniform draw
    hi = 2.0 * mean_gap
    g = rng.uniform(0.0, hi)
    return int(g) + (1 if rng.random() < g - int(g) else 0)


def write_features(path, batches, input_dim: int | None = None):
    batches = list(batches)
    if input_dim is None:
        if not batches:
            raise ConfigError("input_dim is required when writing an empty dataset")
        input_dim = batches[0].features.shape[1]
    flags = {b.labels is not None for b in batches}
    if len(flags) > 1:
        raise ConfigError("either every utterance carries labels or none does")
    has_labels = flags == {True}
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, input_dim, int(has_labels)))
        for b in batches:
            if b.features.shape[1] != input_dim:
                raise ConfigError(f"utterance has {b.features.shape[1]} dims, expected {input_dim}")
            fh.write(_LEN.pack(b.num_frames))
            fh.write(np.ascontiguousarray(b.features, dtype="<f4").tobytes())
            if has_labels:
                fh.write(np.ascontiguousarray(b.labels, dtype="<i4").tobytes())


def read_features(path) -> list[FrameBatch]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: file too short for a feature header ({len(blob)} bytes)")
    magic, version, input_dim, has_labels = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if has_labels not in (0, 1) or input_dim < 1:
        raise FormatError(f"{path}: invalid header fields")

    out = []
    pos = _HEADER.size
    while pos < len(blob):
        start = pos
        if pos + _LEN.size > len(blob):
            raise CorruptionError(f"{path}: truncated record length", start)
        (T,) = _LEN.unpack_from(blob, pos)
        pos += _LEN.size
        n_feat = 4 * T * input_dim
        n_lab = 4 * T if has_labels else 0
        if pos + n_feat + n_lab > len(blob):
            raise CorruptionError(f"{path}: truncated record of {T} frames", start)
        if T == 0:
            warnings.warn(f"{path}: skipping empty utterance at byte offset {start}")
            continue
        feats = np.frombuffer(blob, dtype="<f4", count=T * input_dim, offset=pos)
        feats = feats.reshape(T, input_dim).astype(np.float32)
        pos += n_feat
        labels = None
        if has_labels:
            labels = np.frombuffer(blob, dtype="<i4", count=T, offset=pos).astype(np.int32)
            pos += n_lab
        out.append(FrameBatch(feats, labels))
    return out


def read_header(path) -> tuple[int, bool]:
    """Return ``(input_dim, has_labels)`` without reading records."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise FormatError(f"{path}: file too short for a feature header")
    magic, version, input_dim, has_labels = _HEADER.unpack(head)
    if magic != MAGIC or version != VERSION:
        raise FormatError(f"{path}: not a version-{VERSION} feature container")
    return input_dim, bool(has_labels)


def stack_batches(dataset: list[FrameBatch], batch_size: int,
                  rng: np.random.Generator | None = None):
    """Group equal-length utterances into ``(features, labels)`` arrays.

    Utterances are bucketed by length; buckets are chunked into at most
    ``batch_size`` sequences. With ``rng`` both the membership and order of
    chunks are shuffled, otherwise dataset order is kept.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    buckets: dict[int, list[int]] = {}
    for i, b in enumerate(dataset):
        buckets.setdefault(b.num_frames, []).append(i)
    chunks = []
    for T in sorted(buckets):
        idx = np.array(buckets[T])
        if rng is not None:
            idx = rng.permutation(idx)
        chunks += [idx[i:i + batch_size] for i in range(0, len(idx), batch_size)]
    if rng is not None:
        chunks = [chunks[i] for i in rng.permutation(len(chunks))]
    for chunk in chunks:
        feats = np.stack([dataset[i].features for i in chunk]).astype(np.float64)
        labels = None
        if dataset[chunk[0]].labels is not None:
            labels = np.stack([dataset[i].labels for i in chunk])
        yield feats, labels
