"""Optimizers, learning-rate schedule, and the train/evaluate loops."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import functional as F
from .constraint import (SemiOrthoConfig, apply_semi_ortho, constrained_parameters,
                         semi_ortho_penalty, semi_ortho_penalty_term)
from .data import FrameBatch, stack_batches
from .errors import ConfigError, EmptyInputError, NumericError
from .tensor import no_grad


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 8
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    optimizer: str = "adam"
    clip_norm: float = 5.0
    seed: int = 0
    semi_ortho: SemiOrthoConfig = field(default_factory=SemiOrthoConfig)

    def __post_init__(self):
        if isinstance(self.semi_ortho, dict):
            self.semi_ortho = SemiOrthoConfig(**self.semi_ortho)
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not self.lr_start >= self.lr_end > 0:
            raise ConfigError(f"need lr_start >= lr_end > 0, got {self.lr_start}, {self.lr_end}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


def lr_schedule(step: int, total_steps: int, lr_start: float = 1e-3, lr_end: float = 1e-5) -> float:
    """Exponential decay from ``lr_start`` at step 0 to ``lr_end`` at ``total_steps``."""
    if total_steps <= 0:
        return lr_start
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    return lr_start * (lr_end / lr_start) ** (step / total_steps)


class SGD:
    def __init__(self, params):
        self.params = list(params)

    def step(self, lr: float):
        for p in self.params:
            if p.grad is not None:
                p.data -= lr * p.grad


class Adam:
    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad * p.grad
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float
    lr: float
    semi_ortho_penalty: float
    semi_ortho_max: float
    eval_loss: float | None = None
    eval_accuracy: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False)


@dataclass
class EvalMetrics:
    accuracy: float
    loss: float
    frames: int


class Trainer:
    """Holds optimizer and step state across epochs for one model."""

    def __init__(self, model, cfg: TrainConfig, total_steps: int):
        self.model, self.cfg = model, cfg
        self.total_steps = max(int(total_steps), 0)
        self.params = model.parameters()
        self.opt = Adam(self.params) if cfg.optimizer == "adam" else SGD(self.params)
        self.constrained = constrained_parameters(model)
        self.step_count = 0
        self.rng = np.random.default_rng(cfg.seed)
        self.lr = cfg.lr_start

    def current_lr(self) -> float:
        last = max(self.total_steps - 1, 0)
        return lr_schedule(min(self.step_count, last), last, self.cfg.lr_start, self.cfg.lr_end)

    def train_step(self, feats, labels) -> tuple[float, int, int, list[float]]:
        model, so = self.model, self.cfg.semi_ortho
        model.train()
        model.zero_grad()
        try:
            logits = model(feats)
            loss = F.cross_entropy(logits, labels)
        except NumericError as exc:
            raise NumericError(f"step {self.step_count + 1}: {exc}") from exc
        objective = loss
        if so.mode == "penalty" and self.constrained and so.penalty_weight > 0:
            for _, p in self.constrained:
                view = p.reshape(-1, p.shape[-1]).T
                objective = objective + semi_ortho_penalty_term(view) * so.penalty_weight
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss {value} at step {self.step_count + 1}")
        objective.backward()
        if self.cfg.clip_norm > 0:
            clip_grad_norm(self.params, self.cfg.clip_norm)
        self.lr = self.current_lr()
        self.opt.step(self.lr)
        self.step_count += 1
        if so.mode == "step" and self.step_count % so.interval == 0:
            apply_semi_ortho(self.constrained, so.step_scale)
        penalties = [semi_ortho_penalty(p.ortho_view()) for _, p in self.constrained]
        correct = int((logits.data.argmax(axis=-1) == labels).sum())
        return value, correct, labels.size, penalties

    def train_epoch(self, dataset: list[FrameBatch], epoch: int = 0) -> EpochMetrics:
        """One pass over ``dataset`` in a seeded shuffled order."""
        losses, weights, correct, frames, pens = [], [], 0, 0, []
        for feats, labels in stack_batches(dataset, self.cfg.batch_size, self.rng):
            loss, c, n, p = self.train_step(feats, labels)
            losses.append(loss)
            weights.append(n)
            correct += c
            frames += n
            pens.extend(p)
        if frames == 0:
            raise EmptyInputError("training set has no frames")
        return EpochMetrics(
            epoch=epoch,
            loss=float(np.average(losses, weights=weights)),
            accuracy=correct / frames,
            lr=self.lr,
            semi_ortho_penalty=float(np.mean(pens)) if pens else 0.0,
            semi_ortho_max=float(np.max(pens)) if pens else 0.0,
        )


def steps_per_epoch(dataset: list[FrameBatch], batch_size: int) -> int:
    counts: dict[int, int] = {}
    for b in dataset:
        counts[b.num_frames] = counts.get(b.num_frames, 0) + 1
    return sum(-(-n // batch_size) for n in counts.values())


def evaluate(model, dataset: list[FrameBatch], batch_size: int = 16) -> EvalMetrics:
    """Inference-mode frame accuracy and mean cross-entropy."""
    was_training = model.training
    model.eval()
    total_loss, correct, frames = 0.0, 0, 0
    try:
        with no_grad():
            for feats, labels in stack_batches(dataset, batch_size):
                if labels is None:
                    raise EmptyInputError("evaluation data carries no labels")
                logits = model(feats)
                total_loss += F.cross_entropy(logits, labels, reduction="sum").item()
                correct += int((logits.data.argmax(axis=-1) == labels).sum())
                frames += labels.size
    finally:
        model.train(was_training)
    if frames == 0:
        raise EmptyInputError("evaluation set has no frames")
    return EvalMetrics(accuracy=correct / frames, loss=total_loss / frames, frames=frames)


def fit(model, train_data: list[FrameBatch], cfg: TrainConfig,
        eval_data: list[FrameBatch] | None = None,
        on_epoch: Callable[[EpochMetrics], None] | None = None) -> list[EpochMetrics]:
    """Train for ``cfg.epochs`` epochs, reporting one record per epoch."""
    trainer = Trainer(model, cfg, cfg.epochs * steps_per_epoch(train_data, cfg.batch_size))
    history = []
    for epoch in range(1, cfg.epochs + 1):
        metrics = trainer.train_epoch(train_data, epoch)
        if eval_data:
            ev = evaluate(model, eval_data, cfg.batch_size)
            metrics.eval_loss, metrics.eval_accuracy = ev.loss, ev.accuracy
        history.append(metrics)
        if on_epoch is not None:
            on_epoch(metrics)
    return history
