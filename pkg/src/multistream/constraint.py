"""Semi-orthogonality of factor matrices.

For a factor ``U`` (``m x n``, ``m <= n``) the constraint drives
``P = U U^T`` to the identity by minimizing ``f = Trace(Q Q^T)`` with
``Q = P - I``. Enforcement is either a periodic update applied outside the
loss graph (``mode="step"``) or an additive loss term (``mode="penalty"``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ConfigError, InfeasibleConstraintError
from .tensor import Tensor


@dataclass
class SemiOrthoConfig:
    interval: int = 4
    step_scale: float = 0.125
    mode: str = "step"
    penalty_weight: float = 1e-3

    def __post_init__(self):
        if int(self.interval) != self.interval or self.interval < 1:
            raise ConfigError(f"semi_ortho.interval must be a positive integer, got {self.interval}")
        if not 0.0 < self.step_scale <= 1.0:
            raise ConfigError(f"semi_ortho.step_scale must lie in (0, 1], got {self.step_scale}")
        if self.mode not in ("step", "penalty", "off"):
            raise ConfigError(f"semi_ortho.mode must be step, penalty or off, got {self.mode!r}")
        if self.penalty_weight < 0:
            raise ConfigError("semi_ortho.penalty_weight must be non-negative")


@dataclass
class SemiOrthoState:
    """Bookkeeping for one constrained parameter."""

    name: str
    interval: int = 4
    step_scale: float = 0.125
    applied: int = 0

    def __post_init__(self):
        if self.interval < 1:
            raise ConfigError("interval must be >= 1")
        if not 0.0 < self.step_scale <= 1.0:
            raise ConfigError("step_scale must lie in (0, 1]")

    def due(self, step: int) -> bool:
        """Whether the constraint fires after optimizer step ``step`` (1-based)."""
        return step % self.interval == 0


def _check_feasible(U):
    if U.ndim != 2:
        raise InfeasibleConstraintError(f"semi-orthogonal factor must be 2-D, got shape {U.shape}")
    m, n = U.shape
    if m > n:
        raise InfeasibleConstraintError(
            f"cannot make a {m}x{n} matrix semi-orthogonal: rows exceed columns")


def semi_ortho_penalty(U) -> float:
    """``||U U^T - I||_F^2``; zero exactly when the rows of ``U`` are orthonormal."""
    U = np.asarray(U.data if isinstance(U, Tensor) else U, dtype=np.float64)
    _check_feasible(U)
    Q = U @ U.T - np.eye(U.shape[0])
    return float(np.sum(Q * Q))


def semi_ortho_penalty_term(U: Tensor) -> Tensor:
    """Differentiable form of ``semi_ortho_penalty`` for use inside a loss."""
    _check_feasible(U.data)
    Q = U @ U.T - np.eye(U.shape[0])
    return (Q * Q).sum()


def penalty_gradient(U) -> np.ndarray:
    """Exact gradient ``4 Q U`` of the penalty with respect to ``U``."""
    U = np.asarray(U, dtype=np.float64)
    _check_feasible(U)
    Q = U @ U.T - np.eye(U.shape[0])
    return 4.0 * Q @ U


def semi_ortho_step(U, step_scale: float = 0.125) -> np.ndarray:
    """One update ``U - step_scale * 4 Q U``.

    The effective rate ``4 * step_scale`` is capped at 1/2 (the fastest rate
    that converges without overshoot) and further reduced while the largest
    eigenvalue of ``U U^T`` exceeds 2, where the plain update can diverge.
    """
    U = np.asarray(U, dtype=np.float64)
    _check_feasible(U)
    P = U @ U.T
    Q = P - np.eye(U.shape[0])
    lam_max = float(np.linalg.eigvalsh(P)[-1])
    rate = min(4.0 * step_scale, 0.5 / max(lam_max - 1.0, 1.0))
    return U - rate * (Q @ U)


def orthonormalize(U) -> np.ndarray:
    """Nearest matrix with orthonormal rows (polar factor via SVD)."""
    U = np.asarray(U, dtype=np.float64)
    _check_feasible(U)
    left, _, right = np.linalg.svd(U, full_matrices=False)
    return left @ right


def constrained_parameters(module) -> list:
    return [(name, p) for name, p in module.named_parameters() if p.constrained]


def apply_semi_ortho(params: Iterable, step_scale: float = 0.125):
    """Run one constraint update on every ``(name, Parameter)`` in ``params``."""
    for _, p in params:
        p.set_ortho(semi_ortho_step(p.ortho_view(), step_scale))


def max_penalty(params: Iterable) -> float:
    return max((semi_ortho_penalty(p.ortho_view()) for _, p in params), default=0.0)


def mean_penalty(params: Iterable) -> float:
    vals = [semi_ortho_penalty(p.ortho_view()) for _, p in params]
    return float(np.mean(vals)) if vals else 0.0
