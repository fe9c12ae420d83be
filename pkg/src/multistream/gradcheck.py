"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import ConfigError
from .tensor import Tensor, no_grad


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    max_abs_error: float
    checked: int


@dataclass
class GradCheckReport:
    tolerance: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.max_rel_error <= self.tolerance for e in self.entries)

    @property
    def offenders(self) -> list[GradCheckEntry]:
        return [e for e in self.entries if e.max_rel_error > self.tolerance]

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    def format_table(self) -> str:
        width = max([len(e.name) for e in self.entries] + [9])
        lines = [f"{'parameter':<{width}}  {'max_rel':>10}  {'max_abs':>10}  {'coords':>6}  status"]
        for e in self.entries:
            status = "ok" if e.max_rel_error <= self.tolerance else "FAIL"
            lines.append(f"{e.name:<{width}}  {e.max_rel_error:10.3e}  "
                         f"{e.max_abs_error:10.3e}  {e.checked:6d}  {status}")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict}: max relative error {self.max_rel_error:.3e} "
                     f"(tolerance {self.tolerance:.1e})")
        return "\n".join(lines)


def relative_error(analytic, numeric, floor: float = 1e-8):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def finite_diff_check(loss_fn: Callable[[], Tensor],
                      params: Iterable[tuple[str, Tensor]] | dict,
                      eps: float = 1e-6,
                      tolerance: float = 1e-4,
                      max_coords: int | None = None,
                      seed: int = 0,
                      floor: float = 1e-8) -> GradCheckReport:
    """Compare backprop gradients to central differences of ``loss_fn``.

    ``loss_fn`` must rebuild the graph on every call and be deterministic
    (fixed dropout masks, no parameter-dependent randomness). When a tensor
    has more than ``max_coords`` entries a seeded subset is probed.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ConfigError(f"finite-difference eps must lie in [1e-7, 1e-3], got {eps}")
    named = list(params.items()) if isinstance(params, dict) else list(params)
    for _, p in named:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in named}

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for name, p in named:
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        else:
            coords = np.arange(flat.size)
        numeric = np.empty(coords.size)
        with no_grad():
            for i, c in enumerate(coords):
                orig = flat[c]
                flat[c] = orig + eps
                f_plus = loss_fn().item()
                flat[c] = orig - eps
                f_minus = loss_fn().item()
                flat[c] = orig
                numeric[i] = (f_plus - f_minus) / (2.0 * eps)
        a = analytic[name].reshape(-1)[coords]
        rel = relative_error(a, numeric, floor)
        report.entries.append(GradCheckEntry(
            name=name,
            max_rel_error=float(rel.max(initial=0.0)),
            max_abs_error=float(np.abs(a - numeric).max(initial=0.0)),
            checked=int(coords.size),
        ))
    for _, p in named:
        p.grad = None
    return report
