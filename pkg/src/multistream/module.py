"""Parameter containers with train/infer mode and state (de)serialization."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .errors import DimensionError
from .functional import BatchNormState
from .tensor import DTYPE, Tensor


class Parameter(Tensor):
    """Trainable tensor; ``constrained`` marks it for the semi-orthogonal step.

    A constrained parameter of shape ``(..., n_out)`` is viewed as the matrix
    ``U = data.reshape(-1, n_out).T`` with ``n_out`` rows, so a 2-tap kernel
    ``(2, d_in, b)`` becomes ``b x 2*d_in``.
    """

    def __init__(self, data, name: str | None = None, constrained: bool = False):
        super().__init__(np.array(data, dtype=DTYPE, copy=True, order="C"),
                         requires_grad=True, name=name)
        self.constrained = constrained

    def ortho_view(self) -> np.ndarray:
        return self.data.reshape(-1, self.shape[-1]).T

    def set_ortho(self, U: np.ndarray):
        self.data[...] = np.asarray(U).T.reshape(self.shape)


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for key, value in vars(self).items():
            if isinstance(value, (Parameter, Module, BatchNormState)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module, BatchNormState)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in self._children():
            if isinstance(value, Parameter):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + key + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_batch_norm_states(self, prefix: str = "") -> Iterator[tuple[str, BatchNormState]]:
        for key, value in self._children():
            if isinstance(value, BatchNormState):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_batch_norm_states(prefix + key + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, bn in self.named_batch_norm_states():
            if bn.initialized:
                state[name + ".running_mean"] = bn.running_mean.copy()
                state[name + ".running_var"] = bn.running_var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        expected = {name for name, _ in self.named_parameters()}
        missing = expected - state.keys()
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for name, p in self.named_parameters():
            value = np.asarray(state[name], dtype=DTYPE)
            if value.shape != p.shape:
                raise DimensionError(f"{name}: stored shape {value.shape} != {p.shape}")
            p.data[...] = value
        for name, bn in self.named_batch_norm_states():
            if name + ".running_mean" in state:
                bn.running_mean = np.array(state[name + ".running_mean"], dtype=DTYPE)
                bn.running_var = np.array(state[name + ".running_var"], dtype=DTYPE)
            else:
                bn.running_mean = bn.running_var = None
