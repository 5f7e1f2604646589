"""Named parameter arrays with gradient and optimizer-state slots, and the Adam update."""

from __future__ import annotations

import numpy as np


class NumericError(FloatingPointError):
    """NaN or Inf where a finite value is required."""


class ParameterStore:
    """Ordered mapping of parameter name to array, with a matching gradient buffer.

    Gradients are accumulated in place by layer backward passes and cleared
    by :func:`adam_step` (or :meth:`zero_grad`).
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> np.ndarray:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=self.dtype)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def set(self, name: str, value) -> None:
        """Overwrite a parameter's values in place (shape must match)."""
        value = np.asarray(value, dtype=self.dtype)
        if value.shape != self.params[name].shape:
            raise ValueError(f"shape mismatch for {name!r}: {value.shape} vs {self.params[name].shape}")
        self.params[name][...] = value

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def astype(self, dtype) -> "ParameterStore":
        other = ParameterStore(dtype)
        for name, value in self.params.items():
            other.add(name, value)
        for name in self.m:
            other.m[name] = self.m[name].astype(dtype)
            other.v[name] = self.v[name].astype(dtype)
        other.step = self.step
        return other


def adam_step(store: ParameterStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update over every parameter; gradients are zeroed afterwards."""
    for name, g in store.grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    store.step += 1
    t = store.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, param in store.params.items():
        g = store.grads[name]
        if name not in store.m:
            store.m[name] = np.zeros_like(param)
            store.v[name] = np.zeros_like(param)
        m, v = store.m[name], store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        param -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
        g.fill(0.0)
