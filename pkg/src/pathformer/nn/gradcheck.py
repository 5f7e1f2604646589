"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .params import ParameterStore

STEP = 1e-5
TOLERANCE = 1e-4
# gradients whose norm is below this are compared absolutely: an exactly-zero
# analytic gradient against ~1e-11 finite-difference noise has no meaningful ratio
NORM_FLOOR = 1e-5


@dataclass
class GradCheckResult:
    name: str
    rel_error: float

    @property
    def passed(self) -> bool:
        return self.rel_error < TOLERANCE


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), NORM_FLOOR)
    return float(num / den)


def numeric_gradient(f: Callable[[], float], array: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of ``f`` with respect to every element of ``array`` (modified in place, then restored)."""
    grad = np.zeros_like(array)
    # index in place: reshape(-1) would silently copy a non-contiguous view
    for idx in np.ndindex(array.shape):
        old = array[idx]
        array[idx] = old + step
        up = f()
        array[idx] = old - step
        down = f()
        array[idx] = old
        grad[idx] = (up - down) / (2 * step)
    return grad


def check_store(
    loss_and_backward: Callable[[], float],
    store: ParameterStore,
    names=None,
    extra: dict | None = None,
    step: float = STEP,
    loss_only: Callable[[], float] | None = None,
) -> list[GradCheckResult]:
    """Compare ``store.grads`` after one backward pass with finite differences.

    ``loss_and_backward`` must compute the scalar loss and accumulate the
    gradients into ``store.grads``. ``extra`` maps a label to
    ``(array, analytic_grad)`` pairs for non-parameter inputs; the analytic
    gradients are read after the backward pass. ``loss_only``, when given,
    is used for the finite-difference evaluations instead.
    """
    if store.dtype != np.float64:
        raise ValueError("gradient checks need a float64 store")
    store.zero_grad()
    loss_and_backward()
    analytic = {n: store.grads[n].copy() for n in (names or store.names())}
    extra_analytic = {k: g().copy() for k, (_, g) in (extra or {}).items()}

    def f():
        if loss_only is not None:
            return float(loss_only())
        store.zero_grad()
        return float(loss_and_backward())

    results = []
    for name, grad in analytic.items():
        numeric = numeric_gradient(f, store.params[name], step)
        results.append(GradCheckResult(name, relative_error(grad, numeric)))
    for label, (array, _) in (extra or {}).items():
        numeric = numeric_gradient(f, array, step)
        results.append(GradCheckResult(label, relative_error(extra_analytic[label], numeric)))
    store.zero_grad()
    return results
