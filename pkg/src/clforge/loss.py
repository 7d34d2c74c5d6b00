"""Margin losses f(u), u = y * Phi(w, x)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossFn:
    kind: str

    def __post_init__(self):
        if self.kind not in LOSSES:
            raise ValueError(f"unknown loss {self.kind!r}; choose from {sorted(LOSSES)}")

    @property
    def self_bounded(self) -> bool:
        return self.kind == "logistic"

    def f(self, u):
        return LOSSES[self.kind][0](np.asarray(u, dtype=np.float64))

    def df(self, u):
        return LOSSES[self.kind][1](np.asarray(u, dtype=np.float64))


def _hinge(u):
    return np.maximum(1.0 - u, 0.0)


def _hinge_d(u):
    # subgradient at the kink u = 1 is 0
    return np.where(u < 1.0, -1.0, 0.0)


def _logistic(u):
    return np.logaddexp(0.0, -u)


def _logistic_d(u):
    # -1 / (1 + e^u), written to avoid overflow for large |u|
    return -np.exp(-np.logaddexp(0.0, u))


def _linear(u):
    return 1.0 - u


def _linear_d(u):
    return -np.ones_like(u)


LOSSES = {
    "hinge": (_hinge, _hinge_d),
    "logistic": (_logistic, _logistic_d),
    "linear": (_linear, _linear_d),
}


def loss_and_grad(loss: LossFn, margins) -> tuple[float, np.ndarray]:
    """Mean loss over margins and the per-sample derivative f'(u_i)."""
    margins = np.asarray(margins, dtype=np.float64)
    if margins.size < 1:
        raise ValueError("need at least one margin")
    return float(np.mean(loss.f(margins))), loss.df(margins)


def misclassification(margins) -> float:
    """Fraction of margins <= 0; ties count as errors."""
    margins = np.asarray(margins, dtype=np.float64)
    if margins.size < 1:
        raise ValueError("need at least one margin")
    return float(np.count_nonzero(margins <= 0.0)) / margins.size
