"""Two-layer network Phi(W, x) = m^{-1/2} sum_i a_i phi(<w_i, x>) with fixed signs a."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from clforge import prng
from clforge.data import Dataset
from clforge.errors import DimensionMismatch

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Activation:
    kind: str

    def __post_init__(self):
        if self.kind not in ("quadratic", "relu", "gelu"):
            raise ValueError(f"unknown activation {self.kind!r}")

    def phi(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "quadratic":
            return 0.5 * t * t
        if self.kind == "relu":
            return np.maximum(t, 0.0)
        return t * ndtr(t)

    def dphi(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "quadratic":
            return t.copy()
        if self.kind == "relu":
            return (t > 0.0).astype(np.float64)
        return ndtr(t) + t * _INV_SQRT_2PI * np.exp(-0.5 * t * t)


@dataclass
class NetParams:
    W: np.ndarray
    a: np.ndarray

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @property
    def p(self) -> int:
        return self.W.size

    def copy(self) -> "NetParams":
        # a is shared: it is never written after init
        return NetParams(self.W.copy(), self.a)


def init(m: int, d: int, stream: prng.Stream, balanced_a: bool = False) -> NetParams:
    """Gaussian first layer, +/-1 output signs (i.i.d. unless ``balanced_a``)."""
    if m < 1 or d < 1:
        raise ValueError("m and d must be >= 1")
    W = prng.gaussian(stream.child("W"), (m, d))
    if balanced_a:
        a = np.where(np.arange(m) < (m + 1) // 2, 1.0, -1.0)
        a = a[prng.permutation(stream.child("a"), m)]
    else:
        a = prng.rademacher(stream.child("a"), m)
    a.setflags(write=False)
    return NetParams(W, a)


def _check(params: NetParams, X: np.ndarray):
    if X.shape[-1] != params.d:
        raise DimensionMismatch(f"input dimension {X.shape[-1]} != network dimension {params.d}")


def outputs(params: NetParams, X, act: Activation) -> np.ndarray:
    """Phi(W, x_j) for every row of X."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _check(params, X)
    Z = X @ params.W.T
    return act.phi(Z) @ params.a / math.sqrt(params.m)


def forward(params: NetParams, x, act: Activation) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("forward expects a single input vector")
    return float(outputs(params, x[None, :], act)[0])


def grad_margin(params: NetParams, x, act: Activation) -> np.ndarray:
    """d Phi / d W for one input: row i is m^{-1/2} a_i phi'(<w_i, x>) x."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("grad_margin expects a single input vector")
    _check(params, x)
    scale = params.a * act.dphi(params.W @ x) / math.sqrt(params.m)
    return np.outer(scale, x)


def batch_forward(params: NetParams, data: Dataset, act: Activation) -> np.ndarray:
    """Margins y_j * Phi(W, x_j).

    Any snapshot object with its own ``outputs(X)`` (e.g. a linearized net)
    is evaluated through that method instead.
    """
    if hasattr(params, "outputs"):
        return data.y * params.outputs(data.X)
    return data.y * outputs(params, data.X, act)


def weighted_grad(params: NetParams, X: np.ndarray, coef: np.ndarray,
                  act: Activation, Z: np.ndarray | None = None) -> np.ndarray:
    """sum_j coef_j * dPhi(W, x_j)/dW, computed with two matrix products.

    ``Z`` may carry a precomputed X @ W.T.
    """
    _check(params, X)
    if Z is None:
        Z = X @ params.W.T
    H = act.dphi(Z)
    H *= coef[:, None]
    return (params.a / math.sqrt(params.m))[:, None] * (H.T @ X)
