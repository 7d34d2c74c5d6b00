"""Closed-form forgetting and generalization-gap bound shapes.

The theorems state orders of growth only; every unknown constant defaults
to 1 and the poly-log factor in the second forgetting term is log(d)^2.
Values are for plotting trends, not certified upper bounds.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from clforge.errors import MissingLossTrace

POLYLOG_NOTE = "polylog(d) := log(d)^2"


@dataclass
class BoundInputs:
    d: int
    n: int
    m: float
    T: int
    K: int
    k: int
    eta: float
    delta: float = 0.05
    S: dict = field(default_factory=dict)  # task -> cumulative train loss sum_t F_hat_j(w_j^(t))

    def __post_init__(self):
        if not 1 <= self.k <= self.K:
            raise ValueError("need 1 <= k <= K")
        if min(self.d, self.n, self.m, self.eta) <= 0 or self.T < 0:
            raise ValueError("d, n, m, eta must be positive and T non-negative")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")


def thm1_terms(b: BoundInputs, C1=1.0, C2=1.0, C3=1.0):
    """The sample-size, dimension and width terms of the train-forgetting bound."""
    eta_T = b.eta * b.T
    gap = math.sqrt(b.K - b.k)
    sample = C1 * eta_T * gap / (b.d * math.sqrt(b.n))
    dim = C2 * eta_T * gap / (b.d ** 2 * math.log(b.d) ** 2)
    width = C3 * eta_T ** 2 * b.K ** 2 / math.sqrt(b.m)
    return sample, dim, width


def thm1_forgetting_bound(b: BoundInputs, C1=1.0, C2=1.0, C3=1.0) -> float:
    return sum(thm1_terms(b, C1, C2, C3))


def thm3_gen_gap_bound(b: BoundInputs, C=1.0) -> float:
    """eta T exp(eta T (K - k + 1) / sqrt(m)) / n."""
    eta_T = b.eta * b.T
    return C * eta_T * math.exp(eta_T * (b.K - b.k + 1) / math.sqrt(b.m)) / b.n


def thm4_gen_gap_bound(b: BoundInputs, C=1.0) -> float:
    """(eta / n) exp((eta / sqrt(m)) sum_{j>k} S_j) S_k from logged cumulative losses."""
    needed = range(b.k, b.K + 1)
    missing = [j for j in needed if j not in b.S]
    if missing:
        raise MissingLossTrace(f"no cumulative loss for tasks {missing}")
    later = math.fsum(b.S[j] for j in range(b.k + 1, b.K + 1))
    return C * (b.eta / b.n) * math.exp(b.eta * later / math.sqrt(b.m)) * b.S[b.k]


def cumulative_losses(loss_trace: dict) -> dict:
    """S_j = sum_t F_hat_j(w_j^(t)) from a RunRecord.loss_trace."""
    return {j: math.fsum(np.asarray(v, dtype=np.float64)) for j, v in loss_trace.items()}


@dataclass
class Recipe:
    n: int
    m: int
    eta_T: float
    capped: bool


def complexity_recipe(d: int, K: int, c_n=1.0, c_m=1.0, c_T=1.0,
                      m_cap: int = 20_000) -> Recipe:
    """n ~ d^2 K log d, m ~ d^8 K^4 (capped), eta*T ~ d^2."""
    if d < 2:
        raise ValueError("d must be >= 2")
    n = int(math.ceil(c_n * d ** 2 * K * math.log(d)))
    m_ideal = c_m * float(d) ** 8 * K ** 4
    capped = m_ideal > m_cap
    if capped:
        warnings.warn(f"width recipe {m_ideal:.3g} exceeds cap {m_cap}; using the cap", stacklevel=2)
    m = int(m_cap if capped else math.ceil(m_ideal))
    return Recipe(n=n, m=m, eta_T=c_T * d ** 2, capped=capped)
