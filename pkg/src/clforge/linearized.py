"""Lazy-regime surrogate: the network linearized around its initialization.

The linearized output is

    Phi_lin(x) = Phi(W0, x) + m^{-1/2} sum_i a_i phi'(<w0_i, x>) <x, Delta_i>

so its gradient in Delta never changes.  With the linear loss f(u) = 1 - u
every step on task j adds the same increment eta * G_j, where

    G_j[i] = m^{-1/2} (1/n) sum_v a_i phi'(<w0_i, x_v>) y_v x_v,

and T steps add eta * T * G_j.  For the quadratic activation
(1/n) sum_v phi'(<w0_i, x_v>) y_v x_v = A_j w0_i with the signal matrix
A_j = (1/n) sum_v y_v x_v x_v^T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from clforge import model as nn
from clforge import prng
from clforge.data import Dataset, TaskSpec, TaskStream
from clforge.errors import DimensionMismatch, ModeMismatch, NonFiniteUpdate
from clforge.loss import LossFn, loss_and_grad
from clforge.trainer import RunRecord, TrainConfig, _log_metrics

QUADRATIC = nn.Activation("quadratic")
LINEAR = LossFn("linear")


# --- signal matrices and the infinite-width prediction ----------------------

def signal_matrix(data: Dataset) -> np.ndarray:
    """A = (1/n) sum_v y_v x_v x_v^T (symmetric by construction)."""
    A = (data.X * data.y[:, None]).T @ data.X / data.n
    return 0.5 * (A + A.T)


def infinite_width_prediction(A_matrices, eta: float, T: int, x) -> float:
    """eta * T * x^T (sum_j A_j) x.

    Per-task quadratic forms are combined with ``math.fsum`` so the result is
    exactly invariant to the order of the tasks.
    """
    if len(A_matrices) < 1:
        raise ValueError("need at least one signal matrix")
    x = np.asarray(x, dtype=np.float64)
    return eta * T * math.fsum(float(x @ A @ x) for A in A_matrices)


def u_statistic(data: Dataset, x1, y1: float) -> float:
    """U = (1/n) sum_i y_i <x_i, x1>^2 (the probe label ``y1`` is not used in the sum)."""
    x1 = np.asarray(x1, dtype=np.float64)
    if x1.shape != (data.d,):
        raise DimensionMismatch(f"probe has shape {x1.shape}, data dimension {data.d}")
    return float(np.mean(data.y * (data.X @ x1) ** 2))


# --- the linearized network ------------------------------------------------

@dataclass
class LinearizedNet:
    W0: np.ndarray
    a: np.ndarray
    delta: np.ndarray
    act: nn.Activation = QUADRATIC

    @property
    def m(self) -> int:
        return self.W0.shape[0]

    def outputs(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.W0.shape[1]:
            raise DimensionMismatch("input dimension does not match the network")
        Z0 = X @ self.W0.T
        base = self.act.phi(Z0) @ self.a
        lin = (self.act.dphi(Z0) * (X @ self.delta.T)) @ self.a
        return (base + lin) / math.sqrt(self.m)

    def learned_part(self, X) -> np.ndarray:
        """Output minus the output at initialization."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Z0 = X @ self.W0.T
        return (self.act.dphi(Z0) * (X @ self.delta.T)) @ self.a / math.sqrt(self.m)

    def as_params(self) -> nn.NetParams:
        return nn.NetParams(self.W0 + self.delta, self.a)

    def with_delta(self, delta) -> "LinearizedNet":
        return LinearizedNet(self.W0, self.a, delta, self.act)


def task_direction(params: nn.NetParams, data: Dataset, act: nn.Activation = QUADRATIC):
    """G = m^{-1/2} (1/n) sum_v a_i phi'(<w0_i, x_v>) y_v x_v, i.e. -grad of the linear loss."""
    return nn.weighted_grad(params, data.X, data.y / data.n, act)


@dataclass
class LinearizedRun:
    init: nn.NetParams
    deltas: list = field(default_factory=list)
    act: nn.Activation = QUADRATIC

    def net(self, k: int) -> LinearizedNet:
        """Linearized net after task k (k=0 is the initialization)."""
        return LinearizedNet(self.init.W, self.init.a, self.deltas[k], self.act)

    @property
    def final(self) -> LinearizedNet:
        return self.net(len(self.deltas) - 1)


def train_linearized(stream: TaskStream, cfg: TrainConfig, seed: int,
                     act: nn.Activation = QUADRATIC, loss: LossFn = LINEAR,
                     closed_form: bool = True, params: nn.NetParams | None = None,
                     scale_by_alpha: bool = False) -> LinearizedRun:
    """Continual GD on the linearized network; returns Delta after each task.

    ``closed_form`` writes each task's displacement directly as
    eta * T * G_k (linear loss only).  Otherwise T explicit steps are taken,
    with the tether lam * (Delta - Delta_{k-1}) from task 2 on when
    ``cfg.lam > 0``.  ``scale_by_alpha`` replaces T by alpha_T(eta, lam) for
    tasks k >= 2 in closed form.
    """
    if params is None:
        params = nn.init(cfg.m, stream.d, prng.derive(seed, "init"), cfg.balanced_a)
    if closed_form and loss.kind != "linear":
        raise ModeMismatch(f"closed-form linearized training needs the linear loss, got {loss.kind}")
    run = LinearizedRun(params.copy(), [np.zeros_like(params.W)], act)
    delta = np.zeros_like(params.W)
    for k in range(1, stream.K + 1):
        data = stream.train[k - 1]
        if closed_form:
            steps = cfg.T
            if scale_by_alpha and k >= 2:
                steps = alpha_t(cfg.eta, cfg.lam, cfg.T)
            delta = delta + (cfg.eta * steps) * task_direction(params, data, act)
        else:
            delta = _iterate(run.net(k - 1), data, cfg, loss, lam=cfg.lam if k >= 2 else 0.0)
        run.deltas.append(delta)
    return run


def linearized_record(stream: TaskStream, cfg: TrainConfig, seed: int,
                      act: nn.Activation = QUADRATIC, loss: LossFn = LINEAR,
                      closed_form: bool = True) -> RunRecord:
    """A RunRecord whose snapshots are linearized nets (metrics at task boundaries only)."""
    run = train_linearized(stream, cfg, seed, act, loss, closed_form)
    record = RunRecord()
    for k in range(stream.K + 1):
        net = run.net(k)
        record.snapshots.append(net)
        _log_metrics(record, net, stream, act, loss, max(k, 1), k * cfg.T)
    return record


def _iterate(net: LinearizedNet, data: Dataset, cfg: TrainConfig, loss: LossFn,
             lam: float = 0.0) -> np.ndarray:
    params = nn.NetParams(net.W0, net.a)
    feature_grad = None
    anchor = net.delta
    delta = net.delta.copy()
    for _ in range(cfg.T):
        if loss.kind == "linear":
            # f' = -1 everywhere: the gradient does not depend on Delta
            if feature_grad is None:
                feature_grad = -task_direction(params, data, net.act)
            grad = feature_grad
        else:
            margins = data.y * net.with_delta(delta).outputs(data.X)
            _, dloss = loss_and_grad(loss, margins)
            grad = nn.weighted_grad(params, data.X, dloss * data.y / data.n, net.act)
        if lam > 0.0:
            grad = grad + lam * (delta - anchor)
        delta = delta - cfg.eta * grad
        if not np.all(np.isfinite(delta)):
            raise NonFiniteUpdate("linearized step produced non-finite weights")
    return delta


# --- regularized continual learning -----------------------------------------

def alpha_t(eta: float, lam: float, t) -> float:
    """Effective step count (1 - (1 - eta*lam)^t) / (eta*lam); equals t when lam = 0."""
    x = eta * lam
    if x == 0.0:
        return float(t)
    return float(-np.expm1(t * np.log1p(-x)) / x) if x < 1.0 else (1.0 - (1.0 - x) ** t) / x


def alpha_t_approx(eta: float, lam: float, t) -> float:
    """Smooth approximation (1 - exp(-eta*lam*t)) / (eta*lam)."""
    x = eta * lam
    if x == 0.0:
        return float(t)
    return float(-np.expm1(-x * t) / x)


def regularized_equivalence_check(stream: TaskStream, eta: float, T: int, lam: float,
                                  seed: int, m: int = 200,
                                  act: nn.Activation = QUADRATIC) -> float:
    """Max |W| gap between tethered linearized CL and its alpha_T-rescaled counterpart.

    Run (a) takes explicit tethered steps; run (b) is unregularized closed-form
    training with each later task's displacement scaled by alpha_T / T.
    """
    cfg = TrainConfig(eta=eta, T=T, m=m, lam=lam)
    regularized = train_linearized(stream, cfg, seed, act, closed_form=False)
    rescaled = train_linearized(stream, cfg, seed, act, closed_form=True, scale_by_alpha=True)
    return max(float(np.max(np.abs(a - b))) for a, b in zip(regularized.deltas, rescaled.deltas))


# --- NTK margin by Monte Carlo ----------------------------------------------

def ntk_margin_mc(spec: TaskSpec, x, y: float, samples: int, stream: prng.Stream,
                  chunk: int = 100_000) -> tuple[float, float]:
    """Estimate y * E_z[<z, x> <w_z, x>] with the four-region witness w_z.

    Regions are the sign quadrants of (<z, mu+ + mu->, <z, mu+ - mu->); a zero
    projection counts as positive.  The witness is mu+/|mu+|, -mu-/|mu-|,
    mu-/|mu-|, -mu+/|mu+| on the four regions.  Returns (mean, standard error).
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    u_plus = spec.mu_plus / np.linalg.norm(spec.mu_plus)
    u_minus = spec.mu_minus / np.linalg.norm(spec.mu_minus)
    # witness projections <w_z, x> for regions R1..R4
    wx = np.array([u_plus @ x, -(u_minus @ x), u_minus @ x, -(u_plus @ x)])
    dirs = np.stack([spec.mu_plus + spec.mu_minus, spec.mu_plus - spec.mu_minus, x], axis=1)
    total = 0.0
    total_sq = 0.0
    done = 0
    part = 0
    while done < samples:
        size = min(chunk, samples - done)
        z = prng.gaussian(stream.child(f"chunk/{part}"), (size, spec.d))
        proj = z @ dirs
        region = np.where(proj[:, 0] >= 0, 0, 2) + np.where(proj[:, 1] >= 0, 0, 1)
        vals = y * proj[:, 2] * wx[region]
        total += math.fsum(vals)
        total_sq += math.fsum(vals * vals)
        done += size
        part += 1
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0) * samples / max(samples - 1, 1)
    return mean, math.sqrt(var / samples)
