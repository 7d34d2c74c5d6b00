"""Sequential gradient descent over a stream of tasks.

Task k starts from the weights left by task k-1 and runs ``T`` steps on its
own training set only.  With ``lam > 0`` every task after the first adds the
tether (lam/2) * ||W - W_{k-1}||^2 to its objective.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from clforge import prng
from clforge import model as nn
from clforge.data import Dataset, TaskStream
from clforge.errors import NonFiniteUpdate
from clforge.loss import LossFn, loss_and_grad, misclassification

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    eta: float
    T: int
    m: int = 1000
    batch_size: int = 0
    lam: float = 0.0
    eval_every: int = 0
    balanced_a: bool = False
    snapshot_every: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.T < 0:
            raise ValueError("T must be non-negative")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.m < 1:
            raise ValueError("m must be >= 1")


@dataclass
class RunRecord:
    """Boundary snapshots (index 0 = init, k = after task k) plus metric rows."""

    snapshots: list = field(default_factory=list)
    metrics: list = field(default_factory=list)
    loss_trace: dict = field(default_factory=dict)
    inner_snapshots: list = field(default_factory=list)

    @property
    def final(self) -> nn.NetParams:
        return self.snapshots[-1]

    @property
    def init(self) -> nn.NetParams:
        return self.snapshots[0]


def _step(params: nn.NetParams, batch: Dataset, act: nn.Activation, loss: LossFn,
          eta: float, lam: float = 0.0, anchor: nn.NetParams | None = None):
    Z = batch.X @ params.W.T
    margins = batch.y * (act.phi(Z) @ params.a) / math.sqrt(params.m)
    value, dloss = loss_and_grad(loss, margins)
    coef = dloss * batch.y / batch.n
    grad = nn.weighted_grad(params, batch.X, coef, act, Z)
    if lam > 0.0:
        grad = grad + lam * (params.W - anchor.W)
    W = params.W - eta * grad
    if not np.all(np.isfinite(W)):
        raise NonFiniteUpdate("gradient step produced non-finite weights")
    return nn.NetParams(W, params.a), value


def gd_step(params, batch, act, loss, eta, lam=0.0, anchor=None) -> nn.NetParams:
    """One step W <- W - eta * (grad F_hat(W; batch) + lam * (W - anchor))."""
    if lam > 0.0 and anchor is None:
        raise ValueError("regularized step needs an anchor")
    return _step(params, batch, act, loss, eta, lam, anchor)[0]


def evaluate(params, data: Dataset, act, loss) -> tuple[float, float]:
    margins = nn.batch_forward(params, data, act)
    return float(np.mean(loss.f(margins))), misclassification(margins)


def _log_metrics(record, params, stream, act, loss, phase_task, it):
    for j in range(stream.K):
        for split, sets in (("train", stream.train), ("test", stream.test)):
            value, err = evaluate(params, sets[j], act, loss)
            record.metrics.append({"phase_task": phase_task, "iter": it, "eval_task": j + 1,
                                   "split": split, "loss": value, "err": err})


def _batches(data: Dataset, batch_size: int, stream: prng.Stream):
    """Endless mini-batches, without replacement within an epoch."""
    epoch = 0
    while True:
        perm = prng.permutation(stream.child(f"epoch/{epoch}"), data.n)
        for start in range(0, data.n - batch_size + 1, batch_size):
            idx = np.sort(perm[start:start + batch_size])
            yield Dataset(data.X[idx], data.y[idx], data.task_index)
        epoch += 1


def train_task(params, k: int, stream: TaskStream, cfg: TrainConfig, act, loss,
               record: RunRecord | None, seed: int = 0, anchor=None) -> nn.NetParams:
    """Run ``cfg.T`` steps on task k (1-based) and log into ``record``.

    ``record=None`` trains silently (no metrics, traces or snapshots).
    """
    data = stream.train[k - 1]
    lam = cfg.lam if (k >= 2 and anchor is not None) else 0.0
    offset = (k - 1) * cfg.T
    full = cfg.batch_size <= 0 or cfg.batch_size >= data.n
    batches = None if full else _batches(data, cfg.batch_size, prng.derive(seed, f"batch/{k}"))
    trace = np.empty(cfg.T)
    for t in range(cfg.T):
        batch = data if full else next(batches)
        params, trace[t] = _step(params, batch, act, loss, cfg.eta, lam, anchor)
        done = t + 1
        if record is None:
            continue
        if cfg.eval_every > 0 and done % cfg.eval_every == 0 and done < cfg.T:
            _log_metrics(record, params, stream, act, loss, k, offset + done)
        if cfg.snapshot_every > 0 and done % cfg.snapshot_every == 0:
            record.inner_snapshots.append((k, done, params.copy()))
    if record is None:
        return params
    record.loss_trace[k] = trace
    _log_metrics(record, params, stream, act, loss, k, offset + cfg.T)
    record.snapshots.append(params.copy())
    return params


def train_stream(stream: TaskStream, cfg: TrainConfig, act, loss, seed: int,
                 params: nn.NetParams | None = None) -> RunRecord:
    """Algorithm: init once, then train tasks 1..K in order."""
    if params is None:
        params = nn.init(cfg.m, stream.d, prng.derive(seed, "init"), cfg.balanced_a)
    record = RunRecord()
    record.snapshots.append(params.copy())
    _log_metrics(record, params, stream, act, loss, 1, 0)
    anchor = None
    for k in range(1, stream.K + 1):
        params = train_task(params, k, stream, cfg, act, loss, record, seed, anchor)
        anchor = params.copy() if cfg.lam > 0 else None
        log.debug("finished task %d", k)
    return record


def leave_one_out_run(stream: TaskStream, cfg: TrainConfig, act, loss, seed: int,
                      k: int, i: int) -> nn.NetParams:
    """Final weights of the same run with sample i of task k removed."""
    if stream.train[k - 1].n < 2:
        raise ValueError("leave-one-out needs at least two samples")
    train = list(stream.train)
    train[k - 1] = train[k - 1].without(i)
    reduced = TaskStream(stream.tasks, train, stream.test, stream.meta)
    params = nn.init(cfg.m, stream.d, prng.derive(seed, "init"), cfg.balanced_a)
    anchor = None
    for j in range(1, stream.K + 1):
        params = train_task(params, j, reduced, cfg, act, loss, None, seed, anchor)
        anchor = params.copy() if cfg.lam > 0 else None
    return params
