"""Forgetting measures computed from boundary snapshots.

For task k and a later boundary K' >= k (snapshot w_{K'}):

    train-time forgetting   F_hat_k(w_K') - F_hat_k(w_k)
    test-time forgetting    F_k(w_K')     - F_k(w_k)
    delayed gen. gap        F_k(w_K')     - F_hat_k(w_K')
    pre gap                 F_hat_k(w_k)  - F_k(w_k)

so that test-time = train-time + delayed gap + pre gap.  Population losses
F_k are estimated on each task's held-out split.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from clforge import model as nn
from clforge.data import Dataset, TaskStream
from clforge.errors import MissingSnapshot
from clforge.loss import LossFn, misclassification


def eval_loss(params: nn.NetParams, data: Dataset, act: nn.Activation,
              loss: LossFn) -> tuple[float, float]:
    """(mean loss, misclassification rate) of ``params`` on ``data``."""
    margins = nn.batch_forward(params, data, act)
    return float(np.mean(loss.f(margins))), misclassification(margins)


def standard_error(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(values.size))


@dataclass
class ForgettingEntry:
    k: int
    K_prime: int
    f_tr: float
    f_ts: float
    gen_gap: float
    pre_gap: float
    f_tr_err: float
    f_ts_err: float
    gen_gap_err: float
    pre_gap_err: float
    test_loss_se: float = 0.0


@dataclass
class ForgettingReport:
    entries: list

    def get(self, k: int, K_prime: int) -> ForgettingEntry:
        for e in self.entries:
            if e.k == k and e.K_prime == K_prime:
                return e
        raise KeyError((k, K_prime))

    def rows(self):
        return [asdict(e) for e in self.entries]


def decompose(train_now, test_now, train_then, test_then):
    """Return (train-time, test-time, delayed gap, pre gap) from four losses."""
    return (train_now - train_then, test_now - test_then,
            test_now - train_now, train_then - test_then)


def forgetting(snapshots, stream: TaskStream, act: nn.Activation,
               loss: LossFn) -> ForgettingReport:
    """Forgetting for every (k, K') with 1 <= k <= K' <= K.

    ``snapshots`` is a RunRecord or a list [w_0, w_1, ..., w_K].
    """
    snaps = getattr(snapshots, "snapshots", snapshots)
    K = stream.K
    if len(snaps) < K + 1:
        raise MissingSnapshot(f"need {K + 1} boundary snapshots, got {len(snaps)}")
    cache = {}

    def losses(j, k):
        # (train loss, train err, test loss, test err, test-loss SE) of task k at w_j
        if (j, k) not in cache:
            tr = eval_loss(snaps[j], stream.train[k - 1], act, loss)
            te_margins = nn.batch_forward(snaps[j], stream.test[k - 1], act)
            te_values = loss.f(te_margins)
            cache[j, k] = (tr[0], tr[1], float(np.mean(te_values)),
                           misclassification(te_margins), standard_error(te_values))
        return cache[j, k]

    entries = []
    for k in range(1, K + 1):
        then = losses(k, k)
        for Kp in range(k, K + 1):
            now = losses(Kp, k)
            f_tr, f_ts, gap, pre = decompose(now[0], now[2], then[0], then[2])
            e_tr, e_ts, e_gap, e_pre = decompose(now[1], now[3], then[1], then[3])
            entries.append(ForgettingEntry(k, Kp, f_tr, f_ts, gap, pre,
                                           e_tr, e_ts, e_gap, e_pre, now[4]))
    return ForgettingReport(entries)


REPORT_COLUMNS = ["run_id", "k", "K_prime", "f_tr", "f_ts", "gen_gap", "pre_gap",
                  "f_tr_err", "f_ts_err"]
RESULT_COLUMNS = ["run_id", "seed", "phase_task", "iter", "eval_task", "split", "loss", "err"]


def write_csv(path, rows, columns):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore",
                                lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: _fmt(row[c]) for c in columns})


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value
