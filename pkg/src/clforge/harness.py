"""Sweep execution, result files, bound tables and plots."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from clforge import __version__, bounds, data, linearized, metrics, mnist, model, prng, trainer
from clforge.config import ExperimentConfig
from clforge.errors import NonFiniteUpdate, SchemaMismatch
from clforge.loss import LossFn

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MNIST_CACHE = Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "clforge" / "mnist"


def _n_list(n_train, K):
    return list(n_train) if isinstance(n_train, list) else [n_train] * K


def make_stream(params: dict, seed: int) -> data.TaskStream:
    d = params["data"]
    stream = prng.derive(seed, "data")
    if d["source"] == "mnist":
        mn = d["mnist"]
        images, labels = mnist.resolve(mn["dir"] or None, cache_dir=MNIST_CACHE)
        pairs = [tuple(p) for p in mn["pairs"]]
        return mnist.build_stream(images, labels, pairs, _n_list(d["n_train"], len(pairs)),
                                  d["n_test"], stream, mn["normalize"])
    sigma = d["sigma_coeff"] / math.sqrt(d["d"])
    norm = d["mean_norm"] or None
    return data.build_stream(d["d"], d["K"], d["n_train"], d["n_test"], sigma, stream, norm=norm)


def train_config(params: dict) -> trainer.TrainConfig:
    t, m = params["train"], params["model"]
    return trainer.TrainConfig(eta=float(t["eta"]), T=t["T"], m=m["m"],
                               batch_size=t["batch_size"], lam=float(t["lambda"]),
                               eval_every=t["eval_every"], balanced_a=m["balanced_a"])


def run_single(params: dict, seed: int):
    """Train one (cell, seed); returns (RunRecord, ForgettingReport)."""
    stream = make_stream(params, seed)
    act = model.Activation(params["model"]["activation"])
    loss = LossFn(params["train"]["loss"])
    cfg = train_config(params)
    if params["model"]["kind"] == "linearized":
        closed = params["model"]["linearized"]["closed_form"]
        record = linearized.linearized_record(stream, cfg, seed, act, loss, closed)
    else:
        record = trainer.train_stream(stream, cfg, act, loss, seed)
    return record, metrics.forgetting(record, stream, act, loss)


def _job(args):
    cell, seed = args
    try:
        record, report = run_single(cell.params, seed)
    except NonFiniteUpdate as exc:
        raise NonFiniteUpdate(f"cell {cell.index} {cell.axes} seed {seed}: {exc}") from None
    return record.metrics, report.rows()


def _axis_value(v):
    return json.dumps(v) if isinstance(v, (list, dict)) else v


def run(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> dict:
    """Run every cell x seed and write results.csv, report.csv and meta.json."""
    out = Path(out_dir or cfg.out_dir or f"runs/{cfg.name}")
    out.mkdir(parents=True, exist_ok=True)
    cells = cfg.cells()
    tasks = [(cell, seed) for cell in cells for seed in cfg.seed_list]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_job, tasks))
    else:
        outputs = [_job(t) for t in tasks]

    axes = cfg.axis_names()
    result_rows, report_rows = [], []
    for (cell, seed), (rows, rep) in zip(tasks, outputs):
        run_id = f"c{cell.index:03d}-s{seed}"
        extra = {a: _axis_value(cell.axes[a]) for a in axes}
        for r in rows:
            result_rows.append({**extra, "run_id": run_id, "seed": seed, **r})
        for r in rep:
            report_rows.append({**extra, "run_id": run_id, **r})
    metrics.write_csv(out / "results.csv", result_rows, axes + metrics.RESULT_COLUMNS)
    metrics.write_csv(out / "report.csv", report_rows, axes + metrics.REPORT_COLUMNS)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "code_version": __version__,
        "name": cfg.name,
        "config_source": str(cfg.source),
        "config": cfg.raw,
        "seeds": cfg.seed_list,
        "seed_count": cfg.seeds,
        "cells": [{"index": c.index, "axes": c.axes} for c in cells],
        "constants": {**cfg.base["bounds"], "polylog": bounds.POLYLOG_NOTE},
        "results_columns": axes + metrics.RESULT_COLUMNS,
        "report_columns": axes + metrics.REPORT_COLUMNS,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    log.info("wrote %d result rows for %d cells to %s", len(result_rows), len(cells), out)
    return {"out_dir": out, "results": result_rows, "report": report_rows}


# --- bounds ----------------------------------------------------------------

BOUND_COLUMNS = ["d", "n", "m", "T", "K", "k", "eta", "thm1_sample", "thm1_dim", "thm1_width",
                 "thm1", "thm3", "recipe_n", "recipe_m", "recipe_eta_T", "recipe_capped"]


def bounds_table(cfg: ExperimentConfig) -> list:
    rows = []
    for cell in cfg.cells():
        p = cell.params
        dd, b = p["data"], p["bounds"]
        if dd["source"] == "mnist":
            d, K = 784, len(dd["mnist"]["pairs"])
        else:
            d, K = dd["d"], dd["K"]
        ns = _n_list(dd["n_train"], K)
        with_warn = bounds.complexity_recipe(d, K, b["c_n"], b["c_m"], b["c_T"], b["m_cap"])
        for k in range(1, K + 1):
            bi = bounds.BoundInputs(d=d, n=ns[k - 1], m=p["model"]["m"], T=p["train"]["T"], K=K,
                                    k=k, eta=float(p["train"]["eta"]), delta=b["delta"])
            terms = bounds.thm1_terms(bi, b["C1"], b["C2"], b["C3"])
            row = {a: _axis_value(v) for a, v in cell.axes.items()}
            row.update(d=d, n=bi.n, m=bi.m, T=bi.T, K=K, k=k, eta=bi.eta,
                       thm1_sample=terms[0], thm1_dim=terms[1], thm1_width=terms[2],
                       thm1=math.fsum(terms), thm3=bounds.thm3_gen_gap_bound(bi, b["C_gap"]),
                       recipe_n=with_warn.n, recipe_m=with_warn.m,
                       recipe_eta_T=with_warn.eta_T, recipe_capped=with_warn.capped)
            rows.append(row)
    return rows


def write_bounds(cfg: ExperimentConfig, stream):
    rows = bounds_table(cfg)
    columns = cfg.axis_names() + BOUND_COLUMNS
    writer = csv.DictWriter(stream, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for r in rows:
        writer.writerow({c: repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns})


# --- plots -----------------------------------------------------------------

def read_results(path) -> tuple[list, list]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        columns = reader.fieldnames or []
        missing = [c for c in metrics.RESULT_COLUMNS if c not in columns]
        if missing:
            raise SchemaMismatch(f"{path}: missing column '{missing[0]}'")
        rows = list(reader)
    for r in rows:
        for key in ("seed", "phase_task", "iter", "eval_task"):
            r[key] = int(r[key])
        for key in ("loss", "err"):
            r[key] = float(r[key])
    panel_cols = [c for c in columns if c not in metrics.RESULT_COLUMNS]
    return rows, panel_cols


def _panel_key(row, panel_cols):
    return tuple(row[c] for c in panel_cols)


def _panel_title(key, panel_cols):
    return ", ".join(f"{c}={v}" for c, v in zip(panel_cols, key)) or "all runs"


def _band(ax, xs, per_seed, label):
    """Median line with an interquartile band over seeds."""
    arr = np.array(per_seed, dtype=float)
    med = np.median(arr, axis=0)
    lo, hi = np.percentile(arr, [25, 75], axis=0)
    ax.plot(xs, med, marker="o" if len(xs) == 1 else None, label=label)
    if len(per_seed) > 1:
        ax.fill_between(xs, lo, hi, alpha=0.25)


def _series(rows, x_of, y_of):
    """{seed: {x: y}} -> (sorted xs common to all seeds, per-seed y lists)."""
    by_seed = {}
    for r in rows:
        by_seed.setdefault(r["run_id"], {})[x_of(r)] = y_of(r)
    if not by_seed:
        return [], []
    xs = sorted(set.intersection(*(set(v) for v in by_seed.values())))
    return xs, [[v[x] for x in xs] for v in by_seed.values()]


def plot(results_csv, recipe: dict, out_dir=None, name: str = "plot") -> list:
    """Render SVG figures from a results CSV; returns the written paths.

    ``recipe`` is the resolved [plot] table: kind, metric, split.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows, panel_cols = read_results(results_csv)
    out = Path(out_dir or Path(results_csv).parent)
    out.mkdir(parents=True, exist_ok=True)
    kind, metric, split = recipe["kind"], recipe["metric"], recipe["split"]
    panels = {}
    for r in rows:
        panels.setdefault(_panel_key(r, panel_cols), []).append(r)
    plt.rcParams["svg.hashsalt"] = "clforge"
    paths = []

    if kind == "curves":
        fig, axes = plt.subplots(1, len(panels), figsize=(4.5 * len(panels), 3.6), squeeze=False)
        for ax, (key, prow) in zip(axes[0], sorted(panels.items())):
            prow = [r for r in prow if r["split"] == split]
            for task in sorted({r["eval_task"] for r in prow}):
                trow = [r for r in prow if r["eval_task"] == task]
                xs, ys = _series(trow, lambda r: r["iter"], lambda r: r[metric])
                _band(ax, xs, ys, f"task {task}")
            ax.set_title(_panel_title(key, panel_cols), fontsize=8)
            ax.set_xlabel("iteration")
            ax.set_ylabel(f"{split} {metric}")
            ax.legend(fontsize=7)
    else:
        fig, ax = plt.subplots(figsize=(5, 3.6))
        for key, prow in sorted(panels.items()):
            trow = [r for r in prow if r["eval_task"] == 1 and r["split"] == split]
            if kind == "task1_vs_task":
                last = {}
                for r in trow:
                    k = (r["run_id"], r["phase_task"])
                    if k not in last or r["iter"] > last[k]["iter"]:
                        last[k] = r
                xs, ys = _series(last.values(), lambda r: r["phase_task"], lambda r: r[metric])
                ax.set_xlabel("task index k")
                ax.set_ylabel(f"task 1 {split} {metric} at w_k")
            else:  # forgetting_vs_iter: task-1 change since the end of its own phase
                base = {}
                for r in trow:
                    if r["phase_task"] == 1 and r["iter"] >= base.get(r["run_id"], (-1, 0))[0]:
                        base[r["run_id"]] = (r["iter"], r[metric])
                later = [r for r in trow if r["phase_task"] >= 2 or r["iter"] == base[r["run_id"]][0]]
                xs, ys = _series(later, lambda r: r["iter"],
                                 lambda r: r[metric] - base[r["run_id"]][1])
                ax.set_xlabel("iteration")
                ax.set_ylabel(f"task 1 {split} {metric} forgetting")
            if xs:
                _band(ax, xs, ys, _panel_title(key, panel_cols))
        ax.legend(fontsize=7)
    fig.tight_layout()
    path = out / f"{name}.svg"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    paths.append(path)
    return paths
