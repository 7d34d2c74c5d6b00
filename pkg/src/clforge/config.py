"""Experiment configuration files (TOML).

A config has top-level scalars (``name``, ``seed``, ``seeds``, ``out_dir``,
``max_cells``) and the tables ``[data]``, ``[data.mnist]``, ``[model]``,
``[model.linearized]``, ``[train]``, ``[bounds]``, ``[plot]``.  Two tables
describe the grid of runs:

``[sweep]``
    maps a dotted key (``"train.eta"``, ``"data.n_train"`` ...) to a list of
    values; cells are the cartesian product of all axes.
``[[variant]]``
    each entry is a table of dotted-key overrides plus an optional ``label``;
    the grid is variants x sweep.

Every cell runs seeds ``seed, seed+1, ..., seed+seeds-1``.
"""

from __future__ import annotations

import copy
import itertools
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from clforge.errors import ConfigError

_NUM = (int, float)
_SIZES = (int, list)

# key -> (accepted types, default, allowed values or None)
SCHEMA = {
    "data": {
        "source": (str, "xor", ("xor", "mnist")),
        "d": (int, 50, None),
        "K": (int, 3, None),
        "n_train": (_SIZES, 2500, None),
        "n_test": (int, 10_000, None),
        "sigma_coeff": (_NUM, 0.1, None),
        "mean_norm": (_NUM, 0.0, None),  # 0 keeps the standard sqrt(2/d) means
        "mnist": {
            "pairs": (list, [[0, 1], [2, 3]], None),
            "normalize": (bool, True, None),
            "dir": (str, "", None),
        },
    },
    "model": {
        "kind": (str, "finite", ("finite", "linearized")),
        "m": (int, 1000, None),
        "activation": (str, "quadratic", ("quadratic", "relu", "gelu")),
        "balanced_a": (bool, False, None),
        "linearized": {
            "closed_form": (bool, True, None),
        },
    },
    "train": {
        "loss": (str, "linear", ("hinge", "logistic", "linear")),
        "eta": (_NUM, 1.0, None),
        "T": (int, 100, None),
        "lambda": (_NUM, 0.0, None),
        "batch_size": (int, 0, None),
        "eval_every": (int, 0, None),
    },
    "bounds": {
        "C1": (_NUM, 1.0, None),
        "C2": (_NUM, 1.0, None),
        "C3": (_NUM, 1.0, None),
        "C_gap": (_NUM, 1.0, None),
        "delta": (_NUM, 0.05, None),
        "c_n": (_NUM, 1.0, None),
        "c_m": (_NUM, 1.0, None),
        "c_T": (_NUM, 1.0, None),
        "m_cap": (int, 20_000, None),
    },
    "plot": {
        "kind": (str, "curves", ("curves", "task1_vs_task", "forgetting_vs_iter")),
        "metric": (str, "err", ("err", "loss")),
        "split": (str, "test", ("train", "test")),
    },
}

TOP_LEVEL = {
    "name": (str, "experiment", None),
    "seed": (int, 0, None),
    "seeds": (int, 5, None),
    "out_dir": (str, "", None),
    "max_cells": (int, 256, None),
}


@dataclass
class Cell:
    index: int
    axes: dict            # axis name -> value (sweep keys and "variant")
    params: dict          # fully resolved nested sections


@dataclass
class ExperimentConfig:
    name: str
    seed: int
    seeds: int
    out_dir: str
    max_cells: int
    base: dict
    sweep: dict = field(default_factory=dict)
    variants: list = field(default_factory=list)
    raw: dict = field(default_factory=dict)
    source: str = ""

    @property
    def seed_list(self) -> list:
        return list(range(self.seed, self.seed + self.seeds))

    def axis_names(self) -> list:
        names = ["variant"] if self.variants else []
        return names + list(self.sweep)

    def cells(self) -> list:
        variants = self.variants or [{"label": None, "overrides": {}}]
        combos = list(itertools.product(*self.sweep.values())) if self.sweep else [()]
        out = []
        for variant in variants:
            for combo in combos:
                params = copy.deepcopy(self.base)
                axes = {}
                if self.variants:
                    axes["variant"] = variant["label"]
                for key, value in variant["overrides"].items():
                    _set(params, key, value)
                for key, value in zip(self.sweep, combo):
                    _set(params, key, value)
                    axes[key] = value
                out.append(Cell(len(out), axes, params))
        return out


def _set(tree, dotted, value):
    parts = dotted.split(".")
    for p in parts[:-1]:
        tree = tree[p]
    tree[parts[-1]] = value


def _lookup(schema, dotted):
    node = schema
    for p in dotted.split("."):
        if not isinstance(node, dict) or p not in node:
            return None
        node = node[p]
    return node if isinstance(node, tuple) else None


def _check_value(key, value, spec):
    types, _, choices = spec
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(f"key '{key}': expected {_type_name(types)}, got a boolean")
    if not isinstance(value, types):
        raise ConfigError(f"key '{key}': expected {_type_name(types)}, got {type(value).__name__}")
    if choices is not None and value not in choices:
        raise ConfigError(f"key '{key}': {value!r} is not one of {', '.join(choices)}")


def _type_name(types):
    types = types if isinstance(types, tuple) else (types,)
    return " or ".join(t.__name__ for t in types)


def _fill(schema, given, prefix):
    out = {}
    for key in given:
        if key not in schema:
            raise ConfigError(f"unknown key '{prefix}{key}'")
    for key, spec in schema.items():
        if isinstance(spec, dict):
            sub = given.get(key, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"key '{prefix}{key}': expected a table")
            out[key] = _fill(spec, sub, f"{prefix}{key}.")
        elif key in given:
            _check_value(prefix + key, given[key], spec)
            out[key] = given[key]
        else:
            out[key] = copy.deepcopy(spec[1])
    return out


def _validate_cell(p, where):
    d, t, m = p["data"], p["train"], p["model"]
    prefix = f"{where}: " if where else ""
    if t["eta"] <= 0:
        raise ConfigError(f"{prefix}key 'train.eta' must be positive")
    for key, value in (("train.T", t["T"]), ("train.batch_size", t["batch_size"]),
                       ("train.eval_every", t["eval_every"]), ("train.lambda", t["lambda"]),
                       ("data.n_test", d["n_test"]), ("data.sigma_coeff", d["sigma_coeff"])):
        if value < 0:
            raise ConfigError(f"{prefix}key '{key}' must be non-negative")
    if m["m"] < 1:
        raise ConfigError(f"{prefix}key 'model.m' must be >= 1")
    sizes = d["n_train"] if isinstance(d["n_train"], list) else [d["n_train"]]
    if not sizes or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in sizes):
        raise ConfigError(f"{prefix}key 'data.n_train' must be a positive integer or a list of them")
    K = len(d["mnist"]["pairs"]) if d["source"] == "mnist" else d["K"]
    if isinstance(d["n_train"], list) and len(d["n_train"]) != K:
        raise ConfigError(f"{prefix}key 'data.n_train' lists {len(sizes)} sizes for K={K} tasks")
    if d["source"] == "xor" and (d["K"] < 1 or d["d"] < 2 * d["K"]):
        raise ConfigError(f"{prefix}key 'data.d' must be >= 2*K (got d={d['d']}, K={d['K']})")
    if m["kind"] == "linearized" and m["linearized"]["closed_form"] and t["loss"] != "linear":
        raise ConfigError(f"{prefix}key 'model.linearized.closed_form' requires train.loss = 'linear'")
    if d["source"] == "mnist":
        pairs = d["mnist"]["pairs"]
        if not pairs or not all(isinstance(q, list) and len(q) == 2 for q in pairs):
            raise ConfigError(f"{prefix}key 'data.mnist.pairs' must be a list of [digit, digit] pairs")


def parse(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    top = {}
    for key, spec in TOP_LEVEL.items():
        if key in raw:
            _check_value(key, raw[key], spec)
            top[key] = raw[key]
        else:
            top[key] = spec[1]
    known = set(TOP_LEVEL) | set(SCHEMA) | {"sweep", "variant"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{source}: unknown key '{key}'")
    base = _fill(SCHEMA, {k: raw.get(k, {}) for k in SCHEMA}, "")

    sweep = raw.get("sweep", {})
    if not isinstance(sweep, dict):
        raise ConfigError(f"{source}: key 'sweep' must be a table")
    for key, values in sweep.items():
        spec = _lookup(SCHEMA, key)
        if spec is None:
            raise ConfigError(f"{source}: sweep axis '{key}' does not name a config key")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"{source}: sweep axis '{key}' must be a non-empty list")
        for v in values:
            _check_value(f"sweep.{key}", v, spec)

    variants = []
    for i, entry in enumerate(raw.get("variant", [])):
        entry = dict(entry)
        label = entry.pop("label", f"v{i}")
        flat = _flatten(entry)
        for key, value in flat.items():
            spec = _lookup(SCHEMA, key)
            if spec is None:
                raise ConfigError(f"{source}: variant '{label}' sets unknown key '{key}'")
            _check_value(f"variant.{key}", value, spec)
        variants.append({"label": str(label), "overrides": flat})

    cfg = ExperimentConfig(top["name"], top["seed"], top["seeds"], top["out_dir"],
                           top["max_cells"], base, sweep, variants, raw, source)
    if cfg.seeds < 1:
        raise ConfigError(f"{source}: key 'seeds' must be >= 1")
    size = max(len(variants), 1)
    for values in sweep.values():
        size *= len(values)
    if size > cfg.max_cells:
        raise ConfigError(f"{source}: sweep has {size} cells, more than max_cells={cfg.max_cells}")
    for cell in cfg.cells():
        _validate_cell(cell.params, f"{source} cell {cell.index}")
    return cfg


def _flatten(tree, prefix=""):
    out = {}
    for key, value in tree.items():
        # TOML dotted keys arrive as nested tables; leaf lists stay values
        if isinstance(value, dict):
            out.update(_flatten(value, f"{prefix}{key}."))
        else:
            out[prefix + key] = value
    return out


def load(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        name = re.sub(r"\.cfg$", "", str(path))
        packaged = recipe_path(name)
        if packaged is None:
            raise ConfigError(f"config file not found: {path}")
        path = packaged
    return parse(path.read_text(), str(path))


RECIPE_DIR = Path(__file__).with_name("recipes")


def recipe_path(name: str):
    """Path of a packaged recipe (``fig1`` ... ``fig9``, ``mnist``) or None."""
    p = RECIPE_DIR / f"{name}.cfg"
    return p if p.exists() else None


def recipe_names() -> list:
    return sorted(p.stem for p in RECIPE_DIR.glob("*.cfg"))
