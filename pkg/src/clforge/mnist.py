"""Locating MNIST IDX files, with a fallback built from a bundled subset.

The lab reads the standard IDX files from ``$CLFORGE_MNIST_DIR`` (or an
explicit directory).  When no files are present, :func:`export_subset`
writes IDX files from the 5000-image MNIST sample that ships with
``mlxtend``; images there are sorted by digit, so they are interleaved with
a fixed permutation before writing.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from clforge import prng
from clforge.data import (IDX_LABEL_MAGIC, Dataset, TaskStream, load_mnist_pair, read_idx,
                          write_idx)
from clforge.errors import NotEnoughSamples

ENV_VAR = "CLFORGE_MNIST_DIR"
IMAGE_NAMES = ("train-images-idx3-ubyte", "train-images-idx3-ubyte.gz",
               "train-images.idx3-ubyte")
LABEL_NAMES = ("train-labels-idx1-ubyte", "train-labels-idx1-ubyte.gz",
               "train-labels.idx1-ubyte")


def find_files(directory=None):
    """(images_path, labels_path) in ``directory`` or $CLFORGE_MNIST_DIR, else None."""
    directory = directory or os.environ.get(ENV_VAR)
    if not directory:
        return None
    directory = Path(directory)
    images = next((directory / n for n in IMAGE_NAMES if (directory / n).exists()), None)
    labels = next((directory / n for n in LABEL_NAMES if (directory / n).exists()), None)
    if images is None or labels is None:
        return None
    return images, labels


def export_subset(out_dir, seed: int = 0):
    """Write the mlxtend MNIST sample as IDX files; returns their paths."""
    from mlxtend.data import mnist_data

    X, y = mnist_data()
    perm = prng.permutation(prng.derive(seed, "mnist/order"), len(y))
    images = X[perm].reshape(-1, 28, 28).astype(np.uint8)
    labels = y[perm].astype(np.uint8)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = out_dir / IMAGE_NAMES[0], out_dir / LABEL_NAMES[0]
    write_idx(paths[0], images)
    write_idx(paths[1], labels)
    return paths


def resolve(directory=None, cache_dir=None):
    """Existing IDX files, or a freshly exported subset in ``cache_dir``."""
    found = find_files(directory)
    if found:
        return found
    if cache_dir is None:
        raise FileNotFoundError(f"no MNIST IDX files found; set {ENV_VAR}")
    found = find_files(cache_dir)
    return found or export_subset(cache_dir)


def build_stream(images_path, labels_path, pairs, n_train, n_test: int,
                 stream: prng.Stream, normalize: bool = True) -> TaskStream:
    """One binary task per digit pair, with a random train/test split per stream.

    ``n_train`` is an int or one size per task.  The test split takes up to
    ``n_test`` of the remaining images of the pair.
    """
    sizes = [n_train] * len(pairs) if np.isscalar(n_train) else list(n_train)
    if len(sizes) != len(pairs):
        raise ValueError(f"{len(sizes)} train sizes for {len(pairs)} digit pairs")
    labels = read_idx(labels_path, IDX_LABEL_MAGIC)
    train, test = [], []
    for k, ((a, b), n) in enumerate(zip(pairs, sizes), start=1):
        total = int(np.count_nonzero(np.isin(labels, [a, b])))
        if n >= total:
            raise NotEnoughSamples(f"digits {a}/{b}: {total} images, need {n} for training "
                                   "plus at least one for testing")
        pool = load_mnist_pair(images_path, labels_path, a, b, total, normalize, k)
        pool = pool.permuted(prng.permutation(stream.child(f"task/{k}"), total))
        stop = min(total, n + n_test)
        train.append(pool.head(n))
        test.append(Dataset(pool.X[n:stop], pool.y[n:stop], k))
    meta = {"source": "mnist", "pairs": [list(p) for p in pairs], "normalize": normalize}
    return TaskStream([None] * len(pairs), train, test, meta)
