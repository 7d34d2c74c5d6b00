"""XOR-cluster task streams and MNIST binary-pair loading."""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from clforge import prng
from clforge.errors import BadMagic, DimensionTooSmall, NotEnoughSamples, TruncatedFile

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class TaskSpec:
    d: int
    mu_plus: np.ndarray
    mu_minus: np.ndarray
    sigma: float
    k: int = 1

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if abs(float(self.mu_plus @ self.mu_minus)) > 1e-12:
            raise ValueError("mean vectors must be orthogonal")
        if abs(np.linalg.norm(self.mu_plus) - np.linalg.norm(self.mu_minus)) > 1e-12:
            raise ValueError("mean vectors must have equal norm")

    def centers(self):
        """The four noiseless cluster centers with their labels."""
        return [(self.mu_plus, 1.0), (-self.mu_plus, 1.0),
                (self.mu_minus, -1.0), (-self.mu_minus, -1.0)]


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    task_index: int = 1

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError(f"bad dataset shapes X{X.shape} y{y.shape}")
        if X.shape[0] < 1:
            raise ValueError("dataset must have at least one row")
        if not np.all(np.isfinite(X)):
            raise ValueError("dataset contains non-finite entries")
        if not np.all(np.abs(y) == 1.0):
            raise ValueError("labels must be +1 or -1")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def without(self, i: int) -> "Dataset":
        keep = np.arange(self.n) != i
        return Dataset(self.X[keep], self.y[keep], self.task_index)

    def permuted(self, perm) -> "Dataset":
        return Dataset(self.X[perm], self.y[perm], self.task_index)

    def head(self, n: int) -> "Dataset":
        return Dataset(self.X[:n], self.y[:n], self.task_index)


@dataclass
class TaskStream:
    tasks: list[TaskSpec]
    train: list[Dataset]
    test: list[Dataset]
    meta: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.train)

    @property
    def d(self) -> int:
        return self.train[0].d


def standard_means(d: int, k: int, norm: float | None = None):
    """Means supported on coordinates 2k-1, 2k (1-based).

    With ``norm=None`` the construction is (e_{2k-1} +/- e_{2k}) / sqrt(d), so
    each mean has norm sqrt(2/d).  Passing ``norm`` rescales both means.
    """
    if k < 1 or 2 * k > d:
        raise DimensionTooSmall(f"task {k} needs d >= {2 * k}, got d={d}")
    mu_plus = np.zeros(d)
    mu_minus = np.zeros(d)
    i, j = 2 * k - 2, 2 * k - 1
    mu_plus[i] = mu_plus[j] = 1.0 / math.sqrt(d)
    mu_minus[i], mu_minus[j] = 1.0 / math.sqrt(d), -1.0 / math.sqrt(d)
    if norm is not None:
        scale = norm / math.sqrt(2.0 / d)
        mu_plus *= scale
        mu_minus *= scale
    return mu_plus, mu_minus


def task_spec(d: int, k: int, sigma: float, norm: float | None = None) -> TaskSpec:
    mu_plus, mu_minus = standard_means(d, k, norm)
    return TaskSpec(d=d, mu_plus=mu_plus, mu_minus=mu_minus, sigma=sigma, k=k)


def sample_xor(spec: TaskSpec, n: int, stream: prng.Stream) -> Dataset:
    """Draw ``n`` labelled points from the task's four-cluster mixture."""
    if n < 1:
        raise ValueError("n must be >= 1")
    y = prng.rademacher(stream, n)
    side = prng.rademacher(stream, n)
    noise = prng.gaussian(stream, (n, spec.d))
    means = np.where((y > 0)[:, None], spec.mu_plus[None, :], spec.mu_minus[None, :])
    X = side[:, None] * means + spec.sigma * noise
    return Dataset(X, y, spec.k)


def build_stream(d: int, K: int, n_train, n_test, sigma: float,
                 stream: prng.Stream, norm: float | None = None) -> TaskStream:
    """K orthogonal XOR tasks with independent train/test splits.

    ``n_train`` and ``n_test`` may be an int or one value per task.
    """
    if 2 * K > d:
        raise DimensionTooSmall(f"K={K} tasks need d >= {2 * K}, got d={d}")
    n_train = _per_task(n_train, K)
    n_test = _per_task(n_test, K)
    tasks, train, test = [], [], []
    for k in range(1, K + 1):
        spec = task_spec(d, k, sigma, norm)
        tasks.append(spec)
        train.append(sample_xor(spec, n_train[k - 1], stream.child(f"task/{k}/train")))
        test.append(sample_xor(spec, n_test[k - 1], stream.child(f"task/{k}/test")))
    return TaskStream(tasks, train, test, meta={"data": "xor", "sigma": sigma})


def _per_task(value, K: int) -> list[int]:
    if isinstance(value, (int, np.integer)):
        return [int(value)] * K
    value = [int(v) for v in value]
    if len(value) != K:
        raise ValueError(f"expected {K} per-task sizes, got {len(value)}")
    return value


# --- MNIST IDX -------------------------------------------------------------

def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Parse a big-endian IDX file of unsigned bytes."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise TruncatedFile(f"{path}: missing magic word")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagic(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFile(f"{path}: header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise TruncatedFile(f"{path}: expected {size} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.tobytes())


def load_mnist_pair(images_path, labels_path, digit_a: int, digit_b: int, n: int,
                    normalize: bool = True, task_index: int = 1,
                    skip: int = 0) -> Dataset:
    """First ``n`` images labelled ``digit_a`` (+1) or ``digit_b`` (-1).

    Pixels are mapped to [0, 1]; with ``normalize`` they are further divided
    by sqrt(d) so that image norms are O(1).  ``skip`` drops that many
    matching samples from the front first.
    """
    if digit_a == digit_b:
        raise ValueError("digit_a and digit_b must differ")
    if n < 1:
        raise NotEnoughSamples("n must be >= 1")
    images = read_idx(images_path, IDX_IMAGE_MAGIC)
    labels = read_idx(labels_path, IDX_LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise ValueError("image and label files disagree on item count")
    idx = np.flatnonzero((labels == digit_a) | (labels == digit_b))[skip:]
    if idx.size < n:
        raise NotEnoughSamples(f"only {idx.size} samples of digits {digit_a}/{digit_b}, need {n}")
    idx = idx[:n]
    X = images[idx].reshape(n, -1).astype(np.float64) / 255.0
    if normalize:
        X /= math.sqrt(X.shape[1])
    y = np.where(labels[idx] == digit_a, 1.0, -1.0)
    return Dataset(X, y, task_index)
