"""Exact Euclidean k-nearest-neighbor index and k-option series."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset


@dataclass
class KnnIndex:
    """Per example: every other example, sorted ascending by distance.

    Ties are broken by ascending example index; rows have length S-1.
    """

    ids: np.ndarray  # (S, S-1) int
    distances: np.ndarray  # (S, S-1)

    @property
    def n(self) -> int:
        return self.ids.shape[0]

    def neighbors(self, i: int, k: int) -> np.ndarray:
        """The k nearest neighbors of example i."""
        if not 0 <= k <= self.n - 1:
            raise ValueError(f"k={k} out of range [0, {self.n - 1}]")
        return self.ids[i, :k]


def build_index(data: Dataset | np.ndarray) -> KnnIndex:
    """All-pairs exact distances; O(S^2), fine at the sizes used here."""
    x = data.features if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    s = x.shape[0]
    if s < 2:
        raise ValueError("need at least 2 examples to build a neighbor index")
    ids = np.empty((s, s - 1), dtype=np.int64)
    dists = np.empty((s, s - 1))
    others_template = np.arange(s)
    for i in range(s):
        diff = x - x[i]
        d = np.sqrt((diff * diff).sum(axis=1))
        others = np.concatenate([others_template[:i], others_template[i + 1 :]])
        row = d[others]
        order = np.lexsort((others, row))  # distance first, index breaks ties
        ids[i] = others[order]
        dists[i] = row[order]
    return KnnIndex(ids=ids, distances=dists)


def pairwise_distances(data: Dataset | np.ndarray) -> np.ndarray:
    """Full symmetric S x S distance matrix (zero diagonal)."""
    x = data.features if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    s = x.shape[0]
    out = np.zeros((s, s))
    for i in range(s):
        diff = x - x[i]
        out[i] = np.sqrt((diff * diff).sum(axis=1))
    return out


def knn(index: KnnIndex, i: int, k: int) -> np.ndarray:
    return index.neighbors(i, k)


def dataset_hash(data: Dataset | np.ndarray) -> str:
    x = data.features if isinstance(data, Dataset) else np.asarray(data)
    return hashlib.sha256(np.ascontiguousarray(x).tobytes()).hexdigest()


def save_index_cache(index: KnnIndex, data: Dataset | np.ndarray, path: str | Path):
    """Persist the index keyed by a hash of the feature matrix."""
    np.savez(path, ids=index.ids, distances=index.distances,
             features_sha256=np.array(dataset_hash(data)))


def load_index_cache(path: str | Path, data: Dataset | np.ndarray) -> KnnIndex | None:
    """Load a cached index; returns None when absent or built for other data."""
    path = Path(path)
    if not path.exists():
        return None
    with np.load(path) as doc:
        if str(doc["features_sha256"]) != dataset_hash(data):
            return None
        return KnnIndex(ids=doc["ids"], distances=doc["distances"])


@dataclass(frozen=True)
class KnnOptions:
    """The menu of allowed k values; always contains 0, strictly increasing."""

    values: tuple[int, ...]

    def __post_init__(self):
        vals = tuple(int(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if not vals or vals[0] != 0:
            raise ValueError("option list must start with 0")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("option list must be strictly increasing")

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, idx: int) -> int:
        return self.values[idx]

    @property
    def max_k(self) -> int:
        return self.values[-1]


def option_series(
    kind: str,
    cap: int,
    base: int = 2,
    max_exp: int = 7,
    step: int = 10,
    count: int = 19,
) -> KnnOptions:
    """{0} plus an exponential (base**0..base**max_exp) or linear (step..step*count)
    series, dropping values above cap (usually S-1)."""
    if kind == "exponential":
        if base < 2 or max_exp < 0:
            raise ValueError("exponential series needs base >= 2 and max_exp >= 0")
        raw = [base**i for i in range(max_exp + 1)]
    elif kind == "linear":
        if step < 1 or count < 1:
            raise ValueError("linear series needs positive step and count")
        raw = [step * i for i in range(1, count + 1)]
    else:
        raise ValueError(f"unknown option series kind {kind!r}")
    vals = sorted({0} | {v for v in raw if v <= cap})
    if vals == [0]:
        raise ValueError(f"no usable k options below cap {cap}")
    return KnnOptions(values=tuple(vals))
