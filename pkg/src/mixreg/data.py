"""Datasets: CSV ingestion, standardization, splits, synthetic generators."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

# Reserved column names used to carry mixing provenance through CSV files.
PROVENANCE_COLUMNS = ("mix_source_a", "mix_source_b", "mix_lambda")


class DataError(ValueError):
    """Malformed input data or infeasible request."""


@dataclass
class Standardization:
    """Per-column statistics recorded so transforms can be inverted."""

    means: np.ndarray
    stds: np.ndarray
    dropped: tuple[int, ...] = ()  # original column indices removed (zero std)


@dataclass
class Dataset:
    features: np.ndarray  # (S, d)
    labels: np.ndarray  # (S, e)
    feature_names: list[str] = field(default_factory=list)
    label_names: list[str] = field(default_factory=list)
    feature_stats: Standardization | None = None
    label_stats: Standardization | None = None
    splits: dict[str, np.ndarray] | None = None
    provenance: np.ndarray | None = None  # (S, 3): source_a, source_b, lambda

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.features.ndim != 2 or self.labels.ndim != 2:
            raise DataError("features and labels must be 2-d")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DataError("feature/label row counts differ")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.labels))):
            raise DataError("dataset contains NaN or Inf")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.features.shape[1])]
        if not self.label_names:
            self.label_names = [f"y{i}" for i in range(self.labels.shape[1])]

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_labels(self) -> int:
        return self.labels.shape[1]

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            feature_names=list(self.feature_names),
            label_names=list(self.label_names),
            feature_stats=self.feature_stats,
            label_stats=self.label_stats,
            provenance=None if self.provenance is None else self.provenance[idx],
        )

    def split_part(self, name: str) -> "Dataset":
        if self.splits is None or name not in self.splits:
            raise DataError(f"dataset carries no {name!r} split")
        return self.take(self.splits[name])


def concat(a: Dataset, b: Dataset) -> Dataset:
    """Stack two datasets row-wise (D followed by its augmentation, usually)."""
    if b.n == 0:
        return a
    if a.n_features != b.n_features or a.n_labels != b.n_labels:
        raise DataError("cannot concatenate datasets of different widths")
    prov = None
    if a.provenance is not None or b.provenance is not None:
        pa = a.provenance if a.provenance is not None else _self_provenance(a.n)
        pb = b.provenance if b.provenance is not None else _self_provenance(b.n)
        prov = np.vstack([pa, pb])
    return Dataset(
        features=np.vstack([a.features, b.features]),
        labels=np.vstack([a.labels, b.labels]),
        feature_names=list(a.feature_names),
        label_names=list(a.label_names),
        feature_stats=a.feature_stats,
        label_stats=a.label_stats,
        provenance=prov,
    )


def _self_provenance(n: int) -> np.ndarray:
    prov = np.empty((n, 3))
    prov[:, 0] = np.arange(n)
    prov[:, 1] = -1.0
    prov[:, 2] = 1.0
    return prov


# ---------------------------------------------------------------------------
# CSV ingestion / writing


def load_csv(path: str | Path, label_columns: list[str]) -> Dataset:
    """Read a comma-separated file with a header row; all cells numeric.

    Feature columns are the non-label columns in file order; any provenance
    columns written by augment are routed to Dataset.provenance.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}"
                )
            parsed = []
            for col, cell in zip(header, row):
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}:{lineno}: column {col!r} has non-numeric cell {cell!r}"
                    ) from None
                if not math.isfinite(value):
                    raise DataError(
                        f"{path}:{lineno}: column {col!r} has non-finite cell {cell!r}"
                    )
                parsed.append(value)
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    for name in label_columns:
        if name not in header:
            raise DataError(f"{path}: label column {name!r} not found in header")
    table = np.array(rows, dtype=np.float64)
    col = {name: i for i, name in enumerate(header)}
    has_prov = all(name in header for name in PROVENANCE_COLUMNS)
    skip = set(label_columns) | (set(PROVENANCE_COLUMNS) if has_prov else set())
    feature_names = [name for name in header if name not in skip]
    return Dataset(
        features=table[:, [col[name] for name in feature_names]],
        labels=table[:, [col[name] for name in label_columns]],
        feature_names=feature_names,
        label_names=list(label_columns),
        provenance=table[:, [col[n] for n in PROVENANCE_COLUMNS]] if has_prov else None,
    )


def write_csv(data: Dataset, path: str | Path):
    """Write features, labels and any provenance; floats use repr (round-trip exact)."""
    path = Path(path)
    header = list(data.feature_names) + list(data.label_names)
    if data.provenance is not None:
        header += list(PROVENANCE_COLUMNS)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.features[i]]
            row += [repr(float(v)) for v in data.labels[i]]
            if data.provenance is not None:
                row += [repr(float(v)) for v in data.provenance[i]]
            writer.writerow(row)


def write_metadata(data: Dataset, path: str | Path):
    """JSON sidecar: names, standardization stats, split indices."""
    doc = {
        "feature_names": data.feature_names,
        "label_names": data.label_names,
        "feature_stats": _stats_doc(data.feature_stats),
        "label_stats": _stats_doc(data.label_stats),
        "splits": None
        if data.splits is None
        else {k: v.tolist() for k, v in data.splits.items()},
    }
    Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")


def _stats_doc(stats: Standardization | None):
    if stats is None:
        return None
    return {
        "means": stats.means.tolist(),
        "stds": stats.stds.tolist(),
        "dropped": list(stats.dropped),
    }


# ---------------------------------------------------------------------------
# Standardization


def standardize(data: Dataset) -> Dataset:
    """Zero-mean/unit-std features using this dataset's own statistics.

    Constant columns are dropped with a warning. Labels are untouched.
    Validation/test sets must instead go through apply_standardization with
    the training set's recorded stats.
    """
    if data.n == 0:
        raise DataError("cannot standardize an empty dataset")
    means = data.features.mean(axis=0)
    stds = data.features.std(axis=0)
    dropped = tuple(int(i) for i in np.flatnonzero(stds == 0.0))
    if dropped:
        names = [data.feature_names[i] for i in dropped]
        warnings.warn(f"dropping constant feature columns: {names}", stacklevel=2)
    stats = Standardization(means=means, stds=stds, dropped=dropped)
    return apply_standardization(data, stats)


def apply_standardization(data: Dataset, stats: Standardization) -> Dataset:
    keep = [i for i in range(data.n_features) if i not in stats.dropped]
    feats = (data.features[:, keep] - stats.means[keep]) / stats.stds[keep]
    return replace(
        data,
        features=feats,
        feature_names=[data.feature_names[i] for i in keep],
        feature_stats=stats,
    )


def unstandardize(data: Dataset) -> Dataset:
    """Invert standardize (dropped columns stay dropped)."""
    if data.feature_stats is None:
        raise DataError("dataset has no standardization record")
    stats = data.feature_stats
    keep = [i for i in range(len(stats.means)) if i not in stats.dropped]
    feats = data.features * stats.stds[keep] + stats.means[keep]
    return replace(data, features=feats, feature_stats=None)


def standardize_labels(data: Dataset) -> Dataset:
    """Zero-mean/unit-std labels; used for single-output runs when configured."""
    if data.n == 0:
        raise DataError("cannot standardize an empty dataset")
    means = data.labels.mean(axis=0)
    stds = data.labels.std(axis=0)
    if np.any(stds == 0.0):
        raise DataError("cannot standardize constant labels")
    stats = Standardization(means=means, stds=stds)
    return apply_label_standardization(data, stats)


def apply_label_standardization(data: Dataset, stats: Standardization) -> Dataset:
    labels = (data.labels - stats.means) / stats.stds
    return replace(data, labels=labels, label_stats=stats)


# ---------------------------------------------------------------------------
# Splitting


@dataclass
class SplitSpec:
    train_size: int
    val_size: int
    test_size: int
    seed: int = 0


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint seeded-shuffle split; val and test come from the same shuffled pool."""
    total = spec.train_size + spec.val_size + spec.test_size
    if min(spec.train_size, spec.val_size, spec.test_size) < 0:
        raise DataError("split sizes must be nonnegative")
    if total > data.n:
        raise DataError(f"split sizes sum to {total} but dataset has {data.n} rows")
    perm = np.random.default_rng(spec.seed).permutation(data.n)
    a = spec.train_size
    b = a + spec.val_size
    c = b + spec.test_size
    return data.take(perm[:a]), data.take(perm[a:b]), data.take(perm[b:c])


# ---------------------------------------------------------------------------
# Synthetic generators


@dataclass
class SyntheticSpec:
    kind: str  # toy1d | piecewise | polynomial | planted
    train_size: int = 40
    val_size: int = 0
    test_size: int = 20
    noise: float = 0.0
    seed: int = 0
    # polynomial
    dim: int = 1
    degree: int = 1
    # planted
    clusters: int = 8
    cluster_size: int = 5

    def __post_init__(self):
        if self.noise < 0:
            raise DataError("noise must be >= 0")


# Toy curve: a drifting cosine whose training points sit on alternating
# extrema, so nearest-neighbor midpoints fall exactly on the curve while
# farther pair midpoints land on other training points with badly wrong labels.
TOY1D_TRAIN_X = (0.25, 0.95, 1.65, 2.35)
TOY1D_RANGE = (0.0, 2.6)

# Planted geometry: tight point clusters on a curve that is exactly linear
# inside every cluster span. Between clusters the curve follows the chords of
# a parabola but dips below them at each gap center, so any interpolation
# across a gap overshoots the true labels, and the overshoot grows with the
# chord length. The nearest cluster_size-1 neighbors of every training point
# are its cluster mates, which plants the optimal mixing radius.
PLANTED_GAP = 2.0
PLANTED_HALF_SPAN = 0.25
PLANTED_CURVE = 0.25
PLANTED_DIP = 0.8
PLANTED_VAL_SPAN_FRACTION = 0.6


def toy1d_curve(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return 0.3 * x + np.cos(np.pi * (x - 0.25) / 0.7)


def _planted_centers(clusters: int) -> np.ndarray:
    c = np.arange(clusters, dtype=np.float64)
    return (c - (clusters - 1) / 2.0) * PLANTED_GAP


def _planted_knots(clusters: int):
    centers = _planted_centers(clusters)
    w = PLANTED_HALF_SPAN
    xs, ys = [], []
    for center in centers:
        xs += [center - w, center + w]
        ys += [PLANTED_CURVE * (center - w) ** 2, PLANTED_CURVE * (center + w) ** 2]
    for left, right in zip(centers[:-1], centers[1:]):
        gap_center = 0.5 * (left + right)
        connector = 0.5 * (
            PLANTED_CURVE * (left + w) ** 2 + PLANTED_CURVE * (right - w) ** 2
        )
        xs.append(gap_center)
        ys.append(connector - PLANTED_DIP)
    order = np.argsort(xs)
    return np.array(xs)[order], np.array(ys)[order]


def planted_curve(x: np.ndarray, clusters: int = 8) -> np.ndarray:
    """The planted label function: linear within cluster spans, kinked between."""
    xs, ys = _planted_knots(clusters)
    return np.interp(np.asarray(x, dtype=np.float64), xs, ys)


def true_function(spec: SyntheticSpec):
    """Vectorized ground-truth label function for kinds that define one."""
    if spec.kind == "toy1d":
        return lambda x: toy1d_curve(np.asarray(x)[:, 0])[:, None]
    if spec.kind in ("planted", "planted-neighborhood"):
        return lambda x: planted_curve(np.asarray(x)[:, 0], spec.clusters)[:, None]
    if spec.kind == "polynomial":
        coeffs = _polynomial_coeffs(spec)
        return lambda x: _polynomial_eval(np.asarray(x), coeffs)
    raise DataError(f"kind {spec.kind!r} has no closed-form label function")


def _polynomial_coeffs(spec: SyntheticSpec):
    rng = np.random.default_rng(spec.seed + 1)
    return [rng.normal(size=(1, spec.dim)) for _ in range(spec.degree)] + [
        rng.normal(size=(1, 1))
    ]


def _polynomial_eval(x, coeffs):
    *powers, const = coeffs
    out = np.broadcast_to(const, (x.shape[0], 1)).copy()
    for p, a in enumerate(powers, start=1):
        out = out + (x**p) @ a.T
    return out


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic synthetic dataset with train/val/test split metadata."""
    if spec.kind == "toy1d":
        return _gen_toy1d(spec)
    if spec.kind == "piecewise":
        return _gen_piecewise(spec)
    if spec.kind == "polynomial":
        return _gen_polynomial(spec)
    if spec.kind in ("planted", "planted-neighborhood"):
        return _gen_planted(spec)
    raise DataError(f"unknown synthetic kind {spec.kind!r}")


def _assemble(spec: SyntheticSpec, x_train, x_val, x_test, fn) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    x = np.vstack([x_train, x_val, x_test])
    y = fn(x)
    if spec.noise > 0:
        y = y.copy()
        y[: len(x_train)] += spec.noise * rng.normal(size=(len(x_train), y.shape[1]))
    n_tr, n_v = len(x_train), len(x_val)
    splits = {
        "train": np.arange(n_tr),
        "val": np.arange(n_tr, n_tr + n_v),
        "test": np.arange(n_tr + n_v, len(x)),
    }
    return Dataset(features=x, labels=y, splits=splits)


def _gen_toy1d(spec: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed + 2)
    lo, hi = TOY1D_RANGE
    x_train = np.array(TOY1D_TRAIN_X)[:, None]
    x_val = rng.uniform(lo, hi, size=(spec.val_size, 1))
    x_test = rng.uniform(lo, hi, size=(spec.test_size, 1))
    return _assemble(spec, x_train, x_val, x_test, true_function(spec))


def _gen_piecewise(spec: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed + 3)
    knots_x = np.linspace(0.0, 1.0, 9)
    knots_y = rng.uniform(-1.0, 1.0, size=9)
    fn = lambda x: np.interp(x[:, 0], knots_x, knots_y)[:, None]
    x_train = rng.uniform(0, 1, size=(spec.train_size, 1))
    x_val = rng.uniform(0, 1, size=(spec.val_size, 1))
    x_test = rng.uniform(0, 1, size=(spec.test_size, 1))
    return _assemble(spec, x_train, x_val, x_test, fn)


def _gen_polynomial(spec: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed + 4)
    x_train = rng.uniform(-1, 1, size=(spec.train_size, spec.dim))
    x_val = rng.uniform(-1, 1, size=(spec.val_size, spec.dim))
    x_test = rng.uniform(-1, 1, size=(spec.test_size, spec.dim))
    return _assemble(spec, x_train, x_val, x_test, true_function(spec))


def _gen_planted(spec: SyntheticSpec) -> Dataset:
    """Clusters of grid points; the cluster_size-1 nearest neighbors of every
    training point sit in its own cluster, so mixing past them crosses a
    slope discontinuity by construction. Validation/test points are drawn
    mostly from the cluster spans plus some mass on the gaps between them."""
    rng = np.random.default_rng(spec.seed + 5)
    centers = _planted_centers(spec.clusters)
    w = PLANTED_HALF_SPAN
    offsets = np.linspace(-w, w, spec.cluster_size)
    x_train = (centers[:, None] + offsets[None, :]).reshape(-1, 1)

    def sample(n):
        in_span = rng.random(n) < PLANTED_VAL_SPAN_FRACTION
        which = rng.integers(0, spec.clusters, size=n)
        offs = rng.uniform(-w, w, size=n)
        span_x = centers[which] + offs
        gap = rng.integers(0, spec.clusters - 1, size=n)
        gap_x = rng.uniform(centers[gap] + w, centers[gap + 1] - w)
        return np.where(in_span, span_x, gap_x)[:, None]

    x_val = sample(spec.val_size)
    x_test = sample(spec.test_size)
    return _assemble(spec, x_train, x_val, x_test, true_function(spec))
