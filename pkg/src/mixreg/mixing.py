"""Example-mixing constructions used to augment training sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .neighbors import KnnIndex, KnnOptions, pairwise_distances


@dataclass
class MixConfig:
    """How interpolation weights are drawn: a fixed lambda or Beta(alpha, alpha)."""

    lambda_mode: str = "fixed"  # "fixed" | "beta"
    lam: float = 0.5
    alpha: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.lambda_mode not in ("fixed", "beta"):
            raise ValueError(f"unknown lambda_mode {self.lambda_mode!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must be in [0, 1]")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")


@dataclass
class MixPolicy:
    """Per training example, an index into the k-option menu."""

    choices: np.ndarray  # (S,) int, index into options
    options: KnnOptions

    def __post_init__(self):
        self.choices = np.asarray(self.choices, dtype=np.int64)
        if self.choices.ndim != 1:
            raise ValueError("choices must be 1-d")
        if np.any(self.choices < 0) or np.any(self.choices >= len(self.options)):
            raise ValueError("policy choice index out of range")

    @property
    def n(self) -> int:
        return len(self.choices)

    @property
    def k_values(self) -> np.ndarray:
        return np.array(self.options.values, dtype=np.int64)[self.choices]

    @classmethod
    def from_k_values(cls, ks, options: KnnOptions) -> "MixPolicy":
        lookup = {k: i for i, k in enumerate(options.values)}
        try:
            choices = [lookup[int(k)] for k in ks]
        except KeyError as exc:
            raise ValueError(f"k={exc.args[0]} is not in the option menu") from None
        return cls(choices=np.array(choices), options=options)

    @classmethod
    def constant(cls, n: int, k: int, options: KnnOptions) -> "MixPolicy":
        return cls.from_k_values([k] * n, options)


def mix_pair(xi, yi, xj, yj, lam: float):
    """Convex combination of two examples and of their labels."""
    xi, yi, xj, yj = (np.asarray(a, dtype=np.float64) for a in (xi, yi, xj, yj))
    if xi.shape != xj.shape or yi.shape != yj.shape:
        raise ValueError("pair shapes differ")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must be in [0, 1]")
    return lam * xi + (1.0 - lam) * xj, lam * yi + (1.0 - lam) * yj


def _mixed_dataset(data: Dataset, src_a, src_b, lams) -> Dataset:
    src_a = np.asarray(src_a, dtype=np.int64)
    src_b = np.asarray(src_b, dtype=np.int64)
    lams = np.asarray(lams, dtype=np.float64)
    lam_col = lams[:, None]
    feats = lam_col * data.features[src_a] + (1.0 - lam_col) * data.features[src_b]
    labels = lam_col * data.labels[src_a] + (1.0 - lam_col) * data.labels[src_b]
    prov = np.column_stack([src_a.astype(float), src_b.astype(float), lams])
    return Dataset(
        features=feats.reshape(-1, data.n_features),
        labels=labels.reshape(-1, data.n_labels),
        feature_names=list(data.feature_names),
        label_names=list(data.label_names),
        provenance=prov.reshape(-1, 3),
    )


def policy_pairs(neighbor_ids: np.ndarray, ks: np.ndarray):
    """(example, neighbor) source indices for a per-example k assignment,
    ordered by (example, neighbor rank)."""
    n = len(ks)
    if np.any(ks > n - 1):
        raise ValueError(f"policy requests k={ks.max()} but only {n - 1} neighbors exist")
    src_a = np.repeat(np.arange(n), ks)
    src_b = (
        np.concatenate([neighbor_ids[i, :k] for i, k in enumerate(ks) if k > 0])
        if ks.sum() > 0
        else np.empty(0, dtype=np.int64)
    )
    return src_a, src_b


def policy_lambdas(total: int, cfg: MixConfig) -> np.ndarray:
    if cfg.lambda_mode == "fixed":
        return np.full(total, cfg.lam)
    return np.random.default_rng(cfg.seed).beta(cfg.alpha, cfg.alpha, size=total)


def mix_with_policy(
    data: Dataset, index: KnnIndex, policy: MixPolicy, cfg: MixConfig = MixConfig()
) -> Dataset:
    """One mixed example per (example, chosen neighbor) ordered pair.

    Output size is the sum of chosen k values; rows are ordered by
    (example, neighbor rank).
    """
    if policy.n != data.n:
        raise ValueError(f"policy covers {policy.n} examples, dataset has {data.n}")
    src_a, src_b = policy_pairs(index.ids, policy.k_values)
    lams = policy_lambdas(len(src_a), cfg)
    return _mixed_dataset(data, src_a, src_b, lams)


def original_mixup(
    data: Dataset,
    n_pairs: int | None = None,
    alpha: float = 1.0,
    seed: int = 0,
    fixed_lam: float | None = None,
) -> Dataset:
    """Classic all-pairs mixup: uniform random ordered pairs (with replacement),
    lambda ~ Beta(alpha, alpha) per pair (or a fixed lambda when given)."""
    n_pairs = data.n if n_pairs is None else n_pairs
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    src_a = rng.integers(0, data.n, size=n_pairs)
    src_b = rng.integers(0, data.n, size=n_pairs)
    if fixed_lam is not None:
        lams = np.full(n_pairs, float(fixed_lam))
    else:
        lams = rng.beta(alpha, alpha, size=n_pairs)
    return _mixed_dataset(data, src_a, src_b, lams)


def mix_distance_band(
    data: Dataset,
    index: KnnIndex,
    band: tuple[float, float],
    lam: float = 0.5,
    normalize: bool = True,
) -> Dataset:
    """Mix exactly the unordered pairs whose distance falls in [lo, hi).

    With normalize=True the band is interpreted on distances divided by the
    maximum pairwise distance. An empty band yields an empty dataset.
    """
    lo, hi = band
    if not lo < hi:
        raise ValueError("band must satisfy lo < hi")
    dmat = pairwise_distances(data)
    iu = np.triu_indices(data.n, k=1)
    d = dmat[iu]
    if normalize:
        dmax = d.max()
        if dmax > 0:
            d = d / dmax
    mask = (d >= lo) & (d < hi)
    src_a = iu[0][mask]
    src_b = iu[1][mask]
    return _mixed_dataset(data, src_a, src_b, np.full(mask.sum(), lam))
