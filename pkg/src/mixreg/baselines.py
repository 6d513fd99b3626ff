"""Comparison methods: no augmentation, classic mixup, hidden-layer mixup,
a single tuned global k, the searched per-example policy, and the
policy + hidden-layer combination."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .analysis import evaluate_metrics
from .data import Dataset, concat
from .mixing import MixConfig, MixPolicy, mix_with_policy, original_mixup
from .neighbors import KnnIndex, KnnOptions, build_index
from .search import derive_seed

METHOD_KINDS = (
    "none",
    "mixup",
    "manifold_mixup",
    "global_knn",
    "knn_policy",
    "knn_policy_manifold",
)

_TAG_BASE_MODEL = 11
_TAG_BASE_SHUFFLE = 12
_TAG_BASE_MIX = 13
_TAG_TUNE = 14


@dataclass
class MethodSpec:
    kind: str
    alpha: float = 1.0
    n_pairs: int | None = None
    eligible_layers: tuple[int, ...] = (0, 1, 2)
    budget: int = 8
    policy_path: str | None = None
    fixed_lam: float | None = None

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ValueError(f"unknown method kind {self.kind!r}")
        self.eligible_layers = tuple(int(v) for v in self.eligible_layers)


@dataclass
class MethodResult:
    method: str
    rmse_per_seed: list[float] = field(default_factory=list)
    r2_per_seed: list[float] = field(default_factory=list)
    runtime_minutes: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def rmse_mean(self) -> float:
        return float(np.mean(self.rmse_per_seed))

    @property
    def rmse_std(self) -> float:
        return float(np.std(self.rmse_per_seed, ddof=1)) if len(self.rmse_per_seed) > 1 else 0.0

    @property
    def r2_mean(self) -> float:
        return float(np.mean(self.r2_per_seed))

    @property
    def r2_std(self) -> float:
        return float(np.std(self.r2_per_seed, ddof=1)) if len(self.r2_per_seed) > 1 else 0.0

    def table_row(self) -> dict:
        return {
            "method": self.method,
            "rmse_mean": self.rmse_mean,
            "rmse_std": self.rmse_std,
            "r2_mean": self.r2_mean,
            "r2_std": self.r2_std,
            "runtime_minutes": self.runtime_minutes,
        }


def _train_fresh(train_set: Dataset, model_spec: nn.ModelSpec, model_seed: int,
                 shuffle_seed: int, batch_hook=None) -> nn.Mlp:
    model = model_spec.build(train_set.n_features, train_set.n_labels, model_seed)
    nn.train(model, train_set.features, train_set.labels,
             model_spec.train_config(shuffle_seed), batch_hook=batch_hook)
    return model


def _seeded_runs(name: str, test: Dataset, n_seeds: int, base_seed: int, trainer) -> MethodResult:
    """trainer(model_seed, shuffle_seed, run_index) -> trained model."""
    t0 = time.perf_counter()
    result = MethodResult(method=name)
    for s in range(n_seeds):
        model = trainer(
            derive_seed(base_seed, s, _TAG_BASE_MODEL),
            derive_seed(base_seed, s, _TAG_BASE_SHUFFLE),
            s,
        )
        m = evaluate_metrics(test.labels, model.forward(test.features))
        result.rmse_per_seed.append(m.rmse)
        result.r2_per_seed.append(m.r2)
    result.runtime_minutes = (time.perf_counter() - t0) / 60.0
    return result


def run_no_augmentation(train: Dataset, val: Dataset, test: Dataset,
                        model_spec: nn.ModelSpec, n_seeds: int = 5,
                        base_seed: int = 0) -> MethodResult:
    del val
    return _seeded_runs(
        "none", test, n_seeds, base_seed,
        lambda ms_, ss_, s: _train_fresh(train, model_spec, ms_, ss_),
    )


def run_original_mixup(train: Dataset, val: Dataset, test: Dataset,
                       model_spec: nn.ModelSpec, alpha: float = 1.0,
                       n_pairs: int | None = None, fixed_lam: float | None = None,
                       n_seeds: int = 5, base_seed: int = 0) -> MethodResult:
    del val

    def trainer(model_seed, shuffle_seed, s):
        mixed = original_mixup(train, n_pairs=n_pairs, alpha=alpha,
                               seed=derive_seed(base_seed, s, _TAG_BASE_MIX),
                               fixed_lam=fixed_lam)
        return _train_fresh(concat(train, mixed), model_spec, model_seed, shuffle_seed)

    return _seeded_runs("mixup", test, n_seeds, base_seed, trainer)


def run_policy_mix(train: Dataset, val: Dataset, test: Dataset,
                   model_spec: nn.ModelSpec, policy: MixPolicy,
                   index: KnnIndex | None = None, mix_cfg: MixConfig = MixConfig(),
                   n_seeds: int = 5, base_seed: int = 0,
                   method_name: str = "knn_policy") -> MethodResult:
    """Train on the training set plus the policy's kNN mixes."""
    del val
    if index is None:
        index = build_index(train)
    augmented = concat(train, mix_with_policy(train, index, policy, mix_cfg))
    return _seeded_runs(
        method_name, test, n_seeds, base_seed,
        lambda ms_, ss_, s: _train_fresh(augmented, model_spec, ms_, ss_),
    )


@dataclass
class GlobalKnnResult:
    best_k: int
    tried: list[tuple[int, float]]  # (k, mean val loss)
    seeds_per_k: int


def _constant_k_loss(train: Dataset, val: Dataset, index: KnnIndex, k: int,
                     model_spec: nn.ModelSpec, mix_cfg: MixConfig,
                     n_seeds: int, base_seed: int) -> float:
    options = KnnOptions(values=(0, k) if k > 0 else (0,))
    policy = MixPolicy.constant(train.n, k, options)
    augmented = concat(train, mix_with_policy(train, index, policy, mix_cfg))
    losses = []
    for s in range(n_seeds):
        model = _train_fresh(augmented, model_spec,
                             derive_seed(base_seed, k, s, _TAG_TUNE),
                             derive_seed(base_seed, k, s, _TAG_TUNE + 1))
        losses.append(nn.mse_loss(model.forward(val.features), val.labels))
    return float(np.mean(losses))


def run_global_knn(train: Dataset, val: Dataset, test: Dataset,
                   model_spec: nn.ModelSpec, budget: int = 8,
                   index: KnnIndex | None = None, mix_cfg: MixConfig = MixConfig(),
                   tune_seeds: int = 3, n_seeds: int = 5,
                   base_seed: int = 0) -> tuple[GlobalKnnResult, MethodResult]:
    """Tune one shared k on validation loss: coarse log-spaced grid over
    [0, S-1], then a linear refinement around the best point."""
    if budget < 3:
        raise ValueError("global kNN tuning needs a budget of at least 3 k values")
    if index is None:
        index = build_index(train)
    t0 = time.perf_counter()
    k_max = train.n - 1
    coarse = sorted({0} | {
        int(round(v)) for v in np.logspace(0, math.log10(k_max), budget - 1)
    })
    tried: dict[int, float] = {}
    for k in coarse:
        tried[k] = _constant_k_loss(train, val, index, k, model_spec, mix_cfg,
                                    tune_seeds, base_seed)
    best_k = min(tried, key=tried.get)
    step = max(1, best_k // 8)
    refine = {best_k + i * step for i in range(-3, 4)}
    for k in sorted(refine):
        if 0 <= k <= k_max and k not in tried:
            tried[k] = _constant_k_loss(train, val, index, k, model_spec, mix_cfg,
                                        tune_seeds, base_seed)
    best_k = min(tried, key=tried.get)
    tuning = GlobalKnnResult(
        best_k=best_k,
        tried=sorted(tried.items()),
        seeds_per_k=tune_seeds,
    )
    options = KnnOptions(values=(0, best_k) if best_k > 0 else (0,))
    policy = MixPolicy.constant(train.n, best_k, options)
    result = run_policy_mix(train, val, test, model_spec, policy, index, mix_cfg,
                            n_seeds, base_seed, method_name="global_knn")
    result.runtime_minutes = (time.perf_counter() - t0) / 60.0
    result.extra["best_k"] = best_k
    return tuning, result


def _pairing_mix_matrix(batch_size: int, lam: float, perm: np.ndarray) -> np.ndarray:
    mix = np.zeros((batch_size, batch_size))
    rows = np.arange(batch_size)
    mix[rows, rows] += lam
    mix[rows, perm] += 1.0 - lam
    return mix


def manifold_mixup_hook(x: np.ndarray, y: np.ndarray, eligible: tuple[int, ...],
                        alpha: float, rng: np.random.Generator,
                        fixed_lam: float | None = None,
                        layer_log: list | None = None):
    """Batch hook: mix shuffled in-batch pairs at a random eligible layer."""

    def hook(model, adam, idx, step):
        xb, yb = x[idx], y[idx]
        layer = int(eligible[rng.integers(0, len(eligible))])
        if layer_log is not None:
            layer_log.append(layer)
        lam = float(rng.beta(alpha, alpha)) if fixed_lam is None else float(fixed_lam)
        perm = rng.permutation(len(idx))
        mix = _pairing_mix_matrix(len(idx), lam, perm)
        y_mixed = lam * yb + (1.0 - lam) * yb[perm]
        return nn.mixed_train_step(model, adam, xb, y_mixed, mix, layer)

    return hook


def run_manifold_mixup(train: Dataset, val: Dataset, test: Dataset,
                       model_spec: nn.ModelSpec, alpha: float = 1.0,
                       eligible_layers: tuple[int, ...] = (0, 1, 2),
                       fixed_lam: float | None = None, n_seeds: int = 5,
                       base_seed: int = 0) -> MethodResult:
    del val
    n_layers = len(model_spec.hidden) + 1
    for layer in eligible_layers:
        if not 0 <= layer < n_layers:
            raise ValueError(f"eligible layer {layer} out of range [0, {n_layers})")
    if not eligible_layers:
        raise ValueError("eligible_layers must be nonempty")

    def trainer(model_seed, shuffle_seed, s):
        rng = np.random.default_rng(derive_seed(base_seed, s, _TAG_BASE_MIX))
        hook = manifold_mixup_hook(train.features, train.labels,
                                   tuple(eligible_layers), alpha, rng, fixed_lam)
        return _train_fresh(train, model_spec, model_seed, shuffle_seed, batch_hook=hook)

    return _seeded_runs("manifold_mixup", test, n_seeds, base_seed, trainer)


def policy_manifold_hook(x: np.ndarray, y: np.ndarray, k_values: np.ndarray,
                         neighbor_ids: np.ndarray, eligible: tuple[int, ...],
                         rng: np.random.Generator, lam: float = 0.5):
    """Batch hook: each in-batch example with k>0 mixes its hidden state with
    one of its k nearest neighbors; absent neighbors join the forward pass."""

    def hook(model, adam, idx, step):
        b = len(idx)
        layer = int(eligible[rng.integers(0, len(eligible))])
        chosen = np.full(b, -1, dtype=np.int64)
        for r, i in enumerate(idx):
            k = k_values[i]
            if k > 0:
                chosen[r] = neighbor_ids[i, rng.integers(0, k)]
        position = {int(g): r for r, g in enumerate(idx)}
        extension: list[int] = []
        for j in chosen:
            if j >= 0 and int(j) not in position:
                position[int(j)] = b + len(extension)
                extension.append(int(j))
        x_ext = np.vstack([x[idx], x[extension]]) if extension else x[idx]
        mix = np.zeros((b, b + len(extension)))
        y_mixed = y[idx].copy()
        for r in range(b):
            j = chosen[r]
            if j < 0:
                mix[r, r] = 1.0
            else:
                mix[r, r] = lam
                mix[r, position[int(j)]] = 1.0 - lam
                y_mixed[r] = lam * y[idx[r]] + (1.0 - lam) * y[j]
        return nn.mixed_train_step(model, adam, x_ext, y_mixed, mix, layer)

    return hook


def run_policy_manifold(train: Dataset, val: Dataset, test: Dataset,
                        model_spec: nn.ModelSpec, policy: MixPolicy,
                        index: KnnIndex | None = None,
                        eligible_layers: tuple[int, ...] = (0, 1, 2),
                        lam: float = 0.5, n_seeds: int = 5,
                        base_seed: int = 0) -> MethodResult:
    del val
    if policy.n != train.n:
        raise ValueError(f"policy covers {policy.n} examples, dataset has {train.n}")
    if index is None:
        index = build_index(train)
    n_layers = len(model_spec.hidden) + 1
    for layer in eligible_layers:
        if not 0 <= layer < n_layers:
            raise ValueError(f"eligible layer {layer} out of range [0, {n_layers})")
    k_values = policy.k_values

    def trainer(model_seed, shuffle_seed, s):
        rng = np.random.default_rng(derive_seed(base_seed, s, _TAG_BASE_MIX))
        hook = policy_manifold_hook(train.features, train.labels, k_values,
                                    index.ids, tuple(eligible_layers), rng, lam)
        return _train_fresh(train, model_spec, model_seed, shuffle_seed, batch_hook=hook)

    return _seeded_runs("knn_policy_manifold", test, n_seeds, base_seed, trainer)
