"""Run configuration: JSON schema, validation with field paths, resolution."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import nn
from .baselines import METHOD_KINDS, MethodSpec
from .data import SplitSpec, SyntheticSpec
from .mixing import MixConfig
from .search import SearchConfig


class ConfigError(ValueError):
    """Invalid configuration; message carries the offending field path."""


def _check_keys(d: dict, allowed: set[str], path: str):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")


def _require(d: dict, key: str, path: str):
    if key not in d:
        raise ConfigError(f"{path}.{key}: required")
    return d[key]


def _typed(value, types, path: str):
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(f"{path}: expected {types}, got bool")
    if not isinstance(value, types):
        raise ConfigError(f"{path}: expected {types}, got {type(value).__name__}")
    return value


def _int_list(value, path: str) -> list[int]:
    _typed(value, list, path)
    return [int(_typed(v, (int,), f"{path}[{i}]")) for i, v in enumerate(value)]


@dataclass
class DatasetConfig:
    kind: str  # "csv" | "synthetic"
    path: str | None = None  # single file, split via config.split
    train_path: str | None = None  # or one file per split
    val_path: str | None = None
    test_path: str | None = None
    label_columns: list[str] = field(default_factory=list)
    synthetic: SyntheticSpec | None = None
    standardize_features: bool = True
    standardize_labels: bool = False


@dataclass
class AnalyzeConfig:
    bands: list[tuple[float, float]] = field(default_factory=list)
    model_checkpoint: str | None = None
    policy_path: str | None = None
    pair_cap: int = 10000
    band_seeds: int = 5


@dataclass
class RunConfig:
    dataset: DatasetConfig
    split: SplitSpec | None
    model: nn.ModelSpec
    knn_options: dict
    mix: MixConfig
    search: SearchConfig
    methods: list[MethodSpec]
    analyze: AnalyzeConfig
    out_dir: str
    seed: int
    workers: int | None
    figures: bool
    n_seeds: int
    raw: dict


_TOP_KEYS = {
    "dataset", "split", "model", "knn_options", "mix", "search", "methods",
    "analyze", "out_dir", "seed", "workers", "figures", "n_seeds",
}


def parse_config(doc: dict) -> RunConfig:
    _typed(doc, dict, "config")
    _check_keys(doc, _TOP_KEYS, "config")

    dataset = _parse_dataset(_require(doc, "dataset", "config"))
    split = _parse_split(doc.get("split"))
    if dataset.kind == "csv" and dataset.path is not None and split is None:
        raise ConfigError("config.split: required for single-file csv datasets")

    model = _parse_model(doc.get("model", {}))
    knn_options = _parse_knn_options(doc.get("knn_options", {"kind": "exponential"}))
    mix = _parse_mix(doc.get("mix", {}))
    search = _parse_search(doc.get("search", {}), seed=int(doc.get("seed", 0)))
    methods = [_parse_method(m, i) for i, m in enumerate(doc.get("methods", []))]
    analyze = _parse_analyze(doc.get("analyze", {}))

    workers = doc.get("workers")
    if workers is not None:
        workers = int(_typed(workers, (int,), "config.workers"))
    return RunConfig(
        dataset=dataset,
        split=split,
        model=model,
        knn_options=knn_options,
        mix=mix,
        search=search,
        methods=methods,
        analyze=analyze,
        out_dir=str(doc.get("out_dir", "runs/out")),
        seed=int(doc.get("seed", 0)),
        workers=workers,
        figures=bool(doc.get("figures", True)),
        n_seeds=int(doc.get("n_seeds", 5)),
        raw=doc,
    )


def _parse_dataset(d: dict) -> DatasetConfig:
    path = "config.dataset"
    _typed(d, dict, path)
    _check_keys(d, {
        "kind", "path", "train_path", "val_path", "test_path", "label_columns",
        "name", "train_size", "val_size", "test_size", "noise", "seed", "dim",
        "degree", "clusters", "cluster_size",
        "standardize_features", "standardize_labels",
    }, path)
    kind = _typed(_require(d, "kind", path), str, f"{path}.kind")
    out = DatasetConfig(
        kind=kind,
        standardize_features=bool(d.get("standardize_features", True)),
        standardize_labels=bool(d.get("standardize_labels", False)),
    )
    if kind == "csv":
        cols = _require(d, "label_columns", path)
        _typed(cols, list, f"{path}.label_columns")
        out.label_columns = [str(c) for c in cols]
        if "path" in d:
            out.path = _typed(d["path"], str, f"{path}.path")
        elif "train_path" in d:
            out.train_path = _typed(d["train_path"], str, f"{path}.train_path")
            out.val_path = _typed(_require(d, "val_path", path), str,
                                  f"{path}.val_path")
            out.test_path = _typed(_require(d, "test_path", path), str,
                                   f"{path}.test_path")
        else:
            raise ConfigError(f"{path}: needs 'path' or per-split "
                              "'train_path'/'val_path'/'test_path'")
    elif kind == "synthetic":
        out.synthetic = SyntheticSpec(
            kind=_typed(_require(d, "name", path), str, f"{path}.name"),
            train_size=int(d.get("train_size", 40)),
            val_size=int(d.get("val_size", 0)),
            test_size=int(d.get("test_size", 20)),
            noise=float(d.get("noise", 0.0)),
            seed=int(d.get("seed", 0)),
            dim=int(d.get("dim", 1)),
            degree=int(d.get("degree", 1)),
            clusters=int(d.get("clusters", 8)),
            cluster_size=int(d.get("cluster_size", 5)),
        )
    else:
        raise ConfigError(f"{path}.kind: must be 'csv' or 'synthetic', got {kind!r}")
    return out


def _parse_split(d) -> SplitSpec | None:
    if d is None:
        return None
    path = "config.split"
    _typed(d, dict, path)
    _check_keys(d, {"train_size", "val_size", "test_size", "seed"}, path)
    return SplitSpec(
        train_size=int(_require(d, "train_size", path)),
        val_size=int(_require(d, "val_size", path)),
        test_size=int(_require(d, "test_size", path)),
        seed=int(d.get("seed", 0)),
    )


def _parse_model(d: dict) -> nn.ModelSpec:
    path = "config.model"
    _typed(d, dict, path)
    _check_keys(d, {"hidden", "layer_norm", "lr", "batch_size", "epochs"}, path)
    return nn.ModelSpec(
        hidden=tuple(_int_list(d.get("hidden", [32, 32]), f"{path}.hidden")),
        layer_norm=bool(d.get("layer_norm", False)),
        lr=float(d.get("lr", 1e-3)),
        batch_size=int(d.get("batch_size", 32)),
        epochs=int(d.get("epochs", 100)),
    )


def _parse_knn_options(d: dict) -> dict:
    path = "config.knn_options"
    _typed(d, dict, path)
    _check_keys(d, {"kind", "base", "max_exp", "step", "count", "values"}, path)
    kind = _typed(d.get("kind", "exponential"), str, f"{path}.kind")
    if kind == "explicit":
        return {"kind": "explicit", "values": _int_list(_require(d, "values", path),
                                                        f"{path}.values")}
    if kind == "exponential":
        return {"kind": "exponential", "base": int(d.get("base", 2)),
                "max_exp": int(d.get("max_exp", 7))}
    if kind == "linear":
        return {"kind": "linear", "step": int(d.get("step", 10)),
                "count": int(d.get("count", 19))}
    raise ConfigError(f"{path}.kind: unknown option series kind {kind!r}")


def _parse_mix(d: dict) -> MixConfig:
    path = "config.mix"
    _typed(d, dict, path)
    _check_keys(d, {"lambda_mode", "lam", "alpha", "seed"}, path)
    try:
        return MixConfig(
            lambda_mode=str(d.get("lambda_mode", "fixed")),
            lam=float(d.get("lam", 0.5)),
            alpha=float(d.get("alpha", 1.0)),
            seed=int(d.get("seed", 0)),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_search(d: dict, seed: int) -> SearchConfig:
    path = "config.search"
    _typed(d, dict, path)
    _check_keys(d, {
        "samples_per_iter", "max_iters", "patience", "improve_threshold",
        "clip_eps", "ppo_epochs", "entropy_weight", "baseline_weight",
        "controller_lr", "controller_hidden", "controller_input_len", "eps_loss",
    }, path)
    try:
        return SearchConfig(
            samples_per_iter=int(d.get("samples_per_iter", 20)),
            max_iters=int(d.get("max_iters", 100)),
            patience=int(d.get("patience", 10)),
            improve_threshold=float(d.get("improve_threshold", 0.001)),
            clip_eps=float(d.get("clip_eps", 0.2)),
            ppo_epochs=int(d.get("ppo_epochs", 4)),
            entropy_weight=float(d.get("entropy_weight", 0.01)),
            baseline_weight=float(d.get("baseline_weight", 0.95)),
            controller_lr=float(d.get("controller_lr", 0.0002)),
            controller_hidden=tuple(_int_list(d.get("controller_hidden",
                                                    [100, 100, 100, 100]),
                                              f"{path}.controller_hidden")),
            controller_input_len=int(d.get("controller_input_len", 16)),
            eps_loss=float(d.get("eps_loss", 1e-8)),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_method(d: dict, i: int) -> MethodSpec:
    path = f"config.methods[{i}]"
    _typed(d, dict, path)
    _check_keys(d, {"kind", "alpha", "n_pairs", "eligible_layers", "budget",
                    "policy_path", "fixed_lam"}, path)
    kind = _typed(_require(d, "kind", path), str, f"{path}.kind")
    if kind not in METHOD_KINDS:
        raise ConfigError(f"{path}.kind: unknown method {kind!r} "
                          f"(choose from {sorted(METHOD_KINDS)})")
    n_pairs = d.get("n_pairs")
    fixed_lam = d.get("fixed_lam")
    return MethodSpec(
        kind=kind,
        alpha=float(d.get("alpha", 1.0)),
        n_pairs=None if n_pairs is None else int(n_pairs),
        eligible_layers=tuple(_int_list(d.get("eligible_layers", [0, 1, 2]),
                                        f"{path}.eligible_layers")),
        budget=int(d.get("budget", 8)),
        policy_path=d.get("policy_path"),
        fixed_lam=None if fixed_lam is None else float(fixed_lam),
    )


def _parse_analyze(d: dict) -> AnalyzeConfig:
    path = "config.analyze"
    _typed(d, dict, path)
    _check_keys(d, {"bands", "model_checkpoint", "policy_path", "pair_cap",
                    "band_seeds"}, path)
    bands = []
    for i, band in enumerate(d.get("bands", [])):
        _typed(band, list, f"{path}.bands[{i}]")
        if len(band) != 2:
            raise ConfigError(f"{path}.bands[{i}]: expected [lo, hi]")
        bands.append((float(band[0]), float(band[1])))
    return AnalyzeConfig(
        bands=bands,
        model_checkpoint=d.get("model_checkpoint"),
        policy_path=d.get("policy_path"),
        pair_cap=int(d.get("pair_cap", 10000)),
        band_seeds=int(d.get("band_seeds", 5)),
    )


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Read a config (or a run manifest, whose resolved config is reused)."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if "tool_version" in doc and "config" in doc:
        doc = doc["config"]  # replaying a manifest
    if overrides:
        doc = {**doc, **{k: v for k, v in overrides.items() if v is not None}}
    return parse_config(doc)
