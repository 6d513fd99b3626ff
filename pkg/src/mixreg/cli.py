"""Command-line entry point: search, compare, augment, analyze, gen-synthetic."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, analysis, controller as ctl, figures, nn
from .baselines import (
    MethodSpec,
    run_global_knn,
    run_manifold_mixup,
    run_no_augmentation,
    run_original_mixup,
    run_policy_manifold,
    run_policy_mix,
)
from .config import ConfigError, RunConfig, load_config
from .data import (
    DataError,
    Dataset,
    apply_label_standardization,
    apply_standardization,
    concat,
    generate_synthetic,
    load_csv,
    split,
    standardize,
    standardize_labels,
    write_csv,
    write_metadata,
)
from .mixing import mix_with_policy
from .neighbors import KnnOptions, build_index, option_series
from .search import (
    read_policy_csv,
    run_search,
    write_policy_csv,
    write_reward_trace,
)

WORKERS_ENV = "MIXREG_WORKERS"


class CliError(RuntimeError):
    pass


def resolve_workers(cfg: RunConfig) -> int:
    if cfg.workers is not None:
        return max(1, cfg.workers)
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def prepare_data(cfg: RunConfig):
    """Load or generate the dataset and return standardized (train, val, test)."""
    if cfg.dataset.kind == "csv":
        if cfg.dataset.path is not None:
            full = load_csv(cfg.dataset.path, cfg.dataset.label_columns)
            train, val, test = split(full, cfg.split)
        else:
            train = load_csv(cfg.dataset.train_path, cfg.dataset.label_columns)
            val = load_csv(cfg.dataset.val_path, cfg.dataset.label_columns)
            test = load_csv(cfg.dataset.test_path, cfg.dataset.label_columns)
    else:
        full = generate_synthetic(cfg.dataset.synthetic)
        train = full.split_part("train")
        val = full.split_part("val")
        test = full.split_part("test")
    if cfg.dataset.standardize_features:
        train = standardize(train)
        val = apply_standardization(val, train.feature_stats) if val.n else val
        test = apply_standardization(test, train.feature_stats) if test.n else test
    if cfg.dataset.standardize_labels:
        train = standardize_labels(train)
        val = apply_label_standardization(val, train.label_stats) if val.n else val
        test = apply_label_standardization(test, train.label_stats) if test.n else test
    return train, val, test


def resolve_options(cfg: RunConfig, train: Dataset) -> KnnOptions:
    spec = cfg.knn_options
    cap = train.n - 1
    if spec["kind"] == "explicit":
        values = [v for v in spec["values"] if v <= cap]
        if 0 not in values:
            values = [0] + values
        if values == [0]:
            raise ConfigError("config.knn_options.values: no usable k below dataset size")
        return KnnOptions(values=tuple(sorted(set(values))))
    if spec["kind"] == "exponential":
        return option_series("exponential", cap, base=spec["base"], max_exp=spec["max_exp"])
    return option_series("linear", cap, step=spec["step"], count=spec["count"])


def write_manifest(cfg: RunConfig, command: str, out: Path, artifacts: dict,
                   runtimes: dict, workers: int):
    doc = {
        "tool_version": __version__,
        "command": command,
        "config": cfg.raw,
        "seeds": {"master": cfg.seed},
        "workers_used": workers,
        "artifacts": artifacts,
        "runtimes_minutes": runtimes,
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2), encoding="utf-8")


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_search(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    workers = resolve_workers(cfg)
    train, val, _ = prepare_data(cfg)
    options = resolve_options(cfg, train)
    index = build_index(train)
    t0 = time.perf_counter()
    result = run_search(train, val, options, cfg.model, cfg.search, cfg.mix,
                        index=index, workers=workers)
    minutes = (time.perf_counter() - t0) / 60.0

    probs = ctl.softmax_rows(ctl.policy_logits(result.controller))
    chosen_prob = probs[np.arange(result.policy.n), result.policy.choices]
    write_policy_csv(result.policy, chosen_prob, out / "policy.csv")
    write_reward_trace(result.trace, out / "reward_trace.csv")
    ctl.save_controller(result.controller, out / "controller.json")
    artifacts = {
        "policy": str(out / "policy.csv"),
        "reward_trace": str(out / "reward_trace.csv"),
        "controller": str(out / "controller.json"),
    }
    if cfg.figures:
        figdir = out / "figures"
        figdir.mkdir(exist_ok=True)
        figures.save_reward_trace_figure(result.trace, figdir / "reward_trace.png")
        counts = analysis.policy_histogram(result.policy)
        figures.save_policy_histogram_figure(result.policy, counts,
                                             figdir / "policy_histogram.png")
        artifacts["figures"] = str(figdir)
    write_manifest(cfg, "search", out, artifacts, {"search": minutes}, workers)
    print(f"search finished: {result.iterations} iterations, "
          f"converged={result.converged}, "
          f"mode loss {result.mode_loss:.6g}, best sampled {result.best_sampled_loss:.6g}")
    print(f"policy written to {out / 'policy.csv'}")
    return 0


def _method_policy(cfg: RunConfig, spec: MethodSpec, train, val, options, index,
                   out: Path, workers: int):
    """The searched policy for the policy methods: load from file or run the search."""
    if spec.policy_path:
        return read_policy_csv(spec.policy_path, options)
    result = run_search(train, val, options, cfg.model, cfg.search, cfg.mix,
                        index=index, workers=workers)
    probs = ctl.softmax_rows(ctl.policy_logits(result.controller))
    chosen = probs[np.arange(result.policy.n), result.policy.choices]
    write_policy_csv(result.policy, chosen, out / "policy.csv")
    write_reward_trace(result.trace, out / "reward_trace.csv")
    return result.policy


def cmd_compare(cfg: RunConfig, only_methods: list[str] | None = None) -> int:
    out = _outdir(cfg)
    workers = resolve_workers(cfg)
    train, val, test = prepare_data(cfg)
    options = resolve_options(cfg, train)
    index = build_index(train)

    specs = cfg.methods or [MethodSpec(kind="none")]
    if only_methods:
        specs = [m for m in specs if m.kind in only_methods]
        if not specs:
            raise CliError(f"no configured method matches {only_methods}")

    rows = []
    runtimes = {}
    searched_policy = None
    failures = 0
    for spec in specs:
        t0 = time.perf_counter()
        try:
            if spec.kind == "none":
                res = run_no_augmentation(train, val, test, cfg.model,
                                          cfg.n_seeds, cfg.seed)
            elif spec.kind == "mixup":
                res = run_original_mixup(train, val, test, cfg.model, spec.alpha,
                                         spec.n_pairs, spec.fixed_lam,
                                         cfg.n_seeds, cfg.seed)
            elif spec.kind == "manifold_mixup":
                res = run_manifold_mixup(train, val, test, cfg.model, spec.alpha,
                                         spec.eligible_layers, spec.fixed_lam,
                                         cfg.n_seeds, cfg.seed)
            elif spec.kind == "global_knn":
                _, res = run_global_knn(train, val, test, cfg.model, spec.budget,
                                        index, cfg.mix, n_seeds=cfg.n_seeds,
                                        base_seed=cfg.seed)
            elif spec.kind == "knn_policy":
                searched_policy = _method_policy(cfg, spec, train, val, options,
                                                 index, out, workers)
                res = run_policy_mix(train, val, test, cfg.model, searched_policy,
                                     index, cfg.mix, cfg.n_seeds, cfg.seed)
            else:  # knn_policy_manifold
                policy = searched_policy
                if spec.policy_path or policy is None:
                    policy = _method_policy(cfg, spec, train, val, options,
                                            index, out, workers)
                res = run_policy_manifold(train, val, test, cfg.model, policy,
                                          index, spec.eligible_layers,
                                          cfg.mix.lam, cfg.n_seeds, cfg.seed)
            row = res.table_row()
            row["per_seed_rmse"] = res.rmse_per_seed
            row["per_seed_r2"] = res.r2_per_seed
            row.update({k: v for k, v in res.extra.items()})
            rows.append(row)
            runtimes[spec.kind] = res.runtime_minutes
        except Exception as exc:  # record, continue with other methods
            failures += 1
            rows.append({"method": spec.kind, "error": str(exc)})
            runtimes[spec.kind] = (time.perf_counter() - t0) / 60.0

    table = analysis.render_results_table(rows)
    (out / "results.txt").write_text(table, encoding="utf-8")
    (out / "results.json").write_text(
        json.dumps({"results": rows, "runtimes_minutes": runtimes}, indent=2),
        encoding="utf-8",
    )
    # reference model checkpoint for later analysis runs
    ref = cfg.model.build(train.n_features, train.n_labels, cfg.seed)
    nn.train(ref, train.features, train.labels, cfg.model.train_config(cfg.seed + 1))
    nn.save_checkpoint(ref, out / "model.json")

    artifacts = {
        "results_text": str(out / "results.txt"),
        "results_json": str(out / "results.json"),
        "model_checkpoint": str(out / "model.json"),
    }
    if cfg.figures:
        figdir = out / "figures"
        figdir.mkdir(exist_ok=True)
        figures.save_method_comparison_figure(rows, figdir / "method_comparison.png")
        artifacts["figures"] = str(figdir)
    write_manifest(cfg, "compare", out, artifacts, runtimes, workers)
    print(table, end="")
    return 2 if failures else 0


def cmd_augment(cfg: RunConfig, policy_path: str) -> int:
    out = _outdir(cfg)
    train, _, _ = prepare_data(cfg)
    options = resolve_options(cfg, train)
    policy = read_policy_csv(policy_path, options)
    if policy.n != train.n:
        raise CliError(
            f"policy file covers {policy.n} examples but the training set has {train.n}"
        )
    index = build_index(train)
    mixed = mix_with_policy(train, index, policy, cfg.mix)
    augmented = concat(train, mixed)
    write_csv(augmented, out / "augmented.csv")
    write_metadata(augmented, out / "augmented.meta.json")
    write_manifest(cfg, "augment", out,
                   {"augmented": str(out / "augmented.csv")}, {}, 1)
    print(f"wrote {augmented.n} rows ({train.n} original + {mixed.n} mixed) "
          f"to {out / 'augmented.csv'}")
    return 0


def cmd_analyze(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    studies = out / "studies"
    studies.mkdir(parents=True, exist_ok=True)
    figdir = out / "figures"
    if cfg.figures:
        figdir.mkdir(exist_ok=True)
    train, val, test = prepare_data(cfg)
    index = build_index(train)
    bands = cfg.analyze.bands or [(i / 5, (i + 1) / 5 + (1e-9 if i == 4 else 0))
                                  for i in range(5)]
    artifacts = {}
    runtimes = {}

    t0 = time.perf_counter()
    if cfg.analyze.model_checkpoint:
        ckpt = Path(cfg.analyze.model_checkpoint)
        if not ckpt.exists():
            raise CliError(
                f"model checkpoint {ckpt} not found; train one first "
                "(mixreg compare saves model.json) or fix analyze.model_checkpoint"
            )
        model = nn.load_checkpoint(ckpt)
        study = analysis.label_error_vs_distance(model, train, index, bands,
                                                 cfg.analyze.pair_cap, cfg.seed)
        study.to_csv(studies / "label_error_vs_distance.csv")
        artifacts["label_error_vs_distance"] = str(studies / "label_error_vs_distance.csv")
        if cfg.figures:
            figures.save_band_study_figure(
                study, figdir / "label_error_vs_distance.png",
                ylabel="label RMSE", title="interpolated-label error by distance",
            )
    runtimes["label_error_vs_distance"] = (time.perf_counter() - t0) / 60.0

    t0 = time.perf_counter()
    study = analysis.distance_band_model_study(
        train, val, test, bands, index, list(cfg.model.hidden),
        cfg.model.train_config(0), cfg.model.layer_norm,
        cfg.analyze.band_seeds, cfg.seed,
    )
    study.to_csv(studies / "distance_band_rmse.csv")
    artifacts["distance_band_rmse"] = str(studies / "distance_band_rmse.csv")
    if cfg.figures:
        figures.save_band_study_figure(study, figdir / "distance_band_rmse.png",
                                       ylabel="test RMSE",
                                       title="model RMSE by mixing-distance band")
    runtimes["distance_band_rmse"] = (time.perf_counter() - t0) / 60.0

    if cfg.analyze.policy_path:
        options = resolve_options(cfg, train)
        policy = read_policy_csv(cfg.analyze.policy_path, options)
        counts = analysis.policy_histogram(policy)
        analysis.histogram_to_csv(policy, studies / "policy_histogram.csv")
        artifacts["policy_histogram"] = str(studies / "policy_histogram.csv")
        if cfg.figures:
            figures.save_policy_histogram_figure(policy, counts,
                                                 figdir / "policy_histogram.png")

    if cfg.figures:
        artifacts["figures"] = str(figdir)
    write_manifest(cfg, "analyze", out, artifacts, runtimes, 1)
    print(f"studies written under {studies}")
    return 0


def cmd_gen_synthetic(cfg: RunConfig) -> int:
    if cfg.dataset.kind != "synthetic":
        raise CliError("gen-synthetic needs a synthetic dataset config")
    out = _outdir(cfg)
    data = generate_synthetic(cfg.dataset.synthetic)
    write_csv(data, out / "dataset.csv")
    write_metadata(data, out / "dataset.meta.json")
    write_manifest(cfg, "gen-synthetic", out,
                   {"dataset": str(out / "dataset.csv"),
                    "metadata": str(out / "dataset.meta.json")}, {}, 1)
    print(f"wrote {data.n} rows to {out / 'dataset.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixreg",
        description="Learned k-nearest-neighbor mixup augmentation for regression",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON config (or a run manifest)")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--workers", type=int,
                       help=f"worker processes (default: ${WORKERS_ENV} or cpu count)")
        p.add_argument("--no-figures", action="store_true",
                       help="skip PNG rendering")

    p = sub.add_parser("search", help="run the mixing-policy search")
    common(p)
    p = sub.add_parser("compare", help="run the configured methods and tabulate")
    common(p)
    p.add_argument("--method", action="append",
                   help="restrict to this method kind (repeatable)")
    p = sub.add_parser("augment", help="materialize the augmented training set")
    common(p)
    p.add_argument("--policy", required=True, help="policy CSV from search")
    p = sub.add_parser("analyze", help="run the distance/label-error studies")
    common(p)
    p = sub.add_parser("gen-synthetic", help="write a synthetic dataset to CSV")
    common(p)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "out_dir": getattr(args, "out", None),
        "seed": getattr(args, "seed", None),
        "workers": getattr(args, "workers", None),
    }
    if getattr(args, "no_figures", False):
        overrides["figures"] = False
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "search":
            return cmd_search(cfg)
        if args.command == "compare":
            return cmd_compare(cfg, args.method)
        if args.command == "augment":
            return cmd_augment(cfg, args.policy)
        if args.command == "analyze":
            return cmd_analyze(cfg)
        if args.command == "gen-synthetic":
            return cmd_gen_synthetic(cfg)
        raise CliError(f"unknown command {args.command}")
    except (ConfigError, DataError, CliError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
