"""Policy search: parallel policy evaluation, inverse-loss rewards with an
exponential-moving-average baseline, and clipped-surrogate policy updates.

One search iteration samples T mixing policies from the controller, trains a
fresh regression model per policy on the union of the training set and its
mixed examples, scores each on the validation set, converts losses to
baselined rewards sequentially in sample order, and then updates the
controller for a few epochs on the collected batch.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import controller as ctl
from . import nn
from .data import Dataset
from .mixing import MixConfig, MixPolicy, policy_lambdas, policy_pairs
from .neighbors import KnnIndex, KnnOptions, build_index

# seed-derivation tags so every random stream in a run is independent
_TAG_SAMPLE = 1
_TAG_MODEL = 2
_TAG_SHUFFLE = 3
_TAG_MIX = 4


def derive_seed(master: int, *parts: int) -> int:
    return int(np.random.SeedSequence([master, *parts]).generate_state(1)[0])


@dataclass
class SearchConfig:
    samples_per_iter: int = 20  # policies evaluated per iteration
    max_iters: int = 100
    patience: int = 10
    improve_threshold: float = 0.001  # relative val-loss improvement that resets patience
    clip_eps: float = 0.2
    ppo_epochs: int = 4
    entropy_weight: float = 0.01
    baseline_weight: float = 0.95
    controller_lr: float = 0.0002
    controller_hidden: tuple[int, ...] = (100, 100, 100, 100)
    controller_input_len: int = 16
    eps_loss: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.samples_per_iter < 1:
            raise ValueError("samples_per_iter must be >= 1")
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must be in (0, 1)")
        if not 0.0 < self.baseline_weight < 1.0:
            raise ValueError("baseline_weight must be in (0, 1)")
        self.controller_hidden = tuple(int(h) for h in self.controller_hidden)


@dataclass
class EvalTask:
    """Everything one policy evaluation needs; tasks are independent and
    safe to run in any process."""

    train_features: np.ndarray
    train_labels: np.ndarray
    val_features: np.ndarray
    val_labels: np.ndarray
    neighbor_ids: np.ndarray
    k_values: np.ndarray
    model_spec: nn.ModelSpec
    model_seed: int
    shuffle_seed: int
    lambda_mode: str = "fixed"
    lam: float = 0.5
    alpha: float = 1.0
    mix_seed: int = 0


def evaluate_policy(task: EvalTask) -> float:
    """Train a fresh model on train ∪ mixed(train, policy); mean val MSE.

    Diverged trainings are reported as +inf rather than raised, so one bad
    sample cannot abort a whole iteration.
    """
    src_a, src_b = policy_pairs(task.neighbor_ids, np.asarray(task.k_values))
    lams = policy_lambdas(
        len(src_a),
        MixConfig(lambda_mode=task.lambda_mode, lam=task.lam, alpha=task.alpha,
                  seed=task.mix_seed),
    )
    lam_col = lams[:, None]
    x = np.vstack([
        task.train_features,
        lam_col * task.train_features[src_a] + (1 - lam_col) * task.train_features[src_b],
    ])
    y = np.vstack([
        task.train_labels,
        lam_col * task.train_labels[src_a] + (1 - lam_col) * task.train_labels[src_b],
    ])
    model = task.model_spec.build(x.shape[1], y.shape[1], task.model_seed)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            nn.train(model, x, y, task.model_spec.train_config(task.shuffle_seed))
    except nn.TrainingDiverged:
        return math.inf
    return nn.mse_loss(model.forward(task.val_features), task.val_labels)


def evaluate_many(tasks: list[EvalTask], workers: int = 1, pool=None) -> list[float]:
    """Order-preserving evaluation; results do not depend on worker count."""
    if pool is not None:
        return list(pool.map(evaluate_policy, tasks))
    if workers <= 1 or len(tasks) <= 1:
        return [evaluate_policy(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as one_shot:
        return list(one_shot.map(evaluate_policy, tasks))


def reward(loss: float, delta: float, eps_loss: float = 1e-8) -> float:
    """Inverse validation loss minus the moving-average baseline."""
    if loss < 0:
        raise ValueError("loss must be >= 0")
    return 1.0 / max(loss, eps_loss) - delta


def update_baseline(delta: float, loss: float, weight: float = 0.95,
                    eps_loss: float = 1e-8) -> float:
    if loss < 0:
        raise ValueError("loss must be >= 0")
    return weight * delta + (1.0 - weight) * (1.0 / max(loss, eps_loss))


def clipped_surrogate(rho, adv, clip_eps: float = 0.2):
    """min(rho*adv, clip(rho)*adv), elementwise."""
    rho = np.asarray(rho, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    return np.minimum(rho * adv, np.clip(rho, 1 - clip_eps, 1 + clip_eps) * adv)


def ppo_objective_and_grad(net: ctl.ControllerNet, actions: np.ndarray,
                           logp_old: np.ndarray, advantages: np.ndarray,
                           cfg: SearchConfig):
    """Clipped-surrogate objective (plus entropy bonus) and its exact gradient
    with respect to the controller's logit matrix."""
    t_count, s_count = actions.shape
    logits = ctl.policy_logits(net)
    p = ctl.softmax_rows(logits)
    logp_rows = ctl.log_softmax_rows(logits)
    logp_new = logp_rows[np.arange(s_count)[None, :], actions].sum(axis=1)
    rho = np.exp(logp_new - logp_old)
    surr1 = rho * advantages
    surr2 = np.clip(rho, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * advantages
    ent = ctl.entropy_rows(logits)
    objective = float(np.minimum(surr1, surr2).mean() + cfg.entropy_weight * ent.sum())
    if not math.isfinite(objective):
        return objective, None

    # d surrogate / d rho is adv on the unclipped branch, zero on a clipped one
    gate = (surr1 <= surr2).astype(np.float64)
    coef = advantages * rho * gate / t_count  # (T,)
    d_logits = np.zeros_like(logits)
    np.add.at(
        d_logits,
        (np.tile(np.arange(s_count), t_count), actions.ravel()),
        np.repeat(coef, s_count),
    )
    d_logits -= coef.sum() * p
    d_logits += cfg.entropy_weight * (-(p * (logp_rows + ent[:, None])))
    return objective, d_logits


def ppo_update(net: ctl.ControllerNet, adam: nn.Adam,
               samples: list[ctl.PolicySample], rewards: np.ndarray,
               cfg: SearchConfig) -> dict:
    """Several ascent epochs on the collected batch; on a non-finite
    objective the pre-update parameters are restored and the event logged."""
    actions = np.stack([s.policy.choices for s in samples])
    logp_old = np.array([s.log_prob for s in samples])
    snapshot = [p.copy() for p in net.body.params()]
    adam_snapshot = (adam.step_count, [m.copy() for m in adam._m], [v.copy() for v in adam._v])
    objective = math.nan
    for _ in range(cfg.ppo_epochs):
        objective, d_logits = ppo_objective_and_grad(net, actions, logp_old, rewards, cfg)
        if d_logits is None:
            for p, q in zip(net.body.params(), snapshot):
                p[:] = q
            adam.step_count, adam._m, adam._v = adam_snapshot
            return {"objective": objective, "aborted": True}
        grads = ctl.logits_gradient_to_params(net, -d_logits)  # minimize -objective
        adam.step(grads)
    return {"objective": objective, "aborted": False}


@dataclass
class SearchResult:
    policy: MixPolicy  # the winner of the final re-evaluation
    best_sampled: MixPolicy
    best_sampled_loss: float
    mode: MixPolicy
    mode_loss: float
    controller: ctl.ControllerNet
    trace: list[dict] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    aborted_updates: int = 0


def run_search(
    train: Dataset,
    val: Dataset,
    options: KnnOptions,
    model_spec: nn.ModelSpec,
    cfg: SearchConfig,
    mix_cfg: MixConfig = MixConfig(),
    index: KnnIndex | None = None,
    workers: int = 1,
) -> SearchResult:
    """Full search loop; returns whichever of (mode of the trained controller,
    best sampled policy) re-evaluates to the lower validation loss."""
    if options.max_k > train.n - 1:
        raise ValueError(
            f"largest k option {options.max_k} exceeds available neighbors {train.n - 1}"
        )
    if index is None:
        index = build_index(train)
    master = cfg.seed
    net = ctl.create_controller(
        train.n, options, hidden=cfg.controller_hidden,
        input_len=cfg.controller_input_len, seed=master,
    )
    adam = nn.Adam(net.body, cfg.controller_lr)

    def make_task(k_values, it, t):
        return EvalTask(
            train_features=train.features,
            train_labels=train.labels,
            val_features=val.features,
            val_labels=val.labels,
            neighbor_ids=index.ids,
            k_values=k_values,
            model_spec=model_spec,
            model_seed=derive_seed(master, it, _TAG_MODEL),
            shuffle_seed=derive_seed(master, it, _TAG_SHUFFLE),
            lambda_mode=mix_cfg.lambda_mode,
            lam=mix_cfg.lam,
            alpha=mix_cfg.alpha,
            mix_seed=derive_seed(master, it, t, _TAG_MIX),
        )

    delta = 0.0
    best_policy: MixPolicy | None = None
    best_loss = math.inf
    stall = 0
    trace: list[dict] = []
    aborted = 0
    converged = False
    iterations = 0

    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for it in range(cfg.max_iters):
            iterations = it + 1
            samples = [
                ctl.sample_policy(net, derive_seed(master, it, t, _TAG_SAMPLE))
                for t in range(cfg.samples_per_iter)
            ]
            tasks = [make_task(s.policy.k_values, it, t) for t, s in enumerate(samples)]
            losses = evaluate_many(tasks, workers, pool)

            rewards = []
            for loss in losses:  # strictly sequential: each reward sees the current baseline
                rewards.append(reward(loss, delta, cfg.eps_loss))
                delta = update_baseline(delta, loss, cfg.baseline_weight, cfg.eps_loss)

            i_best = int(np.argmin(losses))
            improved = losses[i_best] < best_loss * (1.0 - cfg.improve_threshold)
            if losses[i_best] < best_loss:
                best_loss = losses[i_best]
                best_policy = samples[i_best].policy
            stall = 0 if improved else stall + 1

            stats = ppo_update(net, adam, samples, np.array(rewards), cfg)
            if stats["aborted"]:
                aborted += 1

            finite = [l for l in losses if math.isfinite(l)]
            trace.append({
                "iteration": it,
                "mean_reward": float(np.mean(rewards)),
                "max_reward": float(np.max(rewards)),
                "mean_loss": float(np.mean(finite)) if finite else math.inf,
                "baseline": delta,
                "entropy": samples[0].entropy,
            })

            if stall >= cfg.patience:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()

    # final extraction: deterministic mode vs best sampled, re-evaluated pairwise
    mode = ctl.mode_policy(net)
    final_it = cfg.max_iters + 1
    mode_loss = evaluate_policy(make_task(mode.k_values, final_it, 0))
    if best_policy is None:
        best_policy = mode
    best_re_loss = evaluate_policy(make_task(best_policy.k_values, final_it, 0))
    winner = mode if mode_loss <= best_re_loss else best_policy
    return SearchResult(
        policy=winner,
        best_sampled=best_policy,
        best_sampled_loss=float(best_re_loss),
        mode=mode,
        mode_loss=float(mode_loss),
        controller=net,
        trace=trace,
        iterations=iterations,
        converged=converged,
        aborted_updates=aborted,
    )


def write_reward_trace(trace: list[dict], path: str | Path):
    columns = ["iteration", "mean_reward", "max_reward", "mean_loss", "baseline", "entropy"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in trace:
            writer.writerow(
                [row["iteration"]] + [repr(float(row[c])) for c in columns[1:]]
            )


def write_policy_csv(policy: MixPolicy, probabilities: np.ndarray, path: str | Path):
    """Policy file: one row per example with its chosen k and that choice's
    probability under the controller."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["example_id", "chosen_k", "probability"])
        for i, (k, p) in enumerate(zip(policy.k_values, probabilities)):
            writer.writerow([i, int(k), repr(float(p))])


def read_policy_csv(path: str | Path, options: KnnOptions | None = None) -> MixPolicy:
    ks = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "chosen_k" not in reader.fieldnames:
            raise ValueError(f"{path}: not a policy file")
        for row in reader:
            ks.append(int(row["chosen_k"]))
    if options is None:
        options = KnnOptions(values=tuple(sorted({0} | set(ks))))
    return MixPolicy.from_k_values(ks, options)
