"""Policy network: a fixed all-ones input feeding one softmax head per example.

A single forward pass yields S categorical distributions over the k-option
menu; sampling, log-probabilities, entropy and their exact gradients are
all computed from that one logit matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .mixing import MixPolicy
from .neighbors import KnnOptions

CONTROLLER_FORMAT = "controller-checkpoint-v1"


@dataclass
class ControllerNet:
    body: nn.Mlp
    n_examples: int
    options: KnnOptions
    input_len: int = 16

    def __post_init__(self):
        expected = self.n_examples * len(self.options)
        if self.body.output_dim != expected:
            raise ValueError(
                f"controller body emits {self.body.output_dim} values, "
                f"needs {expected} (examples x options)"
            )
        if self.body.input_dim != self.input_len:
            raise ValueError("controller body input does not match fixed input length")

    @property
    def fixed_input(self) -> np.ndarray:
        return np.ones((1, self.input_len))


def create_controller(
    n_examples: int,
    options: KnnOptions,
    hidden: tuple[int, ...] = (100, 100, 100, 100),
    input_len: int = 16,
    seed: int = 0,
) -> ControllerNet:
    body = nn.Mlp.create(input_len, list(hidden), n_examples * len(options), seed=seed)
    return ControllerNet(body=body, n_examples=n_examples, options=options, input_len=input_len)


def policy_logits(net: ControllerNet) -> np.ndarray:
    """One forward pass on the all-ones input, reshaped to (examples, options)."""
    out = net.body.forward(net.fixed_input)
    return out.reshape(net.n_examples, len(net.options))


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def entropy_rows(logits: np.ndarray) -> np.ndarray:
    p = softmax_rows(logits)
    logp = log_softmax_rows(logits)
    return -(p * logp).sum(axis=1)


@dataclass
class PolicySample:
    policy: MixPolicy
    log_prob: float  # joint over examples
    entropy: float  # joint (sum of per-head entropies)
    per_example_log_prob: np.ndarray


def sample_policy(net: ControllerNet, seed: int) -> PolicySample:
    """Independent categorical draw per example head."""
    logits = policy_logits(net)
    p = softmax_rows(logits)
    logp = log_softmax_rows(logits)
    rng = np.random.default_rng(seed)
    u = rng.random(net.n_examples)
    cum = np.cumsum(p, axis=1)
    choices = np.minimum((u[:, None] > cum).sum(axis=1), len(net.options) - 1)
    per = logp[np.arange(net.n_examples), choices]
    return PolicySample(
        policy=MixPolicy(choices=choices, options=net.options),
        log_prob=float(per.sum()),
        entropy=float(entropy_rows(logits).sum()),
        per_example_log_prob=per,
    )


def log_prob_of(net: ControllerNet, policy: MixPolicy) -> float:
    """Joint log-probability of the given choices under the current net."""
    if policy.n != net.n_examples:
        raise ValueError("policy length does not match controller")
    logp = log_softmax_rows(policy_logits(net))
    return float(logp[np.arange(net.n_examples), policy.choices].sum())


def mode_policy(net: ControllerNet) -> MixPolicy:
    """Argmax option per example; ties resolve to the smaller k."""
    logits = policy_logits(net)
    return MixPolicy(choices=np.argmax(logits, axis=1), options=net.options)


def mode_probabilities(net: ControllerNet) -> np.ndarray:
    """Probability of each example's argmax choice (for the policy file)."""
    p = softmax_rows(policy_logits(net))
    return p[np.arange(net.n_examples), np.argmax(p, axis=1)]


def logits_gradient_to_params(net: ControllerNet, d_logits: np.ndarray) -> list[nn.LayerGrads]:
    """Backpropagate an objective gradient w.r.t. the logit matrix into
    gradients w.r.t. the controller parameters."""
    out, caches = net.body.forward_cached(net.fixed_input)
    del out
    grads = net.body.zero_grads()
    net.body.backward(d_logits.reshape(1, -1), caches, grads)
    return grads


def save_controller(net: ControllerNet, path: str | Path):
    doc = {
        "format": CONTROLLER_FORMAT,
        "n_examples": net.n_examples,
        "options": list(net.options.values),
        "input_len": net.input_len,
        "body": nn.checkpoint_doc(net.body),
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_controller(path: str | Path) -> ControllerNet:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CONTROLLER_FORMAT:
        raise ValueError(f"not a controller checkpoint: {path}")
    return ControllerNet(
        body=nn.model_from_doc(doc["body"]),
        n_examples=doc["n_examples"],
        options=KnnOptions(values=tuple(doc["options"])),
        input_len=doc["input_len"],
    )
