"""Dense MLP engine: exact float64 backprop, Adam, layer normalization, MSE.

Everything here is deliberately small and explicit so that analytic
gradients can be checked against finite differences and so that training
is bitwise reproducible from seeds. The forward pass can be split at any
layer boundary and resumed, which lets callers interpolate hidden
representations between examples during training.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LN_EPS = 1e-5

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_FORMAT = "mlp-checkpoint-v1"


class TrainingDiverged(RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, step: int):
        super().__init__(f"training loss became non-finite at step {step}")
        self.step = step


@dataclass
class DenseLayer:
    """Affine layer with optional layer norm (before activation)."""

    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"  # "relu" | "identity"
    ln_gain: np.ndarray | None = None
    ln_shift: np.ndarray | None = None

    def __post_init__(self):
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ValueError("bias length must match weight rows")
        if self.ln_gain is not None and self.ln_gain.shape != self.bias.shape:
            raise ValueError("layer-norm gain length must match layer width")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def uses_layer_norm(self) -> bool:
        return self.ln_gain is not None

    def params(self) -> list[np.ndarray]:
        out = [self.weights, self.bias]
        if self.ln_gain is not None:
            out += [self.ln_gain, self.ln_shift]
        return out


def layer_norm(x: np.ndarray, gain: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Normalize each row to zero mean / unit variance (1/n), then scale and shift."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * gain + shift


def _layer_forward(layer: DenseLayer, x: np.ndarray):
    z = x @ layer.weights.T + layer.bias
    if layer.ln_gain is not None:
        mu = z.mean(axis=1, keepdims=True)
        var = z.var(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + LN_EPS)
        zhat = (z - mu) * inv
        pre = zhat * layer.ln_gain + layer.ln_shift
    else:
        zhat = inv = None
        pre = z
    a = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
    return a, (x, zhat, inv, pre)


def _layer_backward(layer: DenseLayer, grad_a: np.ndarray, cache, grads: "LayerGrads"):
    x, zhat, inv, pre = cache
    grad_pre = grad_a * (pre > 0) if layer.activation == "relu" else grad_a
    if layer.ln_gain is not None:
        grads.ln_gain += (grad_pre * zhat).sum(axis=0)
        grads.ln_shift += grad_pre.sum(axis=0)
        g = grad_pre * layer.ln_gain
        # d/dz of zhat = (z - mean) / sqrt(var + eps), variance with 1/n
        grad_z = inv * (
            g
            - g.mean(axis=1, keepdims=True)
            - zhat * (g * zhat).mean(axis=1, keepdims=True)
        )
    else:
        grad_z = grad_pre
    grads.weights += grad_z.T @ x
    grads.bias += grad_z.sum(axis=0)
    return grad_z @ layer.weights


@dataclass
class LayerGrads:
    weights: np.ndarray
    bias: np.ndarray
    ln_gain: np.ndarray | None = None
    ln_shift: np.ndarray | None = None

    def arrays(self) -> list[np.ndarray]:
        out = [self.weights, self.bias]
        if self.ln_gain is not None:
            out += [self.ln_gain, self.ln_shift]
        return out


@dataclass
class Mlp:
    """Fully-connected network; float64 parameters throughout."""

    layers: list[DenseLayer]
    seed: int = 0

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(
                    f"layer dims do not chain: {a.out_dim} -> {b.in_dim}"
                )

    @classmethod
    def create(
        cls,
        input_dim: int,
        hidden: list[int] | tuple[int, ...],
        output_dim: int,
        layer_norm: bool = False,
        seed: int = 0,
    ) -> "Mlp":
        """Build an MLP with ReLU hidden layers and an identity output layer.

        Weights are glorot-uniform from a seeded generator; biases start at
        zero. Layer norm, when enabled, applies to hidden layers only.
        """
        dims = [input_dim, *hidden, output_dim]
        rng = np.random.default_rng(seed)
        layers = []
        for i in range(len(dims) - 1):
            fan_in, fan_out = dims[i], dims[i + 1]
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            last = i == len(dims) - 2
            use_ln = layer_norm and not last
            layers.append(
                DenseLayer(
                    weights=w,
                    bias=np.zeros(fan_out),
                    activation="identity" if last else "relu",
                    ln_gain=np.ones(fan_out) if use_ln else None,
                    ln_shift=np.zeros(fan_out) if use_ln else None,
                )
            )
        return cls(layers=layers, seed=seed)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def copy(self) -> "Mlp":
        layers = [
            DenseLayer(
                weights=l.weights.copy(),
                bias=l.bias.copy(),
                activation=l.activation,
                ln_gain=None if l.ln_gain is None else l.ln_gain.copy(),
                ln_shift=None if l.ln_shift is None else l.ln_shift.copy(),
            )
            for l in self.layers
        ]
        return Mlp(layers=layers, seed=self.seed)

    def check_finite(self):
        for p in self.params():
            if not np.all(np.isfinite(p)):
                raise FloatingPointError("model parameters are not finite")

    def forward(self, batch: np.ndarray) -> np.ndarray:
        out, _ = self.forward_cached(batch)
        return out

    def forward_cached(self, batch: np.ndarray, start: int = 0, stop: int | None = None):
        """Run layers [start, stop); returns output and per-layer caches."""
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("batch must be 2-d (rows, features)")
        stop = len(self.layers) if stop is None else stop
        if start == 0 and x.shape[1] != self.input_dim:
            raise ValueError(
                f"batch has {x.shape[1]} columns, model expects {self.input_dim}"
            )
        caches = []
        for layer in self.layers[start:stop]:
            x, cache = _layer_forward(layer, x)
            caches.append(cache)
        return x, caches

    def backward(
        self,
        grad_out: np.ndarray,
        caches,
        grads: list[LayerGrads],
        start: int = 0,
        stop: int | None = None,
    ) -> np.ndarray:
        """Backpropagate through layers [start, stop); accumulates into grads."""
        stop = len(self.layers) if stop is None else stop
        g = grad_out
        for offset in range(stop - 1, start - 1, -1):
            g = _layer_backward(
                self.layers[offset], g, caches[offset - start], grads[offset]
            )
        return g

    def forward_split(self, batch: np.ndarray, split_layer: int):
        """Run the first split_layer layers; split_layer=0 returns the input."""
        if not 0 <= split_layer < len(self.layers):
            raise ValueError(
                f"split_layer {split_layer} out of range [0, {len(self.layers)})"
            )
        hidden, _ = self.forward_cached(batch, 0, split_layer)
        return hidden, ResumePoint(model=self, split_layer=split_layer)

    def zero_grads(self) -> list[LayerGrads]:
        return [
            LayerGrads(
                weights=np.zeros_like(l.weights),
                bias=np.zeros_like(l.bias),
                ln_gain=None if l.ln_gain is None else np.zeros_like(l.ln_gain),
                ln_shift=None if l.ln_shift is None else np.zeros_like(l.ln_shift),
            )
            for l in self.layers
        ]


@dataclass(frozen=True)
class ResumePoint:
    """Continuation token from forward_split."""

    model: Mlp
    split_layer: int


def forward_resume(resume: ResumePoint, hidden: np.ndarray) -> np.ndarray:
    out, _ = resume.model.forward_cached(hidden, resume.split_layer, None)
    return out


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def mse_loss_grad(pred: np.ndarray, target: np.ndarray):
    """Loss and its gradient w.r.t. pred (mean over all entries)."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


class Adam:
    """Adam with bias correction, one moment pair per parameter array."""

    def __init__(self, model: Mlp, lr: float):
        self.lr = lr
        self.step_count = 0
        self._m = [np.zeros_like(p) for p in model.params()]
        self._v = [np.zeros_like(p) for p in model.params()]
        self._params = model.params()

    def step(self, grads: list[LayerGrads]):
        flat = [g for lg in grads for g in lg.arrays()]
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - ADAM_BETA1**t
        bc2 = 1.0 - ADAM_BETA2**t
        for p, g, m, v in zip(self._params, flat, self._m, self._v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 100
    lr: float = 1e-3
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class ModelSpec:
    """Architecture plus training hyperparameters for a regression model."""

    hidden: tuple[int, ...] = (32, 32)
    layer_norm: bool = False
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 100

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)

    def build(self, input_dim: int, output_dim: int, seed: int) -> "Mlp":
        return Mlp.create(input_dim, list(self.hidden), output_dim,
                          layer_norm=self.layer_norm, seed=seed)

    def train_config(self, shuffle_seed: int) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, epochs=self.epochs,
                           lr=self.lr, shuffle_seed=shuffle_seed)


def train_step(model: Mlp, adam: Adam, x: np.ndarray, y: np.ndarray) -> float:
    pred, caches = model.forward_cached(x)
    loss, grad = mse_loss_grad(pred, y)
    grads = model.zero_grads()
    model.backward(grad, caches, grads)
    adam.step(grads)
    return loss


def mixed_train_step(
    model: Mlp,
    adam: Adam,
    x: np.ndarray,
    y_mixed: np.ndarray,
    mix: np.ndarray,
    split_layer: int,
) -> float:
    """One step where row representations at split_layer are combined by `mix`.

    `x` may contain extra rows beyond the training batch (e.g. injected
    neighbors); `mix` has shape (batch, rows) and maps representations of
    all rows to the batch-sized set actually scored against y_mixed.
    Gradients flow through the combination back to every contributing row.
    """
    h, caches_lo = model.forward_cached(x, 0, split_layer)
    hm = mix @ h
    pred, caches_hi = model.forward_cached(hm, split_layer, None)
    loss, grad = mse_loss_grad(pred, y_mixed)
    grads = model.zero_grads()
    g_hm = model.backward(grad, caches_hi, grads, split_layer, None)
    g_h = mix.T @ g_hm
    model.backward(g_h, caches_lo, grads, 0, split_layer)
    adam.step(grads)
    return loss


def train(
    model: Mlp,
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    batch_hook=None,
) -> Mlp:
    """Train in place on MSE; epochs * ceil(n/batch) Adam steps, seeded shuffle.

    batch_hook(model, adam, idx, step) -> loss, when given, replaces the
    plain step (used by hidden-layer mixing variants, which need the batch
    row indices). Raises TrainingDiverged when the loss turns non-finite.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("training data is empty")
    if x.shape[0] != y.shape[0]:
        raise ValueError("feature/label row counts differ")
    adam = Adam(model, cfg.lr)
    rng = np.random.default_rng(cfg.shuffle_seed)
    n = x.shape[0]
    n_batches = math.ceil(n / cfg.batch_size)
    step = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for b in range(n_batches):
            idx = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            if batch_hook is None:
                loss = train_step(model, adam, x[idx], y[idx])
            else:
                loss = batch_hook(model, adam, idx, step)
            if not math.isfinite(loss):
                raise TrainingDiverged(step)
            step += 1
    return model


def checkpoint_doc(model: Mlp) -> dict:
    """JSON-ready document; float lists round-trip bitwise via repr."""
    return {
        "format": CHECKPOINT_FORMAT,
        "seed": model.seed,
        "layers": [
            {
                "weights": layer.weights.tolist(),
                "bias": layer.bias.tolist(),
                "activation": layer.activation,
                "ln_gain": None if layer.ln_gain is None else layer.ln_gain.tolist(),
                "ln_shift": None if layer.ln_shift is None else layer.ln_shift.tolist(),
            }
            for layer in model.layers
        ],
    }


def model_from_doc(doc: dict) -> Mlp:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a model checkpoint document")
    layers = [
        DenseLayer(
            weights=np.array(spec["weights"], dtype=np.float64),
            bias=np.array(spec["bias"], dtype=np.float64),
            activation=spec["activation"],
            ln_gain=None if spec["ln_gain"] is None else np.array(spec["ln_gain"]),
            ln_shift=None if spec["ln_shift"] is None else np.array(spec["ln_shift"]),
        )
        for spec in doc["layers"]
    ]
    return Mlp(layers=layers, seed=doc["seed"])


def save_checkpoint(model: Mlp, path: str | Path):
    """Write a JSON checkpoint that round-trips parameters bitwise."""
    Path(path).write_text(json.dumps(checkpoint_doc(model)), encoding="utf-8")


def load_checkpoint(path: str | Path) -> Mlp:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"not a model checkpoint: {path}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a model checkpoint: {path}")
    return model_from_doc(doc)
