"""Miniature fully connected classifier with analytic backprop and plain SGD.

The network is ``input -> (affine -> tanh) * k -> affine -> head`` where the
head is either a sigmoid (binary, one output unit) or a softmax (multiclass).
One hidden activation is designated as the feature map that the difficulty
assessor disturbs multiplicatively.

All routines accept either a single sample (1-D ``x``) or a batch (2-D ``x``
with one row per sample). Everything runs in float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

SIGMOID = "sigmoid"
SOFTMAX = "softmax"
HEADS = (SIGMOID, SOFTMAX)

# probabilities are clipped to [EPS, 1 - EPS] before any logarithm
EPS = 1e-12


class ShapeError(ValueError):
    pass


@dataclass
class MicroModel:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head: str = SOFTMAX
    perturbation_layer: int = -1

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def num_hidden(self) -> int:
        return len(self.weights) - 1

    @property
    def num_classes(self) -> int:
        return 2 if self.head == SIGMOID else self.layer_dims[-1]

    @property
    def feature_dim(self) -> int:
        if self.perturbation_layer < 0:
            return 0
        return self.layer_dims[self.perturbation_layer + 1]

    def num_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MicroModel":
        return MicroModel(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.head,
            self.perturbation_layer,
        )

    def validate(self) -> None:
        if len(self.layer_dims) < 2:
            raise ShapeError("need at least an input and an output dimension")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if self.head == SIGMOID and self.layer_dims[-1] != 1:
            raise ShapeError("sigmoid head needs a single output unit")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[k + 1], self.layer_dims[k]):
                raise ShapeError(f"layer {k}: weight shape {w.shape}")
            if b.shape != (self.layer_dims[k + 1],):
                raise ShapeError(f"layer {k}: bias shape {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k}: non-finite parameters")
        _check_perturbation_layer(self.layer_dims, self.perturbation_layer)


@dataclass
class ForwardTrace:
    """Intermediates of one forward pass.

    ``pre[k]`` / ``act[k]`` are the pre-activation and activation of layer k
    (``act[-1]`` is the head output). ``inputs`` is the batch as fed in, and
    ``feature`` the (possibly disturbed) feature map that downstream layers saw.
    """

    inputs: np.ndarray
    pre: list[np.ndarray]
    act: list[np.ndarray]
    probs: np.ndarray
    feature: np.ndarray
    disturbance: Optional[np.ndarray] = None
    single: bool = False
    layer_dims: tuple[int, ...] = field(default=())


@dataclass(frozen=True)
class PerturbationSpec:
    G: int = 8
    gamma: float = 0.3
    rng_seed: int = 0

    def __post_init__(self):
        if self.G < 1:
            raise ValueError("G must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")


@dataclass(frozen=True)
class OptimizerCfg:
    eta: float = 0.1
    batch_size: int = 2
    pivot_epoch: float = float("inf")
    total_epochs: int = 30

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2")
        if self.total_epochs < 0:
            raise ValueError("total_epochs must be >= 0")
        if self.pivot_epoch < 0:
            raise ValueError("pivot_epoch must be >= 0")
        if np.isfinite(self.pivot_epoch) and self.pivot_epoch > self.total_epochs:
            raise ValueError("pivot_epoch exceeds total_epochs")


def _check_perturbation_layer(dims, layer):
    # hidden activations are 0 .. len(dims) - 3; -1 marks "no feature map"
    if layer == -1 and len(dims) == 2:
        return
    if not 0 <= layer <= len(dims) - 3:
        raise ShapeError(
            f"perturbation layer {layer} is not a hidden activation of dims {list(dims)}"
        )


def init_model(layer_dims, head=SOFTMAX, perturbation_layer=None, seed=0) -> MicroModel:
    """Fan-in scaled uniform init, U[-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases.

    ``perturbation_layer=None`` picks the first hidden activation. A model
    without hidden layers has no feature map to disturb.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ShapeError("layer_dims needs at least two entries")
    if any(d <= 0 for d in dims):
        raise ShapeError("layer dims must be positive")
    if perturbation_layer is None:
        perturbation_layer = 0 if len(dims) > 2 else -1
    _check_perturbation_layer(dims, perturbation_layer)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    model = MicroModel(dims, weights, biases, head, perturbation_layer)
    if head not in HEADS:
        raise ValueError(f"unknown head {head!r}")
    if head == SIGMOID and dims[-1] != 1:
        raise ShapeError("sigmoid head needs a single output unit")
    return model


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(model: MicroModel, x, disturbance=None) -> ForwardTrace:
    """Run the network; if ``disturbance`` is given the feature map f becomes f * (1 + t).

    ``disturbance`` has the feature-map shape (or one row per sample).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.layer_dims[0]:
        raise ShapeError(f"input shape {x.shape} does not match dim {model.layer_dims[0]}")
    if disturbance is not None:
        disturbance = np.asarray(disturbance, dtype=np.float64)
        if model.perturbation_layer < 0:
            raise ShapeError("model has no hidden feature map to disturb")
        if disturbance.shape[-1] != model.feature_dim or disturbance.ndim > 2:
            raise ShapeError(f"disturbance shape {disturbance.shape} vs feature dim {model.feature_dim}")
        if disturbance.ndim == 2 and disturbance.shape[0] != X.shape[0]:
            raise ShapeError("one disturbance row per sample required")

    pre, act = [], []
    h = X
    feature = X
    last = model.num_layers - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        pre.append(z)
        if k < last:
            a = np.tanh(z)
            if k == model.perturbation_layer:
                if disturbance is not None:
                    a = a * (1.0 + disturbance)
                feature = a
            act.append(a)
            h = a
        else:
            probs = sigmoid(z[:, 0]) if model.head == SIGMOID else softmax(z)
            act.append(probs)
    return ForwardTrace(
        inputs=X,
        pre=pre,
        act=act,
        probs=probs[0] if single else probs,
        feature=feature[0] if single else feature,
        disturbance=disturbance,
        single=single,
        layer_dims=tuple(model.layer_dims),
    )


def predict_proba(model: MicroModel, X, disturbance=None) -> np.ndarray:
    """Class-probability matrix (N, C); the sigmoid head is expanded to [1-p, p]."""
    p = forward(model, np.atleast_2d(X), disturbance).probs
    if model.head == SIGMOID:
        return np.stack([1.0 - p, p], axis=-1)
    return p


def perturb_features(f, spec: PerturbationSpec, g: int) -> np.ndarray:
    """Return f * (1 + t) with t ~ U[-gamma, gamma] i.i.d. per entry, fixed by (seed, g)."""
    f = np.asarray(f, dtype=np.float64)
    return f * (1.0 + draw_disturbance(f.shape, spec, g))


def draw_disturbance(shape, spec: PerturbationSpec, g: int) -> np.ndarray:
    if spec.gamma == 0:
        return np.zeros(shape)
    rng = np.random.default_rng([spec.rng_seed & 0xFFFFFFFFFFFFFFFF, int(g)])
    return rng.uniform(-spec.gamma, spec.gamma, size=shape)


def ce_loss(probs, y, eps: float = EPS):
    """Cross-entropy per sample, -log of the probability given to the true label.

    If ``probs`` has the same rank as ``y`` it is read as P(y=1) of a sigmoid
    head and the binary form -y log p - (1-y) log(1-p) is used; otherwise the
    last axis of ``probs`` is a class simplex.
    """
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(y)
    if probs.ndim == y.ndim:
        if np.any((y != 0) & (y != 1)):
            raise ValueError("binary labels must be 0 or 1")
        p = np.clip(probs, eps, 1.0 - eps)
        out = -(y * np.log(p) + (1 - y) * np.log1p(-p))
        return float(out) if out.ndim == 0 else out
    if probs.ndim != y.ndim + 1:
        raise ShapeError(f"probs shape {probs.shape} incompatible with labels {y.shape}")
    C = probs.shape[-1]
    if np.any(y < 0) or np.any(y >= C):
        raise ValueError(f"label out of range for {C} classes")
    if probs.ndim == 1:
        return float(-np.log(np.clip(probs[int(y)], eps, 1.0)))
    picked = probs[np.arange(probs.shape[0]), y.astype(np.int64)]
    return -np.log(np.clip(picked, eps, 1.0))


def sample_losses(model: MicroModel, X, y) -> np.ndarray:
    """Per-sample undisturbed CE losses for a batch."""
    probs = forward(model, np.atleast_2d(X)).probs
    return np.atleast_1d(ce_loss(probs, np.atleast_1d(y)))


def output_error(trace: ForwardTrace, y, num_classes: int) -> np.ndarray:
    """dl/dz at the head: y_hat - y (one-hot for softmax)."""
    y = np.atleast_1d(np.asarray(y)).astype(np.int64)
    probs = trace.act[-1]
    if probs.ndim == 1:  # sigmoid
        if np.any((y != 0) & (y != 1)):
            raise ValueError("binary labels must be 0 or 1")
        return (probs - y)[:, None]
    if np.any(y < 0) or np.any(y >= num_classes):
        raise ValueError("label out of range")
    delta = probs.copy()
    delta[np.arange(len(y)), y] -= 1.0
    return delta


def backward(trace: ForwardTrace, y, model: MicroModel, sample_weights=None):
    """Gradient of the (weighted) mean CE loss over the traced batch.

    Returns a list of ``(dW, db)`` per layer. For a single traced sample this is
    simply that sample's gradient. ``sample_weights`` multiply each sample's
    loss before averaging over the batch size.
    """
    if trace.layer_dims != tuple(model.layer_dims):
        raise ShapeError("trace was produced by a model with different dims")
    n = trace.inputs.shape[0]
    delta = output_error(trace, y, model.num_classes)
    if sample_weights is not None:
        delta = delta * np.asarray(sample_weights, dtype=np.float64).reshape(n, 1)
    delta = delta / n
    grads = [None] * model.num_layers
    for k in range(model.num_layers - 1, -1, -1):
        below = trace.inputs if k == 0 else trace.act[k - 1]
        grads[k] = (delta.T @ below, delta.sum(axis=0))
        if k == 0:
            break
        upstream = delta @ model.weights[k]
        # act[k-1] may carry the disturbance factor (1 + t); undo it for tanh'
        a = trace.act[k - 1]
        scale = 1.0
        if k - 1 == model.perturbation_layer and trace.disturbance is not None:
            scale = 1.0 + trace.disturbance
            t = np.tanh(trace.pre[k - 1])
        else:
            t = a
        delta = upstream * scale * (1.0 - t * t)
    return grads


def sgd_step(model: MicroModel, grads, eta: float) -> MicroModel:
    """Return a new model with every parameter moved by -eta * gradient."""
    if len(grads) != model.num_layers:
        raise ShapeError("gradient set does not match model")
    new = model.copy()
    for k, (gw, gb) in enumerate(grads):
        gw = np.asarray(gw)
        gb = np.asarray(gb)
        if gw.shape != new.weights[k].shape or gb.shape != new.biases[k].shape:
            raise ShapeError(f"layer {k}: gradient shape mismatch")
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise FloatingPointError(f"layer {k}: non-finite gradient")
        new.weights[k] -= eta * gw
        new.biases[k] -= eta * gb
    return new


def batch_gradient(model: MicroModel, X, y, sample_weights=None):
    trace = forward(model, np.atleast_2d(X))
    return backward(trace, y, model, sample_weights)


def finite_diff_gradient(model: MicroModel, sample, h: float = 1e-6, loss_fn: Optional[Callable] = None):
    """Central-difference gradient of the loss of ``sample = (x, y)`` w.r.t. every parameter.

    ``loss_fn(model, x, y)`` overrides the default mean CE loss; the oracle is
    deliberately independent of :func:`backward`.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x, y = sample
    if loss_fn is None:
        def loss_fn(m, x_, y_):
            return float(np.mean(sample_losses(m, x_, y_)))

    probe = model.copy()
    grads = []
    for params in zip(probe.weights, probe.biases):
        layer = []
        for p in params:
            g = np.zeros_like(p)
            flat, gflat = p.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + h
                up = loss_fn(probe, x, y)
                flat[i] = keep - h
                down = loss_fn(probe, x, y)
                flat[i] = keep
                gflat[i] = (up - down) / (2.0 * h)
            layer.append(g)
        grads.append(tuple(layer))
    return grads


def flatten(grads) -> np.ndarray:
    return np.concatenate([np.concatenate([gw.ravel(), gb.ravel()]) for gw, gb in grads])


def predict(model: MicroModel, X) -> np.ndarray:
    """Argmax class; ties go to the smallest class index."""
    return np.argmax(predict_proba(model, X), axis=-1)
