"""Feed-forward regressor with an evidential head, trained by hand-written
backprop and Adam.

Parameters are stored as plain numpy arrays. Weight matrices have shape
(fan_in, fan_out) and act on row-vector batches, ``h @ W + b``. The head of an
evidential network emits 4 values per attribute in the order
(gamma, upsilon, alpha, beta); a point network (used by the baselines) emits
one value per attribute.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import ArrayDataset
from .evidential import LossVariant, NIGParams, batch_attribute_loss, check_weights
from .special import sigmoid, softplus

# Lower bound on softplus(.) for upsilon, alpha - 1 and beta. Keeps the head
# valid in float64 for raw outputs far below zero.
EVIDENCE_FLOOR = 1e-6

_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(z):
    return 0.5 * z * (1.0 + np.tanh(_GELU_C * (z + 0.044715 * z**3)))


def gelu_grad(z):
    u = _GELU_C * (z + 0.044715 * z**3)
    t = np.tanh(u)
    return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * z * z)


@dataclass
class Network:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    n_attributes: int
    kind: str = "evidential"  # or "point"
    dropout_rate: float = 0.3
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("evidential", "point"):
            raise ValueError(f"unknown network kind {self.kind!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix")
        for (w0, b0), w1 in zip(zip(self.weights, self.biases), self.weights[1:]):
            if w0.shape[1] != w1.shape[0] or b0.shape != (w0.shape[1],):
                raise ValueError("layer dimensions do not chain")
        if self.weights[-1].shape[1] != self.head_width or self.biases[-1].shape != (self.head_width,):
            raise ValueError(f"head must have width {self.head_width}")

    @property
    def head_width(self) -> int:
        return 4 * self.n_attributes if self.kind == "evidential" else self.n_attributes

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Network":
        return copy.deepcopy(self)


def init_network(
    d: int,
    n_attributes: int,
    hidden: Sequence[int] = (128, 128),
    kind: str = "evidential",
    dropout_rate: float = 0.3,
    seed: int = 0,
) -> Network:
    rng = np.random.default_rng(seed)
    head = 4 * n_attributes if kind == "evidential" else n_attributes
    sizes = [d, *hidden, head]
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        scale = math.sqrt(2.0 / fan_in) if i < len(hidden) else 0.1 / math.sqrt(fan_in)
        weights.append(rng.normal(scale=scale, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Network(weights, biases, n_attributes, kind, dropout_rate, seed)


def forward_raw(net: Network, x: np.ndarray, rng: np.random.Generator | None = None):
    """Raw head outputs for a (B, d) batch.

    Dropout is applied to hidden activations only when ``rng`` is given
    (train mode); it uses inverted scaling, so eval mode needs no rescale.
    Returns ``(out, cache)``; the cache feeds :func:`backprop`.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_width:
        raise ValueError(f"expected features of width {net.input_width}, got shape {x.shape}")
    h = x
    cache = []
    keep = 1.0 - net.dropout_rate
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = h @ w + b
        a = gelu(z)
        drop = None
        if rng is not None and net.dropout_rate > 0:
            drop = (rng.random(a.shape) < keep) / keep
            a = a * drop
        cache.append((h, z, drop))
        h = a
    out = h @ net.weights[-1] + net.biases[-1]
    cache.append(h)
    return out, cache


def backprop(net: Network, cache, d_out: np.ndarray) -> list[np.ndarray]:
    """Gradients of a scalar loss w.r.t. ``net.params()`` given dL/d(out)."""
    h_last = cache[-1]
    grads = [h_last.T @ d_out, d_out.sum(axis=0)]
    dh = d_out @ net.weights[-1].T
    for layer in range(len(net.weights) - 2, -1, -1):
        h_in, z, drop = cache[layer]
        if drop is not None:
            dh = dh * drop
        dz = dh * gelu_grad(z)
        grads = [h_in.T @ dz, dz.sum(axis=0)] + grads
        if layer > 0:
            dh = dz @ net.weights[layer].T
    return grads


def evidential_head(raw: np.ndarray):
    """Map raw (B, 4N) outputs to (gamma, upsilon, alpha, beta), each (B, N)."""
    r = raw.reshape(raw.shape[0], -1, 4)
    gamma = r[..., 0]
    upsilon = np.maximum(softplus(r[..., 1]), EVIDENCE_FLOOR)
    alpha = 1.0 + np.maximum(softplus(r[..., 2]), EVIDENCE_FLOOR)
    beta = np.maximum(softplus(r[..., 3]), EVIDENCE_FLOOR)
    return gamma, upsilon, alpha, beta


def _head_jacobian(raw):
    # d(head value)/d(raw) for the three softplus units; zero where floored
    r = raw.reshape(raw.shape[0], -1, 4)
    out = []
    for k in (1, 2, 3):
        sp = softplus(r[..., k])
        out.append(np.where(sp > EVIDENCE_FLOOR, sigmoid(r[..., k]), 0.0))
    return out


def forward(net: Network, features, train_mode: bool = False, rng: np.random.Generator | None = None):
    """Predict one item.

    Returns a list of :class:`NIGParams` for an evidential network, or a
    length-N array of point predictions for a point network. In train mode a
    generator is required for the dropout masks; if none is given, one seeded
    with ``net.rng_seed`` is used.
    """
    x = np.asarray(features, dtype=np.float64)[None, :]
    if train_mode and rng is None:
        rng = np.random.default_rng(net.rng_seed)
    raw, _ = forward_raw(net, x, rng if train_mode else None)
    if net.kind == "point":
        return raw[0]
    g, v, a, b = evidential_head(raw)
    return [NIGParams(float(g[0, n]), float(v[0, n]), float(a[0, n]), float(b[0, n])) for n in range(net.n_attributes)]


def predict(net: Network, x: np.ndarray):
    """Eval-mode batch prediction: (gamma, upsilon, alpha, beta) arrays or point outputs."""
    raw, _ = forward_raw(net, x)
    return evidential_head(raw) if net.kind == "evidential" else raw


def _resolve(values, n, default):
    return tuple(float(v) for v in values) if values is not None else (default,) * n


def backward(
    net: Network,
    batch: ArrayDataset,
    epsilons: Sequence[float] | None = None,
    lambdas: Sequence[float] | None = None,
    variant: LossVariant = LossVariant(),
    rng: np.random.Generator | None = None,
):
    """Batch-mean multi-attribute evidential loss and its exact gradients.

    Returns ``(loss, grads)`` with ``grads`` aligned to ``net.params()``.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    n_attr = net.n_attributes
    if len(batch.attributes) != n_attr:
        raise ValueError("batch attributes do not match the network head")
    eps = _resolve(epsilons, n_attr, 1.0 / n_attr)
    lams = _resolve(lambdas, n_attr, 0.1)
    check_weights(eps, n_attr)
    if len(lams) != n_attr or any(l < 0 for l in lams):
        raise ValueError("need one nonnegative lambda per attribute")

    raw, cache = forward_raw(net, batch.x, rng)
    heads = evidential_head(raw)
    jac = _head_jacobian(raw)
    bsz = len(batch)
    total = np.zeros(bsz)
    d_raw = np.zeros((bsz, n_attr, 4))
    for n in range(n_attr):
        loss, g = batch_attribute_loss(
            batch.labels[n], batch.mask[n], *(h[:, n] for h in heads), lams[n], variant
        )
        total += eps[n] * loss
        d_raw[:, n, 0] = eps[n] * g[0]
        for k in range(3):
            d_raw[:, n, k + 1] = eps[n] * g[k + 1] * jac[k][:, n]
    grads = backprop(net, cache, d_raw.reshape(bsz, -1) / bsz)
    return float(total.mean()), grads


def evidential_loss(net, data: ArrayDataset, epsilons=None, lambdas=None, variant=LossVariant()) -> float:
    """Eval-mode loss (no dropout) over a whole dataset."""
    return backward(net, data, epsilons, lambdas, variant)[0]


# --- optimisation -----------------------------------------------------------


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_init(params, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps_hat=1e-8) -> AdamState:
    return AdamState(
        learning_rate, beta1, beta2, eps_hat, 0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params]
    )


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter, gradient and moment lists differ in length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps_hat)
    return params


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    hidden: tuple[int, ...] = (128, 128)
    dropout: float = 0.3
    epsilons: tuple[float, ...] | None = None  # default 1/N each
    lambdas: tuple[float, ...] | None = None  # default 0.1 each
    avg_nll: bool = False
    use_reg_sigma: bool = True
    detach_phi: bool = False
    patience: int | None = None  # early stopping on validation loss

    @property
    def variant(self) -> LossVariant:
        return LossVariant(self.avg_nll, self.use_reg_sigma, self.detach_phi)


def fit(
    net: Network,
    data: ArrayDataset,
    config: TrainConfig,
    batch_grad: Callable,
    val_loss: Callable | None = None,
    min_batch: int = 1,
):
    """Shuffled mini-batch Adam loop shared by all model kinds.

    ``batch_grad(net, batch, rng)`` returns ``(loss, grads)``;
    ``val_loss(net)`` returns a float. Batches smaller than ``min_batch``
    are skipped. Returns the per-epoch trace; with ``config.patience`` set,
    the parameters of the best validation epoch are restored at the end.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    if config.epochs < 1 or config.batch_size < 1:
        raise ValueError("epochs and batch_size must be positive")
    rng = np.random.default_rng(config.seed)
    params = net.params()
    state = adam_init(params, config.learning_rate)
    trace = []
    best, best_params, since_best = math.inf, None, 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(data))
        seen, acc = 0, 0.0
        for start in range(0, len(data), config.batch_size):
            idx = order[start : start + config.batch_size]
            if len(idx) < min_batch:
                continue
            loss, grads = batch_grad(net, data.take(idx), rng)
            adam_step(state, params, grads)
            acc += loss * len(idx)
            seen += len(idx)
        row = {"epoch": epoch, "train_loss": acc / max(seen, 1)}
        if val_loss is not None:
            row["val_loss"] = float(val_loss(net))
        trace.append(row)
        if config.patience is not None and val_loss is not None:
            if row["val_loss"] < best:
                best, since_best = row["val_loss"], 0
                best_params = [p.copy() for p in params]
            else:
                since_best += 1
                if since_best >= config.patience:
                    break
    if best_params is not None:
        for p, q in zip(params, best_params):
            p[...] = q
    return trace


def train(net: Network, data: ArrayDataset, config: TrainConfig, val: ArrayDataset | None = None):
    """Train an evidential network in place; returns ``(net, trace)``."""
    if net.kind != "evidential":
        raise ValueError("train() expects an evidential network")
    variant = config.variant

    def batch_grad(n, batch, rng):
        return backward(n, batch, config.epsilons, config.lambdas, variant, rng)

    val_fn = None
    if val is not None:
        val_fn = lambda n: evidential_loss(n, val, config.epsilons, config.lambdas, variant)  # noqa: E731
    trace = fit(net, data, config, batch_grad, val_fn)
    return net, trace


# --- gradient checking ------------------------------------------------------


def numeric_gradient(loss_fn: Callable[[], float], params: list[np.ndarray], step: float = 1e-5):
    """Central finite differences of ``loss_fn`` w.r.t. every entry of ``params``."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        out.append(g)
    return out


def relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all entries."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def gradient_check(
    net: Network,
    batch: ArrayDataset,
    epsilons=None,
    lambdas=None,
    variant: LossVariant = LossVariant(),
    step: float = 1e-5,
) -> float:
    """Worst relative error between :func:`backward` and finite differences
    (eval mode, so no dropout)."""
    _, analytic = backward(net, batch, epsilons, lambdas, variant)
    numeric = numeric_gradient(lambda: backward(net, batch, epsilons, lambdas, variant)[0], net.params(), step)
    return relative_error(analytic, numeric)
