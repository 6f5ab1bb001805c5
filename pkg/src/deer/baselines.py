"""MC-dropout and deep-ensemble baselines.

Both use the evidential network's body with a point head (one output per
attribute), are trained on averaged labels with the mini-batch CCC loss, and
produce per-item sample sets that are scored with KDE.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np

from .data import ArrayDataset
from .evidential import check_weights
from .net import Network, TrainConfig, backprop, fit, forward_raw, init_network

ENSEMBLE_SIZE = 10
MCDP_PASSES = 50
MCDP_DROPOUT = 0.4


def _ccc_and_grad(h: np.ndarray, r: np.ndarray):
    # h, r: (B,) -> (ccc, dccc/dh)
    b = len(h)
    mh, mr = h.mean(), r.mean()
    dh, dr = h - mh, r - mr
    cov = np.mean(dh * dr)
    denom = np.mean(dh * dh) + np.mean(dr * dr) + (mh - mr) ** 2
    if denom == 0.0:
        return 1.0, np.zeros_like(h)
    num = 2.0 * cov
    d_num = 2.0 * dr / b
    d_den = 2.0 * dh / b + 2.0 * (mh - mr) / b
    return num / denom, (d_num * denom - num * d_den) / denom**2


def ccc_loss(hyp: np.ndarray, ref: np.ndarray, epsilons: Sequence[float] | None = None):
    """Weighted ``sum_n eps_n (1 - CCC_n)`` over a mini-batch.

    ``hyp`` and ``ref`` have shape (B, N). Returns ``(loss, dloss/dhyp)``.
    """
    hyp = np.asarray(hyp, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if hyp.ndim == 1:
        hyp, ref = hyp[:, None], ref[:, None]
    if hyp.shape != ref.shape:
        raise ValueError("hyp and ref must have the same shape")
    if hyp.shape[0] < 2:
        raise ValueError("CCC loss needs a batch of at least 2 items")
    n = hyp.shape[1]
    eps = tuple(epsilons) if epsilons is not None else (1.0 / n,) * n
    check_weights(eps, n)
    loss = 0.0
    grad = np.zeros_like(hyp)
    for k in range(n):
        c, g = _ccc_and_grad(hyp[:, k], ref[:, k])
        loss += eps[k] * (1.0 - c)
        grad[:, k] = -eps[k] * g
    return loss, grad


def point_backward(net: Network, batch: ArrayDataset, epsilons=None, rng=None):
    out, cache = forward_raw(net, batch.x, rng)
    loss, d_out = ccc_loss(out, batch.label_means, epsilons)
    return loss, backprop(net, cache, d_out)


def train_point(net: Network, data: ArrayDataset, config: TrainConfig, val: ArrayDataset | None = None):
    """Train a point network in place with the CCC loss on averaged labels.

    A trailing mini-batch of one item is dropped (CCC is undefined for it).
    """
    if net.kind != "point":
        raise ValueError("train_point() expects a point network")

    def batch_grad(n, batch, rng):
        return point_backward(n, batch, config.epsilons, rng)

    val_fn = None
    if val is not None:
        val_fn = lambda n: ccc_loss(forward_raw(n, val.x)[0], val.label_means, config.epsilons)[0]  # noqa: E731
    trace = fit(net, data, config, batch_grad, val_fn, min_batch=2)
    return net, trace


def train_ensemble(
    k: int,
    data: ArrayDataset,
    config: TrainConfig,
    seeds: Sequence[int] | None = None,
    val: ArrayDataset | None = None,
):
    """Train ``k`` independently seeded point networks.

    Member ``i`` uses seed ``config.seed + i`` unless ``seeds`` is given.
    Returns ``(members, traces)``.
    """
    if k < 2:
        raise ValueError("an ensemble needs at least 2 members")
    seeds = list(seeds) if seeds is not None else [config.seed + i for i in range(k)]
    if len(seeds) != k:
        raise ValueError("need one seed per member")
    members, traces = [], []
    for s in seeds:
        cfg = dataclasses.replace(config, seed=s)
        net = init_network(data.x.shape[1], len(data.attributes), cfg.hidden, "point", cfg.dropout, s)
        _, trace = train_point(net, data, cfg, val)
        members.append(net)
        traces.append(trace)
    return members, traces


def ensemble_samples(members: Sequence[Network], x: np.ndarray) -> np.ndarray:
    """(k, B, N) eval-mode predictions of every member."""
    return np.stack([forward_raw(m, x)[0] for m in members])


def mc_dropout_samples(net: Network, x: np.ndarray, passes: int = MCDP_PASSES, seed: int = 0) -> np.ndarray:
    """(passes, B, N) train-mode predictions, each pass with fresh dropout masks."""
    if passes < 2:
        raise ValueError("MC dropout needs at least 2 passes")
    rng = np.random.default_rng(seed)
    return np.stack([forward_raw(net, x, rng)[0] for _ in range(passes)])


def mc_dropout_predict(net: Network, features, passes: int = MCDP_PASSES, seed: int = 0) -> list[np.ndarray]:
    """Per-attribute sample arrays (length ``passes``) for one item."""
    x = np.asarray(features, dtype=np.float64)[None, :]
    s = mc_dropout_samples(net, x, passes, seed)[:, 0, :]
    return [s[:, n].copy() for n in range(net.n_attributes)]
