"""Glue between training, prediction and evaluation, shared by the CLI and
the experiment scripts."""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import baselines
from .data import ArrayDataset, SyntheticTruth
from .evidential import NIGParams
from .metrics import AttributeScores, EvalSummary, ccc, kde_logpdf, nll_all, nll_avg, rmse
from .net import Network, TrainConfig, init_network, predict, train

PREDICTION_COLUMNS = (
    "id",
    "attribute",
    "n_labels",
    "label_mean",
    "label_var",
    "mean",
    "aleatoric",
    "epistemic",
    "total",
)


def train_model(model_kind: str, data: ArrayDataset, config: TrainConfig, val=None, members: int = 10):
    """Build and train one of the three systems.

    Returns ``(networks, trace)``; for an ensemble the trace holds one row per
    member and epoch with a ``member`` column.
    """
    d, n_attr = data.x.shape[1], len(data.attributes)
    if model_kind == "deer":
        net = init_network(d, n_attr, config.hidden, "evidential", config.dropout, config.seed)
        _, trace = train(net, data, config, val)
        return [net], trace
    if model_kind == "mcdp":
        net = init_network(d, n_attr, config.hidden, "point", config.dropout, config.seed)
        _, trace = baselines.train_point(net, data, config, val)
        return [net], trace
    if model_kind == "ensemble":
        nets, traces = baselines.train_ensemble(members, data, config, val=val)
        rows = [{"member": i, **row} for i, tr in enumerate(traces) for row in tr]
        return nets, rows
    raise ValueError(f"unknown model kind {model_kind!r}")


def default_config(model_kind: str, **overrides) -> TrainConfig:
    cfg = TrainConfig(**overrides)
    if model_kind == "mcdp" and "dropout" not in overrides:
        cfg = dataclasses.replace(cfg, dropout=baselines.MCDP_DROPOUT)
    return cfg


def nig_predictions(net: Network, data: ArrayDataset) -> list[list[NIGParams]]:
    """Per attribute, the list of per-item NIG predictions."""
    g, v, a, b = predict(net, data.x)
    return [
        [NIGParams(float(g[i, n]), float(v[i, n]), float(a[i, n]), float(b[i, n])) for i in range(len(data))]
        for n in range(net.n_attributes)
    ]


def sample_predictions(model_kind: str, members, data: ArrayDataset, passes: int = 50, seed: int = 0) -> np.ndarray:
    """(S, B, N) prediction samples of a baseline system."""
    if model_kind == "ensemble":
        return baselines.ensemble_samples(members, data.x)
    if model_kind == "mcdp":
        return baselines.mc_dropout_samples(members[0], data.x, passes, seed)
    raise ValueError(f"{model_kind!r} is not a sampling system")


def evaluate(
    model_kind: str,
    members,
    data: ArrayDataset,
    truth: SyntheticTruth | None = None,
    passes: int = 50,
    seed: int = 0,
    bandwidth="silverman",
):
    """Score a trained system on ``data``.

    Returns ``(summary, rows)`` where ``rows`` are per-item, per-attribute
    prediction records keyed by :data:`PREDICTION_COLUMNS` (plus ``true_mean``
    and ``true_var`` when ``truth`` is given).
    """
    n_attr = len(data.attributes)
    ybar = data.label_means
    yvar = data.label_variances
    counts = data.mask.sum(axis=2).T
    if model_kind == "deer":
        preds = nig_predictions(members[0], data)
        g, v, a, b = predict(members[0], data.x)
        mean = g
        aleatoric = b / (a - 1.0)
        epistemic = b / (v * (a - 1.0))
        total = aleatoric + epistemic
    else:
        samples = sample_predictions(model_kind, members, data, passes, seed)
        mean = samples.mean(axis=0)
        total = samples.var(axis=0, ddof=1)
        aleatoric = np.full_like(mean, math.nan)
        epistemic = np.full_like(mean, math.nan)

    truth_idx = None
    if truth is not None:
        pos = {item_id: i for i, item_id in enumerate(truth.ids)}
        missing = [i for i in data.ids if i not in pos]
        if missing:
            raise ValueError(f"truth file lacks {len(missing)} items, e.g. {missing[0]!r}")
        col = {name: k for k, name in enumerate(truth.attributes)}
        truth_idx = np.array([pos[i] for i in data.ids])
        t_mean = truth.true_mean[truth_idx][:, [col[a] for a in data.attributes]]
        t_var = truth.true_var[truth_idx][:, [col[a] for a in data.attributes]]

    scores = {}
    for n, name in enumerate(data.attributes):
        labels = data.label_sets[n]
        if model_kind == "deer":
            n_avg, n_all = nll_avg(preds[n], labels), nll_all(preds[n], labels)
        else:
            n_avg, n_all = _kde_nll(samples[:, :, n], labels, bandwidth)
        s = AttributeScores(ccc(mean[:, n], ybar[:, n]), rmse(mean[:, n], ybar[:, n]), n_avg, n_all)
        if truth_idx is not None:
            s.extra["rmse_true_mean"] = rmse(mean[:, n], t_mean[:, n])
            s.extra["noise_floor"] = float(np.sqrt(np.mean(t_var[:, n] / counts[:, n])))
            if model_kind == "deer":
                s.extra["aleatoric_truth_corr"] = float(np.corrcoef(aleatoric[:, n], t_var[:, n])[0, 1])
        if model_kind == "deer":
            s.extra["aleatoric_gap"] = float(np.mean(np.abs(aleatoric[:, n] - yvar[:, n])))
        scores[name] = s

    rows = []
    for i, item_id in enumerate(data.ids):
        for n, name in enumerate(data.attributes):
            row = {
                "id": item_id,
                "attribute": name,
                "n_labels": int(counts[i, n]),
                "label_mean": float(ybar[i, n]),
                "label_var": float(yvar[i, n]),
                "mean": float(mean[i, n]),
                "aleatoric": float(aleatoric[i, n]),
                "epistemic": float(epistemic[i, n]),
                "total": float(total[i, n]),
            }
            if truth_idx is not None:
                row["true_mean"] = float(t_mean[i, n])
                row["true_var"] = float(t_var[i, n])
            rows.append(row)
    return EvalSummary(scores), rows


def _kde_nll(samples: np.ndarray, labels, bandwidth):
    # samples: (S, B) for one attribute
    avg, alls = [], []
    for i, ls in enumerate(labels):
        s = samples[:, i]
        avg.append(-kde_logpdf(ls.mean, s, bandwidth))
        alls.append(-float(np.mean(kde_logpdf(np.array(ls.values), s, bandwidth))))
    return math.fsum(avg) / len(avg), math.fsum(alls) / len(alls)


def rows_to_table(rows) -> str:
    cols = list(PREDICTION_COLUMNS)
    if rows and "true_mean" in rows[0]:
        cols += ["true_mean", "true_var"]
    out = ["\t".join(cols)]
    for r in rows:
        out.append("\t".join(str(r[c]) if c in ("id", "attribute", "n_labels") else repr(r[c]) for c in cols))
    return "\n".join(out) + "\n"


def read_prediction_table(path):
    """Parse a per-item prediction table written by :func:`rows_to_table`."""
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        missing = {"id", "attribute", "label_mean", "mean", "total"} - set(header)
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            vals = line.rstrip("\n").split("\t")
            if len(vals) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(vals)}")
            row = dict(zip(header, vals))
            for k in header:
                if k not in ("id", "attribute"):
                    row[k] = float(row[k])
            rows.append(row)
    if not rows:
        raise ValueError(f"{path}: no predictions")
    return rows
