"""Evaluation metrics: CCC, RMSE, NLL(avg)/NLL(all), KDE scoring and the
reject-option curve."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .evidential import LabelSet, NIGParams, nll_per_observation, predictive_logpdf, uncertainty

KDE_BANDWIDTH_FLOOR = 1e-3


def _pair(hyp, ref, min_len):
    h = np.asarray(hyp, dtype=np.float64)
    r = np.asarray(ref, dtype=np.float64)
    if h.ndim != 1 or h.shape != r.shape:
        raise ValueError(f"sequences must be 1-d and of equal length, got {h.shape} and {r.shape}")
    if len(h) < min_len:
        raise ValueError(f"need at least {min_len} values")
    return h, r


def ccc(hyp, ref) -> float:
    """Concordance correlation coefficient with population (1/T) moments.

    Written in covariance form, ``2 cov / (var_h + var_r + (mean_h - mean_r)^2)``,
    so a constant sequence gives 0 rather than NaN. Two identical constant
    sequences give 1.
    """
    h, r = _pair(hyp, ref, 2)
    mh, mr = h.mean(), r.mean()
    cov = np.mean((h - mh) * (r - mr))
    denom = np.mean((h - mh) ** 2) + np.mean((r - mr) ** 2) + (mh - mr) ** 2
    if denom == 0.0:
        return 1.0
    return float(2.0 * cov / denom)


def rmse(hyp, ref) -> float:
    h, r = _pair(hyp, ref, 1)
    return float(np.sqrt(np.mean((h - r) ** 2)))


def _aligned(predictions, labels):
    if len(predictions) != len(labels):
        raise ValueError(f"{len(predictions)} predictions for {len(labels)} items")
    if not predictions:
        raise ValueError("no items")


def nll_avg(predictions: Sequence[NIGParams], labels: Sequence[LabelSet]) -> float:
    """Mean over items of -ln q(y_bar)."""
    _aligned(predictions, labels)
    return math.fsum(-predictive_logpdf(ls.mean, om) for om, ls in zip(predictions, labels)) / len(labels)


def nll_all(predictions: Sequence[NIGParams], labels: Sequence[LabelSet]) -> float:
    """Mean over items of -(1/M) sum_m ln q(y_m); each item counts once."""
    _aligned(predictions, labels)
    return math.fsum(nll_per_observation(ls, om) for om, ls in zip(predictions, labels)) / len(labels)


# --- kernel density scoring -------------------------------------------------


def silverman_bandwidth(samples) -> float:
    x = np.asarray(samples, dtype=np.float64)
    sd = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return max(0.9 * spread * len(x) ** -0.2, KDE_BANDWIDTH_FLOOR)


def kde_logpdf(query, samples, bandwidth="silverman"):
    """Log density of a Gaussian-kernel KDE built on ``samples``."""
    s = np.asarray(samples, dtype=np.float64)
    if s.ndim != 1 or len(s) < 2:
        raise ValueError("KDE needs at least 2 samples")
    h = silverman_bandwidth(s) if bandwidth == "silverman" else max(float(bandwidth), KDE_BANDWIDTH_FLOOR)
    q = np.atleast_1d(np.asarray(query, dtype=np.float64))
    z = (q[:, None] - s[None, :]) / h
    log_k = -0.5 * z * z - 0.5 * math.log(2.0 * math.pi) - math.log(h)
    top = log_k.max(axis=1, keepdims=True)
    out = top[:, 0] + np.log(np.exp(log_k - top).mean(axis=1))
    return float(out[0]) if np.ndim(query) == 0 else out


def nll_kde(samples: Sequence, labels: Sequence[LabelSet], bandwidth="silverman") -> tuple[float, float]:
    """(NLL(avg), NLL(all)) of per-item sample sets scored by KDE."""
    if len(samples) != len(labels) or not labels:
        raise ValueError("need one sample set per item")
    avg, alls = [], []
    for s, ls in zip(samples, labels):
        avg.append(-kde_logpdf(ls.mean, s, bandwidth))
        alls.append(-float(np.mean(kde_logpdf(np.array(ls.values), s, bandwidth))))
    return math.fsum(avg) / len(avg), math.fsum(alls) / len(alls)


# --- summaries --------------------------------------------------------------


@dataclass
class AttributeScores:
    ccc: float
    rmse: float
    nll_avg: float
    nll_all: float
    extra: dict[str, float] = field(default_factory=dict)


@dataclass
class EvalSummary:
    scores: dict[str, AttributeScores]

    def to_table(self) -> str:
        extra_cols = sorted({k for s in self.scores.values() for k in s.extra})
        cols = ["attribute", "ccc", "rmse", "nll_avg", "nll_all", *extra_cols]
        rows = ["\t".join(cols)]
        for name, s in self.scores.items():
            vals = [s.ccc, s.rmse, s.nll_avg, s.nll_all, *(s.extra.get(k, math.nan) for k in extra_cols)]
            rows.append("\t".join([name, *(repr(float(v)) for v in vals)]))
        return "\n".join(rows) + "\n"


@dataclass
class RejectCurve:
    # (rejection_fraction, coverage, rmse_on_retained), fractions increasing
    points: list[tuple[float, float, float]]

    def to_table(self, attribute: str | None = None) -> str:
        head = ["fraction", "coverage", "rmse"]
        lines = []
        for f, c, e in self.points:
            row = [repr(f), repr(c), repr(e)]
            lines.append("\t".join(([attribute] if attribute else []) + row))
        header = "\t".join((["attribute"] if attribute else []) + head)
        return header + "\n" + "\n".join(lines) + "\n"


def retained_count(n: int, fraction: float) -> int:
    """ceil((1 - f) n), robust to representation error in f * n."""
    return n - int(math.floor(fraction * n + 1e-9))


def reject_curve_arrays(
    means: Sequence[float],
    targets: Sequence[float],
    totals: Sequence[float],
    ids: Sequence[str],
    fractions: Sequence[float],
) -> RejectCurve:
    """RMSE of ``means`` vs ``targets`` after discarding the items with the
    largest predicted total variance.

    Ties in ``totals`` are broken by ascending id (the smaller id is rejected
    first).
    """
    n = len(means)
    if not (len(targets) == len(totals) == len(ids) == n) or n == 0:
        raise ValueError("means, targets, totals and ids must be nonempty and aligned")
    fr = [float(f) for f in fractions]
    if not fr or any(not 0.0 <= f < 1.0 for f in fr) or any(b <= a for a, b in zip(fr, fr[1:])):
        raise ValueError("fractions must be strictly increasing within [0, 1)")
    order = sorted(range(n), key=lambda i: (-float(totals[i]), ids[i]))
    m = np.asarray(means, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    points = []
    for f in fr:
        keep = retained_count(n, f)
        if keep == 0:
            raise ValueError(f"fraction {f} leaves no items")
        idx = np.array(order[n - keep :])
        points.append((f, 1.0 - f, rmse(m[idx], t[idx])))
    return RejectCurve(points)


def reject_curve(predictions: Sequence[NIGParams], labels: Sequence[LabelSet], ids, fractions) -> RejectCurve:
    _aligned(predictions, labels)
    reports = [uncertainty(om) for om in predictions]
    return reject_curve_arrays(
        [r.mean for r in reports], [ls.mean for ls in labels], [r.total for r in reports], ids, fractions
    )
