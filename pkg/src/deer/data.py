"""Multi-annotator datasets: synthetic generation, JSONL storage and splits.

On disk a dataset is one JSON object per line::

    {"id": "item000001", "features": [0.1, -0.3], "labels": {"valence": [2.0, 3.0]}}

Each item may carry a different number of labels per attribute. Truth files
written by :func:`save_truth` use the same layout with ``true_mean`` and
``true_var`` maps instead of ``labels``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .evidential import LabelSet

DEFAULT_ATTRIBUTES = ("valence", "arousal", "dominance")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotatedItem:
    id: str
    features: tuple[float, ...]
    labels: dict[str, LabelSet]


@dataclass(frozen=True)
class SyntheticTruth:
    ids: tuple[str, ...]
    attributes: tuple[str, ...]
    true_mean: np.ndarray  # (n_items, n_attributes)
    true_var: np.ndarray


@dataclass
class GeneratorConfig:
    n_items: int = 2000
    d: int = 8
    attributes: tuple[str, ...] = DEFAULT_ATTRIBUTES
    m_range: tuple[int, int] = (3, 7)
    seed: int = 0
    # sigma*^2(x) = s0 + s1 * sigmoid(w . x)
    s0: float = 0.1
    s1: float = 1.0
    mean_scale: float = 1.0

    def validate(self):
        if self.n_items < 1:
            raise DataError("n_items must be >= 1")
        if self.d < 1:
            raise DataError("d must be >= 1")
        if not self.attributes or len(set(self.attributes)) != len(self.attributes):
            raise DataError("attribute names must be nonempty and unique")
        lo, hi = self.m_range
        if not (1 <= lo <= hi <= 20):
            raise DataError(f"m_range must satisfy 1 <= lo <= hi <= 20, got {self.m_range}")
        if not self.s0 > 0 or self.s1 < 0:
            raise DataError("need s0 > 0 and s1 >= 0")


def generate(config: GeneratorConfig) -> tuple[list[AnnotatedItem], SyntheticTruth]:
    """Draw items whose labels are i.i.d. Gaussian around a smooth mean.

    Per attribute, the true mean is a sum of per-dimension sinusoids with
    attribute-specific phases and the true variance is
    ``s0 + s1 * sigmoid(w . x)``. The number of labels per item is uniform on
    ``m_range`` and shared by all attributes of the item.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    n, d, n_attr = config.n_items, config.d, len(config.attributes)

    phases = rng.uniform(0.0, 2.0 * np.pi, size=(n_attr, d))
    freqs = rng.uniform(0.5 * np.pi, 1.5 * np.pi, size=(n_attr, d))
    w = rng.normal(size=(n_attr, d)) * math.sqrt(12.0 / d)
    amp = config.mean_scale * math.sqrt(2.0 / d)

    x = rng.uniform(-1.0, 1.0, size=(n, d))
    true_mean = amp * np.sin(x[:, None, :] * freqs[None] + phases[None]).sum(axis=2)
    logits = x @ w.T
    true_var = config.s0 + config.s1 / (1.0 + np.exp(-logits))
    counts = rng.integers(config.m_range[0], config.m_range[1] + 1, size=n)

    width = len(str(n - 1))
    items = []
    for i in range(n):
        noise = rng.normal(size=(n_attr, counts[i]))
        labels = {
            name: LabelSet(true_mean[i, k] + math.sqrt(true_var[i, k]) * noise[k])
            for k, name in enumerate(config.attributes)
        }
        items.append(AnnotatedItem(id=f"item{i:0{width}d}", features=tuple(x[i].tolist()), labels=labels))
    truth = SyntheticTruth(
        ids=tuple(it.id for it in items),
        attributes=tuple(config.attributes),
        true_mean=true_mean,
        true_var=true_var,
    )
    return items, truth


# --- file io ----------------------------------------------------------------


def save(items: Sequence[AnnotatedItem], path) -> None:
    with open(path, "w") as fh:
        for it in items:
            rec = {"id": it.id, "features": list(it.features), "labels": {k: list(v.values) for k, v in it.labels.items()}}
            fh.write(json.dumps(rec) + "\n")


def load(path, attributes: Sequence[str] | None = None) -> list[AnnotatedItem]:
    """Read a JSONL dataset, validating every record.

    If ``attributes`` is given, every record must use exactly those names;
    otherwise the first record fixes the set.
    """
    items: list[AnnotatedItem] = []
    width = None
    names = set(attributes) if attributes is not None else None
    seen_ids = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed record ({exc.msg})") from None
            item = _parse_record(rec, f"{path}:{lineno}")
            if width is None:
                width = len(item.features)
            elif len(item.features) != width:
                raise DataError(f"{path}:{lineno}: feature width {len(item.features)} != {width}")
            if names is None:
                names = set(item.labels)
            elif set(item.labels) != names:
                unknown = sorted(set(item.labels) - names)
                missing = sorted(names - set(item.labels))
                raise DataError(f"{path}:{lineno}: unknown attributes {unknown}, missing {missing}")
            if item.id in seen_ids:
                raise DataError(f"{path}:{lineno}: duplicate id {item.id!r}")
            seen_ids.add(item.id)
            items.append(item)
    if not items:
        raise DataError(f"{path}: no records")
    return items


def _parse_record(rec, where) -> AnnotatedItem:
    if not isinstance(rec, dict) or set(rec) != {"id", "features", "labels"}:
        raise DataError(f"{where}: record must have exactly the fields id, features, labels")
    if not isinstance(rec["id"], str) or not rec["id"]:
        raise DataError(f"{where}: id must be a nonempty string")
    feats = rec["features"]
    if not isinstance(feats, list) or not feats or not all(_is_number(v) for v in feats):
        raise DataError(f"{where}: features must be a nonempty array of numbers")
    labels = rec["labels"]
    if not isinstance(labels, dict) or not labels:
        raise DataError(f"{where}: labels must be a nonempty map")
    parsed = {}
    for name, vals in labels.items():
        if not isinstance(vals, list) or not all(_is_number(v) for v in vals):
            raise DataError(f"{where}: labels[{name!r}] must be an array of numbers")
        if not vals:
            raise DataError(f"{where}: labels[{name!r}] is empty")
        parsed[name] = LabelSet(vals)
    return AnnotatedItem(id=rec["id"], features=tuple(float(v) for v in feats), labels=parsed)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def save_truth(truth: SyntheticTruth, path) -> None:
    with open(path, "w") as fh:
        for i, item_id in enumerate(truth.ids):
            rec = {
                "id": item_id,
                "true_mean": {a: float(truth.true_mean[i, k]) for k, a in enumerate(truth.attributes)},
                "true_var": {a: float(truth.true_var[i, k]) for k, a in enumerate(truth.attributes)},
            }
            fh.write(json.dumps(rec) + "\n")


def load_truth(path) -> SyntheticTruth:
    ids, means, vars_ = [], [], []
    attributes = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if attributes is None:
                    attributes = tuple(rec["true_mean"])
                ids.append(rec["id"])
                means.append([rec["true_mean"][a] for a in attributes])
                vars_.append([rec["true_var"][a] for a in attributes])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed truth record ({exc})") from None
    if not ids:
        raise DataError(f"{path}: no records")
    return SyntheticTruth(tuple(ids), attributes, np.array(means), np.array(vars_))


def split(items: Sequence[AnnotatedItem], fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Shuffle and cut into (train, validation, test).

    Sizes are ``round(f * n)`` for the first two parts; the test part takes
    the remainder, so every part is within one item of its fraction.
    """
    fr = [float(f) for f in fractions]
    if len(fr) != 3 or any(f < 0 for f in fr) or abs(math.fsum(fr) - 1.0) > 1e-9:
        raise DataError(f"split fractions must be three nonnegative numbers summing to 1, got {fractions}")
    n = len(items)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fr[0] * n))
    n_val = min(int(round(fr[1] * n)), n - n_train)
    parts = (order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :])
    return tuple([items[i] for i in sorted(p)] for p in parts)


# --- array packing for training ---------------------------------------------


@dataclass
class ArrayDataset:
    """Dense view of a dataset: features plus padded label tensors.

    ``labels`` and ``mask`` have shape (n_attributes, n_items, M_max).
    """

    ids: list[str]
    attributes: tuple[str, ...]
    x: np.ndarray
    labels: np.ndarray
    mask: np.ndarray
    label_sets: list[list[LabelSet]] = field(repr=False, default_factory=list)

    def __len__(self):
        return len(self.ids)

    def take(self, idx) -> "ArrayDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return ArrayDataset(
            ids=[self.ids[i] for i in idx],
            attributes=self.attributes,
            x=self.x[idx],
            labels=self.labels[:, idx],
            mask=self.mask[:, idx],
            label_sets=[[ls[i] for i in idx] for ls in self.label_sets],
        )

    @property
    def label_means(self) -> np.ndarray:
        """(n_items, n_attributes) averaged labels."""
        return ((self.labels * self.mask).sum(axis=2) / self.mask.sum(axis=2)).T

    @property
    def label_variances(self) -> np.ndarray:
        mean = self.label_means.T[:, :, None]
        return ((((self.labels - mean) ** 2) * self.mask).sum(axis=2) / self.mask.sum(axis=2)).T


def to_arrays(items: Sequence[AnnotatedItem], attributes: Sequence[str] | None = None) -> ArrayDataset:
    if not items:
        raise DataError("empty dataset")
    attributes = tuple(attributes) if attributes is not None else tuple(items[0].labels)
    for it in items:
        if set(it.labels) != set(attributes):
            raise DataError(f"item {it.id!r} does not carry attributes {attributes}")
    x = np.array([it.features for it in items], dtype=np.float64)
    m_max = max(len(it.labels[a]) for it in items for a in attributes)
    labels = np.zeros((len(attributes), len(items), m_max))
    mask = np.zeros_like(labels)
    for i, it in enumerate(items):
        for k, a in enumerate(attributes):
            vals = it.labels[a].values
            labels[k, i, : len(vals)] = vals
            mask[k, i, : len(vals)] = 1.0
    label_sets = [[it.labels[a] for it in items] for a in attributes]
    return ArrayDataset([it.id for it in items], attributes, x, labels, mask, label_sets)
