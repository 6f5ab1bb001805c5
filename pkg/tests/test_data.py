import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deer.data import (
    AnnotatedItem,
    DataError,
    GeneratorConfig,
    generate,
    load,
    load_truth,
    save,
    save_truth,
    split,
    to_arrays,
)
from deer.evidential import LabelSet


def test_generate_shapes_and_ranges():
    items, truth = generate(GeneratorConfig(n_items=200, d=5, m_range=(3, 7), seed=1))
    assert len(items) == 200
    assert truth.true_mean.shape == (200, 3) and truth.true_var.shape == (200, 3)
    assert np.all(truth.true_var > 0)
    for it in items:
        assert len(it.features) == 5
        assert all(-1 <= v <= 1 for v in it.features)
        sizes = {len(ls) for ls in it.labels.values()}
        assert len(sizes) == 1 and 3 <= sizes.pop() <= 7
    assert {len(next(iter(it.labels.values()))) for it in items} == set(range(3, 8))


def test_generate_is_deterministic(tmp_path):
    cfg = GeneratorConfig(n_items=50, seed=4)
    save(generate(cfg)[0], tmp_path / "a.jsonl")
    save(generate(cfg)[0], tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_homoscedastic_label_variance_matches_s0():
    cfg = GeneratorConfig(n_items=10_000, d=4, m_range=(3, 7), s0=0.5, s1=0.0, seed=2, attributes=("v",))
    items, _ = generate(cfg)
    # unbiased per-item variance, averaged over items
    per_item = np.array([np.var(it.labels["v"].values, ddof=1) for it in items])
    se = per_item.std(ddof=1) / np.sqrt(len(per_item))
    assert abs(per_item.mean() - 0.5) < 3 * se


def test_label_means_concentrate_on_truth():
    items, truth = generate(GeneratorConfig(n_items=3000, seed=8))
    ds = to_arrays(items)
    counts = ds.mask.sum(axis=2).T
    z = (ds.label_means - truth.true_mean) / np.sqrt(truth.true_var / counts)
    # standardised errors: mean ~ 0 and variance ~ 1
    assert abs(z.mean()) < 3 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 0.1


@pytest.mark.parametrize("m_range", [(0, 3), (4, 3), (3, 21)])
def test_generate_rejects_bad_config(m_range):
    with pytest.raises(DataError):
        generate(GeneratorConfig(n_items=5, m_range=m_range))


def test_save_load_round_trip(tmp_path):
    items, _ = generate(GeneratorConfig(n_items=30, d=3, m_range=(1, 6), seed=9))
    save(items, tmp_path / "d.jsonl")
    assert load(tmp_path / "d.jsonl") == items


def test_single_record_round_trip(tmp_path):
    item = AnnotatedItem("x", (0.25, -1.0), {"valence": LabelSet([2.0, 3.0, 4.0])})
    save([item], tmp_path / "one.jsonl")
    (back,) = load(tmp_path / "one.jsonl")
    assert back == item
    assert back.labels["valence"].mean == 3.0
    assert back.labels["valence"].variance == pytest.approx(2 / 3)


_good = {"id": "a", "features": [0.0, 1.0], "labels": {"valence": [1.0]}}


@pytest.mark.parametrize(
    "lines, message",
    [
        ([], "no records"),
        (["{not json"], ":1: malformed"),
        ([json.dumps(_good), json.dumps({**_good, "id": "b", "features": [1.0]})], ":2: feature width"),
        ([json.dumps(_good), json.dumps({**_good, "id": "b", "labels": {"arousal": [1.0]}})], ":2: unknown attributes"),
        ([json.dumps({**_good, "labels": {"valence": []}})], "is empty"),
        ([json.dumps({**_good, "labels": {"valence": ["x"]}})], "array of numbers"),
        ([json.dumps({"id": "a", "features": [0.0]})], "exactly the fields"),
        ([json.dumps(_good), json.dumps(_good)], "duplicate id"),
        ([json.dumps({**_good, "features": []})], "features"),
    ],
)
def test_load_rejects_malformed(tmp_path, lines, message):
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join(lines) + ("\n" if lines else ""))
    with pytest.raises(DataError, match=message):
        load(path)


def test_truth_round_trip(tmp_path):
    _, truth = generate(GeneratorConfig(n_items=20, seed=3))
    save_truth(truth, tmp_path / "t.jsonl")
    back = load_truth(tmp_path / "t.jsonl")
    assert back.ids == truth.ids and back.attributes == truth.attributes
    assert np.array_equal(back.true_mean, truth.true_mean)
    assert np.array_equal(back.true_var, truth.true_var)


def test_split_all_train():
    items, _ = generate(GeneratorConfig(n_items=17, seed=0))
    train, val, test = split(items, (1, 0, 0))
    assert train == items and val == [] and test == []


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 300), st.floats(0.05, 0.9), st.floats(0.0, 1.0), st.integers(0, 100))
def test_split_partition_and_sizes(n, f_train, share, seed):
    f_val = (1 - f_train) * share
    fr = (f_train, f_val, 1 - f_train - f_val)
    items = [AnnotatedItem(f"i{k:04d}", (0.0,), {"v": LabelSet([0.0])}) for k in range(n)]
    parts = split(items, fr, seed)
    ids = [it.id for part in parts for it in part]
    assert sorted(ids) == [it.id for it in items]
    for part, f in zip(parts, fr):
        assert abs(len(part) - f * n) <= 1 + 1e-9
    assert split(items, fr, seed) == parts


@pytest.mark.parametrize("fr", [(0.5, 0.5), (0.7, 0.2, 0.2), (1.2, -0.1, -0.1)])
def test_split_rejects_bad_fractions(fr):
    with pytest.raises(DataError):
        split([], fr)


def test_to_arrays_padding():
    items = [
        AnnotatedItem("a", (1.0,), {"v": LabelSet([1.0, 3.0])}),
        AnnotatedItem("b", (2.0,), {"v": LabelSet([5.0])}),
    ]
    ds = to_arrays(items)
    assert ds.labels.shape == (1, 2, 2)
    assert ds.mask.tolist() == [[[1, 1], [1, 0]]]
    assert ds.label_means.tolist() == [[2.0], [5.0]]
    assert ds.label_variances.tolist() == [[1.0], [0.0]]
    sub = ds.take([1])
    assert sub.ids == ["b"] and sub.label_sets[0][0].values == (5.0,)
