import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deer.evidential import (
    LabelSet,
    LossVariant,
    NIGParams,
    attribute_loss,
    batch_attribute_loss,
    multi_attribute_loss,
    nig_nll,
    nll_averaged,
    nll_per_observation,
    phi,
    predictive_logpdf,
    reg_mu,
    reg_sigma,
    uncertainty,
)
from deer.special import marginal_oracle

ST4_AT_ZERO = 0.9808292530117262  # -ln(3/8)

nig = st.builds(
    NIGParams,
    st.floats(-5, 5),
    st.floats(1e-3, 1e3),
    st.floats(1.001, 100),
    st.floats(1e-3, 1e3),
)
label_values = st.lists(st.floats(-10, 10), min_size=1, max_size=12)
BASE = NIGParams(0.0, 1.0, 2.0, 1.0)


@pytest.mark.parametrize(
    "bad",
    [(0.0, 0.0, 2.0, 1.0), (0.0, 1.0, 1.0, 1.0), (0.0, 1.0, 2.0, 0.0), (math.nan, 1.0, 2.0, 1.0)],
)
def test_nig_params_rejects_invalid(bad):
    with pytest.raises(ValueError):
        NIGParams(*bad)


def test_label_set_statistics():
    ls = LabelSet([2.0, 3.0, 4.0])
    assert ls.mean == 3.0
    assert ls.variance == pytest.approx(2.0 / 3.0, abs=1e-15)
    with pytest.raises(ValueError):
        LabelSet([])


def test_uncertainty_examples():
    r = uncertainty(BASE)
    assert (r.mean, r.aleatoric, r.epistemic, r.total) == (0.0, 1.0, 1.0, 2.0)
    r = uncertainty(NIGParams(3.0, 10.0, 2.0, 1.0))
    assert r.mean == 3.0
    assert r.aleatoric == pytest.approx(1.0)
    assert r.epistemic == pytest.approx(0.1)
    assert r.total == pytest.approx(1.1)


@given(nig)
def test_total_is_sum_of_parts(omega):
    r = uncertainty(omega)
    assert r.total == r.aleatoric + r.epistemic
    # and agrees with the closed-form predictive variance
    v, a, b = omega.upsilon, omega.alpha, omega.beta
    assert r.total == pytest.approx(b * (1 + v) / (v * (a - 1)), rel=1e-12)
    assert min(r.aleatoric, r.epistemic, r.total) > 0


def test_predictive_logpdf_reference():
    assert predictive_logpdf(0.0, BASE) == pytest.approx(-ST4_AT_ZERO, abs=1e-12)


def test_predictive_logpdf_matches_oracle_random():
    rng = np.random.default_rng(11)
    for _ in range(10):
        omega = NIGParams(rng.normal(), rng.uniform(0.1, 10), rng.uniform(1.1, 5), rng.uniform(0.2, 3))
        y = rng.uniform(-6, 6)
        assert predictive_logpdf(y, omega) == pytest.approx(marginal_oracle(y, omega), abs=1e-6)


@given(nig)
def test_predictive_mode_is_gamma(omega):
    ys = omega.gamma + np.linspace(-3, 3, 61)
    vals = predictive_logpdf(ys, omega)
    assert ys[np.argmax(vals)] == pytest.approx(omega.gamma, abs=1e-12)


def test_direct_parameterisation_matches_student_t():
    # the NLL written directly in (gamma, upsilon, alpha, beta)
    rng = np.random.default_rng(3)
    for _ in range(50):
        omega = NIGParams(rng.normal(), rng.uniform(0.01, 50), rng.uniform(1.01, 20), rng.uniform(0.01, 10))
        y = rng.normal(scale=3)
        direct = nig_nll(y, omega.gamma, omega.upsilon, omega.alpha, omega.beta)
        assert direct == pytest.approx(-predictive_logpdf(y, omega), abs=1e-10)


def test_phi_examples():
    assert phi(BASE) == pytest.approx(0.5)
    assert phi(NIGParams(0.0, 10.0, 2.0, 1.0)) == pytest.approx(10 / 11)


@given(nig)
def test_phi_reciprocal_identity(omega):
    assert phi(omega) * uncertainty(omega).total == pytest.approx(1.0, abs=1e-14)


def test_nll_per_observation_examples():
    assert nll_per_observation(LabelSet([0.0]), BASE) == pytest.approx(ST4_AT_ZERO, abs=1e-12)
    assert nll_per_observation(LabelSet([0.0, 0.0, 0.0]), BASE) == pytest.approx(ST4_AT_ZERO, abs=1e-12)
    assert nll_per_observation(LabelSet([-1.0, 1.0]), BASE) == nll_per_observation(LabelSet([1.0, -1.0]), BASE)
    # -(1/2)[ln St4(-1|0,1) + ln St4(1|0,1)], evaluated with mpmath
    assert nll_per_observation(LabelSet([-1.0, 1.0]), BASE) == pytest.approx(1.5386881312972505, abs=1e-12)


@given(label_values, nig, st.randoms())
def test_nll_permutation_invariant(values, omega, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    a = nll_per_observation(LabelSet(values), omega)
    b = nll_per_observation(LabelSet(shuffled), omega)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


def test_nll_averaged_examples():
    for omega in (BASE, NIGParams(2.0, 0.3, 4.0, 2.0)):
        assert nll_averaged(LabelSet([0.7]), omega) == pytest.approx(nll_per_observation(LabelSet([0.7]), omega))
    pair = LabelSet([-1.0, 1.0])
    assert nll_averaged(pair, BASE) == pytest.approx(ST4_AT_ZERO, abs=1e-12)
    assert nll_averaged(pair, BASE) <= nll_per_observation(pair, BASE)


def test_reg_mu_examples():
    assert reg_mu(LabelSet([0.0]), BASE) == 0.0
    assert reg_mu(LabelSet([1.0]), BASE) == pytest.approx(0.5)
    doubled = NIGParams(0.0, 1.0, 2.0, 2.0)
    assert reg_mu(LabelSet([1.0]), doubled) == pytest.approx(0.5 * reg_mu(LabelSet([1.0]), BASE))


def test_reg_sigma_examples():
    assert reg_sigma(LabelSet([-1.0, 1.0]), BASE) == 0.0
    assert reg_sigma(LabelSet([0.0, 0.0]), BASE) == pytest.approx(0.5)
    # single label: sigma_bar^2 = 0, penalty phi * E[sigma^2]
    omega = NIGParams(0.3, 2.0, 3.0, 1.5)
    assert reg_sigma(LabelSet([4.0]), omega) == pytest.approx(phi(omega) * uncertainty(omega).aleatoric)


@given(label_values, nig)
def test_regularisers_nonnegative(values, omega):
    ls = LabelSet(values)
    assert reg_mu(ls, omega) >= 0
    assert reg_sigma(ls, omega) >= 0


def test_attribute_loss_examples():
    ls = LabelSet([0.0])
    assert attribute_loss(ls, BASE, 0.0).total == nll_per_observation(ls, BASE)
    br = attribute_loss(ls, BASE, 0.1)
    assert br.total == pytest.approx(1.0308292530117262, abs=1e-12)
    assert br.total == pytest.approx(br.nll + 0.1 * (br.reg_mu + br.reg_sigma))
    assert attribute_loss(ls, BASE, 0.1, use_reg_sigma=False).reg_sigma == 0.0
    assert attribute_loss(LabelSet([-1.0, 1.0]), BASE, 0.0, avg_nll=True).nll == pytest.approx(ST4_AT_ZERO)


@given(label_values, nig, st.floats(0, 5), st.floats(0, 5))
def test_attribute_loss_monotone_in_lambda(values, omega, l1, l2):
    ls = LabelSet(values)
    lo, hi = sorted((l1, l2))
    assert attribute_loss(ls, omega, lo).total <= attribute_loss(ls, omega, hi).total + 1e-12


def test_multi_attribute_loss():
    ls = LabelSet([0.0])
    single = attribute_loss(ls, BASE, 0.1).total
    assert multi_attribute_loss([ls], [BASE], [1.0], [0.1]) == pytest.approx(single)
    third = [1 / 3] * 3
    assert multi_attribute_loss([ls] * 3, [BASE] * 3, third, [0.1] * 3) == pytest.approx(single)
    with pytest.raises(ValueError):
        multi_attribute_loss([ls] * 3, [BASE] * 3, [0.5, 0.5, 0.5], [0.1] * 3)
    with pytest.raises(ValueError):
        multi_attribute_loss([ls] * 3, [BASE] * 2, third, [0.1] * 3)


def _scalar_reference(values, omega, lam, variant):
    return attribute_loss(
        LabelSet(values), omega, lam, avg_nll=variant.avg_nll, use_reg_sigma=variant.use_reg_sigma
    ).total


@pytest.mark.parametrize("variant", [LossVariant(), LossVariant(avg_nll=True), LossVariant(use_reg_sigma=False)])
def test_batch_loss_matches_scalar_path_and_its_gradient(variant):
    rng = np.random.default_rng(5)
    b, m_max = 7, 5
    counts = rng.integers(1, m_max + 1, size=b)
    labels = rng.normal(size=(b, m_max))
    mask = (np.arange(m_max)[None, :] < counts[:, None]).astype(float)
    params = [rng.normal(size=b), rng.uniform(0.2, 3, b), rng.uniform(1.2, 4, b), rng.uniform(0.2, 3, b)]
    loss, grads = batch_attribute_loss(labels, mask, *params, 0.3, variant)
    h = 1e-6
    for i in range(b):
        vals = labels[i, : counts[i]]
        om = NIGParams(*(float(p[i]) for p in params))
        assert loss[i] == pytest.approx(_scalar_reference(vals, om, 0.3, variant), abs=1e-12)
        for k in range(4):
            up = [float(p[i]) for p in params]
            down = list(up)
            up[k] += h
            down[k] -= h
            fd = (_scalar_reference(vals, NIGParams(*up), 0.3, variant)
                  - _scalar_reference(vals, NIGParams(*down), 0.3, variant)) / (2 * h)
            assert grads[k][i] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_detached_phi_only_changes_regulariser_gradients():
    rng = np.random.default_rng(2)
    labels = rng.normal(size=(4, 3))
    mask = np.ones_like(labels)
    params = [rng.normal(size=4), rng.uniform(0.5, 2, 4), rng.uniform(1.5, 3, 4), rng.uniform(0.5, 2, 4)]
    full_loss, full = batch_attribute_loss(labels, mask, *params, 0.0, LossVariant())
    det_loss, det = batch_attribute_loss(labels, mask, *params, 0.0, LossVariant(detach_phi=True))
    assert np.array_equal(full_loss, det_loss)
    for a, b in zip(full, det):
        assert np.array_equal(a, b)
    _, full = batch_attribute_loss(labels, mask, *params, 0.5, LossVariant())
    _, det = batch_attribute_loss(labels, mask, *params, 0.5, LossVariant(detach_phi=True))
    assert np.array_equal(full[0], det[0])  # gamma enters the regularisers only through |y_bar - gamma|
    assert not np.allclose(full[1], det[1])
