import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lml.core import DomainError, SolverConfig
from lml.losses import (
    lml_nll_loss,
    lml_nll_loss_batch,
    multilabel_truncated_topk_entropy,
    predict_top_k,
    recall,
    sigmoid_collapse_loss,
    softmax_ce_loss,
    truncated_topk_entropy,
    zero_one_error,
)
from lml.oracle import finite_diff_grad

FINE = SolverConfig(tol=1e-15)


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def brute_truncated(scores, label, size):
    """Sort everything, drop the largest competitors, sum directly."""
    others = sorted((s, j) for j, s in enumerate(scores) if j != label)
    kept = others[:size]
    return math.log(1 + sum(math.exp(s - scores[label]) for s, _ in kept))


# -- lml nll ----------------------------------------------------------------

def test_lml_nll_symmetric_pair():
    lv = lml_nll_loss([0.0, 0.0], 1, {0})
    assert lv.value == pytest.approx(math.log(2))
    np.testing.assert_allclose(lv.grad, [-0.25, 0.25], atol=1e-12)
    fd = finite_diff_grad(lambda z: lml_nll_loss(z, 1, {0}, FINE).value, np.zeros(2))
    np.testing.assert_allclose(fd, lv.grad, atol=1e-8)


@pytest.mark.parametrize("n,k", [(5, 2), (10, 3)])
def test_lml_nll_uniform(n, k):
    lv = lml_nll_loss(np.full(n, -1.3), k, set(range(k)))
    assert lv.value == pytest.approx(-k * math.log(k / n), rel=1e-10)


def test_lml_nll_matches_finite_differences():
    rng = np.random.default_rng(0)
    x = rng.normal(size=10)
    lv = lml_nll_loss(x, 3, {2, 7}, FINE)
    fd = finite_diff_grad(lambda z: lml_nll_loss(z, 3, {2, 7}, FINE).value, x)
    assert rel_err(lv.grad, fd) <= 1e-5


def test_lml_nll_batch_matches_rows():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(6, 8))
    obs = [{0}, {1, 2}, {3}, {4, 5}, {7}, {0, 6}]
    values, grads, _ = lml_nll_loss_batch(X, 3, obs)
    for x, o, v, g in zip(X, obs, values, grads):
        lv = lml_nll_loss(x, 3, o)
        assert v == pytest.approx(lv.value, rel=1e-12)
        np.testing.assert_allclose(g, lv.grad, atol=1e-12)


@pytest.mark.parametrize("obs", [set(), {5}, {-1}])
def test_lml_nll_rejects_bad_labels(obs):
    with pytest.raises(DomainError):
        lml_nll_loss([0.0, 1.0, 2.0], 1, obs)


# -- prediction and metrics ---------------------------------------------------

@pytest.mark.parametrize("x,k,expect", [((3, 1, 2), 2, {0, 2}), ((1, 1, 1), 2, {0, 1}),
                                        ((-1, 5, 0, 5), 1, {1})])
def test_predict_top_k(x, k, expect):
    assert predict_top_k(np.array(x, float), k) == expect


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=20), st.data())
def test_predict_top_k_cardinality(x, data):
    k = data.draw(st.integers(1, len(x)))
    pred = predict_top_k(np.array(x), k)
    assert len(pred) == k
    assert min(x[j] for j in pred) >= max([x[j] for j in range(len(x)) if j not in pred], default=-np.inf)


@pytest.mark.parametrize("obs,pred,expect", [({1, 2}, {1, 2, 3}, 1.0), ({1, 2}, {3, 4}, 0.0),
                                             ({0, 1, 2, 3}, {0, 1}, 0.5)])
def test_recall(obs, pred, expect):
    assert recall(obs, pred) == expect


def test_recall_empty_observed():
    with pytest.raises(DomainError):
        recall(set(), {1})


@given(st.sets(st.integers(0, 9), min_size=1), st.sets(st.integers(0, 9)), st.integers(0, 9))
def test_recall_monotone_under_additions(obs, pred, extra):
    assert recall(obs, pred | {extra}) >= recall(obs, pred)
    assert recall(obs, obs | pred) == 1.0


@pytest.mark.parametrize("a,b,expect", [({1, 2}, {2, 1}, 0), ({1}, {1, 2}, 1), (set(), set(), 0)])
def test_zero_one_error(a, b, expect):
    assert zero_one_error(a, b) == expect


# -- truncated entropy --------------------------------------------------------

def test_truncated_k1_is_cross_entropy():
    rng = np.random.default_rng(3)
    s = rng.normal(size=7)
    lv = truncated_topk_entropy(s, 4, 1)
    assert lv.value == pytest.approx(softmax_ce_loss(s, {4}).value, rel=1e-12)
    np.testing.assert_allclose(lv.grad, softmax_ce_loss(s, {4}).grad, atol=1e-12)


def test_truncated_symmetric_defaults():
    assert truncated_topk_entropy(np.zeros(2), 0, 1).value == pytest.approx(math.log(2))
    assert truncated_topk_entropy(np.zeros(3), 0, 1).value == pytest.approx(math.log(3))


def test_truncated_dropping_k_competitors():
    # m = n - 1 keeps n - 1 - k competitors
    assert truncated_topk_entropy(np.zeros(2), 0, 1, m=1).value == 0.0
    assert truncated_topk_entropy(np.zeros(3), 0, 1, m=2).value == pytest.approx(math.log(2))
    assert truncated_topk_entropy(np.zeros(5), 2, 4, m=4).value == 0.0


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("m_offset", [0, 1])
def test_truncated_matches_brute_force(seed, m_offset):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=5)
    label = int(rng.integers(5))
    m = 5 - m_offset
    assert truncated_topk_entropy(s, label, 2, m=m).value == pytest.approx(
        brute_truncated(list(s), label, m - 2), rel=1e-13)


def test_truncated_gradient_matches_finite_differences():
    s = np.random.default_rng(4).normal(size=5)
    lv = truncated_topk_entropy(s, 1, 2)
    fd = finite_diff_grad(lambda z: truncated_topk_entropy(z, 1, 2).value, s)
    assert rel_err(lv.grad, fd) <= 1e-5


def test_truncated_monotone_in_label_margin():
    s = np.array([0.0, -1.0, 2.0, 0.5, -3.0])
    prev = np.inf
    for bump in np.linspace(0, 10, 21):
        t = s.copy()
        t[2] += bump
        v = truncated_topk_entropy(t, 2, 2).value
        assert v <= prev
        prev = v


def test_truncated_small_when_label_far_ahead():
    s = np.array([50.0, 0.0, 1.0, -2.0])
    assert truncated_topk_entropy(s, 0, 2).value < 1e-20


@pytest.mark.parametrize("args", [(5, 1), (0, 0), (0, 3), (-1, 1)])
def test_truncated_validation(args):
    label, k = args
    with pytest.raises(DomainError):
        truncated_topk_entropy(np.zeros(3), label, k)


def test_truncated_rejects_m_below_k():
    with pytest.raises(DomainError):
        truncated_topk_entropy(np.zeros(4), 0, 3, m=2)


# -- multi-label truncated entropy ---------------------------------------------

def test_multilabel_symmetric():
    lv = multilabel_truncated_topk_entropy(np.zeros(4), {0, 1}, 2)
    assert lv.value == pytest.approx(2 * math.log(3))


def test_multilabel_matches_brute_force():
    rng = np.random.default_rng(6)
    for _ in range(20):
        s = rng.normal(size=7)
        obs = set(rng.choice(7, size=2, replace=False).tolist())
        rest = sorted((s[j], j) for j in range(7) if j not in obs)[:7 - 3]
        want = sum(math.log(1 + sum(math.exp(v - s[i]) for v, _ in rest)) for i in obs)
        assert multilabel_truncated_topk_entropy(s, obs, 3).value == pytest.approx(want, rel=1e-13)


@pytest.mark.parametrize("m", [None, 5])
def test_multilabel_single_label_reduction(m):
    rng = np.random.default_rng(7)
    for _ in range(20):
        s = rng.normal(size=6)
        a = multilabel_truncated_topk_entropy(s, {0}, 3, m=m)
        b = truncated_topk_entropy(s, 0, 3, m=m)
        assert a.value == b.value
        assert np.array_equal(a.grad, b.grad)


def test_multilabel_gradient_matches_finite_differences():
    s = np.random.default_rng(8).normal(size=6)
    lv = multilabel_truncated_topk_entropy(s, {1, 4}, 3)
    fd = finite_diff_grad(lambda z: multilabel_truncated_topk_entropy(z, {1, 4}, 3).value, s)
    assert rel_err(lv.grad, fd) <= 1e-5


# -- baselines ----------------------------------------------------------------

def test_sigmoid_collapse_values():
    assert sigmoid_collapse_loss([0.0], {0}).value == pytest.approx(math.log(2))
    big = sigmoid_collapse_loss([60.0, -60.0], {0})
    assert big.value < 1e-25
    assert big.grad[1] == 0.0


def test_sigmoid_collapse_gradient():
    x = np.random.default_rng(9).normal(size=6)
    lv = sigmoid_collapse_loss(x, {0, 3})
    fd = finite_diff_grad(lambda z: sigmoid_collapse_loss(z, {0, 3}).value, x)
    assert rel_err(lv.grad, fd) <= 1e-5


def test_softmax_ce_gradient():
    x = np.random.default_rng(10).normal(size=6)
    lv = softmax_ce_loss(x, {2, 5})
    fd = finite_diff_grad(lambda z: softmax_ce_loss(z, {2, 5}).value, x)
    assert rel_err(lv.grad, fd) <= 1e-5


@given(st.lists(st.floats(-20, 20), min_size=3, max_size=8), st.data())
def test_losses_non_negative(x, data):
    x = np.array(x)
    n = x.size
    k = data.draw(st.integers(1, n - 1))
    obs = data.draw(st.sets(st.integers(0, n - 1), min_size=1, max_size=k))
    for lv in (multilabel_truncated_topk_entropy(x, obs, k), sigmoid_collapse_loss(x, obs),
               lml_nll_loss(x, k, obs), truncated_topk_entropy(x, min(obs), k)):
        assert lv.value >= 0 and np.all(np.isfinite(lv.grad))
