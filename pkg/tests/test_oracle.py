import numpy as np
import pytest

from lml.core import DomainError, LmlPoint, lml_backward, lml_project
from lml.oracle import (
    OracleConfig,
    check_kkt,
    finite_diff_grad,
    finite_diff_jvp,
    reference_project,
)


def test_reference_symmetric():
    p = reference_project([0.0, 0.0], 1)
    np.testing.assert_allclose(p.probs, [0.5, 0.5], atol=1e-15)


def test_reference_extreme_spread():
    x = np.array([30.0, -30.0, 30.0, -30.0, 29.5])
    p = reference_project(x, 1)
    assert abs(p.probs.sum() - 1) <= 1e-8


def test_reference_agrees_with_fast_solver():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 65))
        k = int(rng.integers(1, n))
        x = rng.normal(scale=rng.choice([0.01, 1.0, 10.0]), size=n)
        worst = max(worst, np.abs(reference_project(x, k).probs - lml_project(x, k).probs).max())
    assert worst <= 1e-7


@pytest.mark.parametrize("k", [0, 3])
def test_reference_rejects_invalid_k(k):
    with pytest.raises(DomainError):
        reference_project([0.0, 1.0, 2.0], k)


def test_kkt_passes_on_projection():
    rng = np.random.default_rng(2)
    x = rng.normal(size=12)
    r = check_kkt(x, lml_project(x, 4))
    assert r.passed
    assert r.stationarity <= 1e-9
    assert r.dual_gap <= 1e-8


def test_kkt_uniform_is_exact():
    x = np.full(6, 0.7)
    r = check_kkt(x, LmlPoint(np.full(6, 0.5), 3, -0.7))
    assert r.stationarity <= 1e-15 and r.feasibility == 0.0


def test_kkt_detects_perturbation():
    x = np.random.default_rng(5).normal(size=8)
    y = lml_project(x, 3).probs
    y = y + 1e-3 * np.array([1, -1] * 4)
    y *= 3 / y.sum()
    r = check_kkt(x, LmlPoint(y, 3, np.nan))
    assert r.stationarity > 1e-4
    assert not r.passed


def test_kkt_requires_interior():
    with pytest.raises(DomainError):
        check_kkt([0.0, 0.0], LmlPoint(np.array([1.0, 0.0]), 1, 0.0))


def test_jvp_identity():
    v = np.array([0.3, -2.0, 5.0])
    np.testing.assert_allclose(finite_diff_jvp(lambda z: z, np.zeros(3), v), v, atol=1e-9)


def test_jvp_square():
    assert float(finite_diff_jvp(lambda z: z ** 2, np.array(1.0), np.array(1.0))) == pytest.approx(2.0, abs=1e-9)


def test_jvp_rejects_bad_step():
    with pytest.raises(DomainError):
        finite_diff_jvp(lambda z: z, np.zeros(2), np.ones(2), step=0.0)


def test_jvp_transpose_identity_with_backward():
    # <u, J v> by differences equals <J^T u, v> from the backward pass
    rng = np.random.default_rng(8)
    x, u, v = rng.normal(size=(3, 9))
    jv = finite_diff_jvp(lambda z: lml_project(z, 4).probs, x, v)
    jtu = lml_backward(lml_project(x, 4), u)
    assert abs(u @ jv - jtu @ v) <= 1e-5 * max(1.0, abs(jtu @ v))


def test_finite_diff_grad_quadratic():
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    x = np.array([0.5, -1.0])
    np.testing.assert_allclose(finite_diff_grad(lambda z: 0.5 * z @ A @ z, x), A @ x, atol=1e-8)


def test_oracle_config_defaults():
    cfg = OracleConfig()
    assert (cfg.bisection_tol, cfg.fd_step, cfg.kkt_tol) == (1e-14, 1e-6, 1e-9)
