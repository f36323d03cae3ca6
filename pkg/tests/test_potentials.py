import numpy as np
import pytest
from scipy.optimize import brentq

from amalgamlab import builtin, compute_T1, compute_T2, constant_M, lemma_constants
from amalgamlab.potentials import CertificateError, certify_hessian, custom, taylor_remainder, taylor_remainder_direct


def test_builtin_flags():
    z = builtin("zero")
    assert z.hessian_sup == 0 and z.zero_hessian
    h = builtin("harmonic")
    assert h.hessian_sup == 1 and not h.zero_hessian
    s = builtin("stark", E=2.0)
    assert s.hessian_sup == 0 and s.exact_propagator and s.zero_hessian
    assert s.label() == "stark(E=2)"
    with pytest.raises(ValueError):
        builtin("quartic")


@pytest.mark.parametrize("name", ["zero", "harmonic", "inverted_harmonic", "stark", "cosine", "quad_plus_trig"])
@pytest.mark.parametrize("dim", [1, 2])
def test_builtin_derivatives(name, dim):
    pot = builtin(name, dim=dim)
    rng = np.random.default_rng(5)
    x = rng.uniform(-3, 3, size=(20, dim))
    eps = 1e-6
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = eps
        fd = (pot(x + e) - pot(x - e)) / (2 * eps)
        np.testing.assert_allclose(pot.grad(x)[:, i], fd, atol=1e-7)
        fdh = (pot.grad(x + e) - pot.grad(x - e)) / (2 * eps)
        np.testing.assert_allclose(pot.hess(x)[:, :, i], fdh, atol=1e-7)
    assert certify_hessian(pot) <= pot.hessian_sup + 1e-15
    assert np.all(np.isreal(pot(x)))


def test_custom_certificate():
    ok = custom("soft", 1, lambda x: np.sin(x[..., 0]), lambda x: np.cos(x), lambda x: -np.sin(x)[..., None], 1.0)
    assert ok.hessian_sup == 1.0
    with pytest.raises(CertificateError):
        custom("bad", 1, lambda x: x[..., 0] ** 2, lambda x: 2 * x, lambda x: 2 + 0 * x[..., None], 1.0)
    with pytest.raises(ValueError):
        custom("nobound", 1, None, None, None, None)


def test_constant_M():
    assert constant_M(builtin("zero")) == 1
    assert constant_M(builtin("harmonic")) == 2
    assert constant_M(builtin("cosine")) == 2
    assert constant_M(builtin("harmonic", dim=2)) == 5


def test_T1_values():
    r2 = brentq(lambda T: 2 ** 2.5 * T * np.exp(2 * T) - 0.5, 0, 1, xtol=1e-15)
    assert compute_T1(2) == pytest.approx(0.999 * r2, rel=1e-10)
    assert compute_T1(2) == pytest.approx(0.0756, abs=5e-4)
    r1 = brentq(lambda T: 2 * T * np.exp(T) - 0.5, 0, 1, xtol=1e-15)
    assert compute_T1(1) == pytest.approx(0.999 * min(r1, 1 / 3), rel=1e-10)
    assert compute_T1(4) < compute_T1(2)
    with pytest.raises(ValueError):
        compute_T1(0.5)


def test_T2_values():
    assert compute_T2(builtin("zero")) == pytest.approx(1 / 3)
    assert compute_T2(builtin("harmonic")) == pytest.approx(1 / 3)
    big = custom("k", 1, lambda x: 0 * x[..., 0], lambda x: 0 * x, lambda x: 0 * x[..., None], 99.0)
    bigger = custom("k", 1, lambda x: 0 * x[..., 0], lambda x: 0 * x, lambda x: 0 * x[..., None], 399.0)
    assert compute_T2(big) == pytest.approx(np.sqrt(1 / 400))
    assert compute_T2(bigger) == pytest.approx(compute_T2(big) / 2)
    lc = lemma_constants(builtin("cosine"))
    assert lc.M == 2 and lc.Mprime == 2 and lc.T2 == pytest.approx(1 / 3)


@pytest.mark.parametrize("name", ["harmonic", "cosine", "quad_plus_trig", "stark"])
def test_taylor_remainder_forms_agree(name):
    pot = builtin(name, dim=2)
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, size=(50, 2))
    y = x + rng.uniform(-0.5, 0.5, size=(50, 2))
    np.testing.assert_allclose(taylor_remainder(pot, x, y), taylor_remainder_direct(pot, x, y), atol=1e-12)


def test_harmonic_remainder_value():
    pot = builtin("harmonic")
    x = np.array([[0.3]])
    y = np.array([[1.7]])
    assert taylor_remainder_direct(pot, x, y)[0] == pytest.approx(0.5 * 1.4 ** 2)
