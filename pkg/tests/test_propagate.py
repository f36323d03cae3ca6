import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amalgamlab import (
    Window,
    builtin,
    defect,
    duhamel_residual,
    free_prop,
    gaussian,
    harmonic_prop,
    lp_norm,
    make_grid,
    parametrix_U0,
    phase_multiplier,
    remainder_R,
    sample,
    splitstep_prop,
    stark_prop,
    taylor_stft,
)
from amalgamlab.hamflow import HorizonError
from amalgamlab.propagate import FocalTimeError, StepCertificateError, apply_hamiltonian, exact_prop


def rel(a, b):
    return lp_norm(a.like(a.values - b.values), 2) / lp_norm(b, 2)


@pytest.fixture(scope="module")
def grid():
    return make_grid(1, 512, 12 * np.pi)


@pytest.fixture(scope="module")
def f(grid):
    return sample(grid, gaussian(0.5, 0.8, 1.0))


def test_free_prop(grid1, unit_gaussian):
    assert free_prop(unit_gaussian, 0.0) is unit_gaussian
    u = free_prop(unit_gaussian, 1.0)
    assert lp_norm(u, 2) == pytest.approx(lp_norm(unit_gaussian, 2), abs=1e-12)
    x = grid1.axis
    ref = np.pi ** -0.25 * (1 + 1j) ** -0.5 * np.exp(-x ** 2 / (2 * (1 + 1j)))
    assert np.max(np.abs(u.values - ref)) <= 1e-10


def test_free_group(f):
    a = free_prop(free_prop(f, 0.2), 0.3)
    assert rel(a, free_prop(f, 0.5)) < 1e-13
    assert rel(free_prop(free_prop(f, 0.4), -0.4), f) < 1e-13


def test_stark_prop(f):
    assert rel(stark_prop(f, 0.3, 0.0), free_prop(f, 0.3)) < 1e-14
    u = stark_prop(f, 0.3, 2.0)
    assert lp_norm(u, 2) == pytest.approx(lp_norm(f, 2), abs=1e-12)
    ref = splitstep_prop(f, 0.3, builtin("stark", E=2.0), dt=1e-4)
    assert rel(u, ref) < 1e-6


def test_stark_solves_equation(f):
    # i d/dt u = H u at t = 0.2 by central differences
    pot = builtin("stark", E=1.5)
    d = 1e-4
    du = (stark_prop(f, 0.2 + d, 1.5).values - stark_prop(f, 0.2 - d, 1.5).values) / (2 * d)
    Hu = apply_hamiltonian(stark_prop(f, 0.2, 1.5), pot)
    assert np.max(np.abs(1j * du - Hu.values)) / np.max(np.abs(Hu.values)) < 1e-6


def test_harmonic_prop(grid1):
    g = sample(grid1, gaussian(1.0, 1.0))
    assert harmonic_prop(g, 0.0) is g
    t = np.pi / 4
    u = harmonic_prop(g, t)
    assert lp_norm(u, 2) == pytest.approx(1.0, abs=1e-8)
    # the coherent state keeps its shape and follows the classical orbit
    x = grid1.axis
    env = np.pi ** -0.25 * np.exp(-(x - np.cos(t)) ** 2 / 2)
    assert np.max(np.abs(np.abs(u.values) - env)) < 1e-10
    ref = splitstep_prop(g, t, builtin("harmonic"), dt=2e-4)
    assert rel(u, ref) < 1e-6
    with pytest.raises(ValueError):
        harmonic_prop(g, t, method="kernel")


def test_harmonic_kernel_path():
    g = make_grid(1, 1024, 12.0)
    f = sample(g, gaussian(1.0, 1.0, 0.5))
    for t in (np.pi / 4, 1.0, -0.6):
        assert rel(harmonic_prop(f, t, method="kernel"), harmonic_prop(f, t)) < 1e-8


def test_harmonic_period_and_focal(f):
    u = harmonic_prop(f, 2 * np.pi)
    # a full period returns the state up to the phase e^{-i pi}
    assert rel(u.like(-u.values), f) < 1e-10
    with pytest.raises(FocalTimeError):
        harmonic_prop(f, np.pi)
    with pytest.raises(ValueError):
        harmonic_prop(f, 0.1, sign=2)


def test_inverted_harmonic(f):
    u = harmonic_prop(f, 0.3, sign=-1)
    ref = splitstep_prop(f, 0.3, builtin("inverted_harmonic"), dt=1e-4)
    assert rel(u, ref) < 1e-6


def test_splitstep(f):
    assert rel(splitstep_prop(f, 0.4, builtin("zero")), free_prop(f, 0.4)) < 1e-12
    pot = builtin("cosine")
    ref = splitstep_prop(f, 0.4, pot, dt=2.5e-4)
    e1 = rel(splitstep_prop(f, 0.4, pot, dt=0.02), ref)
    e2 = rel(splitstep_prop(f, 0.4, pot, dt=0.01), ref)
    assert 3.5 < e1 / e2 < 4.5
    with pytest.raises(StepCertificateError):
        splitstep_prop(f, 0.4, pot, dt=0.1, certify=True)
    ok = splitstep_prop(f, 0.4, pot, dt=1e-3, certify=True, cert_tol=1e-6)
    assert rel(ok, ref) < 1e-6


def test_exact_prop_dispatch(f):
    assert rel(exact_prop(f, 0.2, builtin("stark", E=1.0)), stark_prop(f, 0.2, 1.0)) == 0
    with pytest.raises(ValueError):
        exact_prop(f, 0.2, builtin("cosine"))


def _taylor_oracle(u, s, xs, ks):
    """Brute-force sum of 1/2 (y-x)^2 conj(g_s(y-x)) u(y) e^{-iy xi} h."""
    g = u.grid
    y = g.axis
    w = Window(time=s)
    out = []
    for x, k in zip(xs, ks):
        out.append(np.sum(0.5 * (y - x) ** 2 * np.conj(w.profile1(y - x)) * u.values * np.exp(-1j * y * k)) * g.spacing)
    return np.array(out)


def test_taylor_stft(f):
    grid = f.grid
    assert np.all(taylor_stft(f, 0.1, builtin("stark", E=2.0)).values == 0)
    assert np.all(taylor_stft(f, 0.1, builtin("zero")).values == 0)
    T = taylor_stft(f, 0.1, builtin("harmonic"))
    rng = np.random.default_rng(0)
    i = rng.integers(200, 312, 20)
    k = rng.integers(200, 312, 20)
    ref = _taylor_oracle(f, 0.1, grid.axis[i], grid.dual_axis[k])
    np.testing.assert_allclose(T.values[i, k], ref, atol=1e-10)
    D = taylor_stft(f, 0.1, builtin("cosine"), method="direct")
    Q = taylor_stft(f, 0.1, builtin("cosine"))
    assert np.max(np.abs(D.values - Q.values)) < 1e-10


def test_taylor_stft_linear(f):
    pot = builtin("cosine")
    g = sample(f.grid, gaussian(-1.0, 1.2))
    a = taylor_stft(f.like(2j * f.values + g.values), 0.05, pot).values
    b = 2j * taylor_stft(f, 0.05, pot).values + taylor_stft(g, 0.05, pot).values
    assert np.max(np.abs(a - b)) < 1e-12


def test_phase_multiplier():
    z = builtin("zero")
    xs = np.array([0.3, -1.0, 2.0])
    ks = np.array([1.0, 0.5, -2.0])
    m = phase_multiplier(0.3, 0.1, z, xs, ks)
    np.testing.assert_allclose(m, np.exp(-1j * 0.2 * ks ** 2 / 2), atol=1e-12)
    back = phase_multiplier(0.1, 0.3, z, xs, ks)
    np.testing.assert_allclose(m * back, 1, atol=1e-12)
    c = phase_multiplier(0.2, -0.1, builtin("cosine"), xs, ks)
    np.testing.assert_allclose(np.abs(c), 1, atol=1e-14)


def test_parametrix_exact_cases(f):
    assert rel(parametrix_U0(f, 0.0, builtin("cosine")), f) < 1e-8
    assert rel(parametrix_U0(f, 0.1, builtin("zero")), free_prop(f, 0.1)) < 1e-6
    assert rel(parametrix_U0(f, 0.1, builtin("stark", E=1.0)), stark_prop(f, 0.1, 1.0)) < 1e-6
    with pytest.raises(HorizonError):
        parametrix_U0(f, 0.5, builtin("harmonic"))


def test_parametrix_approximates_harmonic(f):
    # the parametrix error is O(t) times the remainder size; check a loose bound
    u0 = parametrix_U0(f, 0.05, builtin("harmonic"))
    assert rel(u0, harmonic_prop(f, 0.05)) < 0.05


def test_remainder_R(f):
    z = remainder_R(f, 0.1, 0.05, builtin("zero"))
    assert np.all(z.values == 0)
    pot = builtin("harmonic")
    a = remainder_R(f, 0.1, 0.05, pot)
    g = sample(f.grid, gaussian(-1.0, 1.2))
    b = remainder_R(g, 0.1, 0.05, pot)
    ab = remainder_R(f.like(3 * f.values - g.values), 0.1, 0.05, pot)
    assert rel(ab, a.like(3 * a.values - b.values)) < 1e-10
    ratio = lp_norm(a, 2) / lp_norm(f, 2)
    fine = sample(f.grid.refined(), gaussian(0.5, 0.8, 1.0))
    ratio2 = lp_norm(remainder_R(fine, 0.1, 0.05, pot), 2) / lp_norm(fine, 2)
    assert np.isfinite(ratio) and abs(ratio2 / ratio - 1) < 0.1


def test_defect_zero_hessian(f):
    assert np.all(defect(f, 0.1, builtin("stark", E=1.0)).values == 0)


def test_defect_matches_difference_quotient(f):
    pot = builtin("harmonic")
    t, d = 0.1, 0.01
    dU = (parametrix_U0(f, t + d, pot).values - parametrix_U0(f, t - d, pot).values) / (2 * d)
    lhs = 1j * dU - apply_hamiltonian(parametrix_U0(f, t, pot), pot).values
    D = defect(f, t, pot)
    assert np.linalg.norm(lhs - D.values) / np.linalg.norm(D.values) < 5e-3


def test_duhamel_trivial(f):
    assert duhamel_residual(f, 0.0, builtin("harmonic")) == 0.0
    assert duhamel_residual(f, 0.1, builtin("zero"), K=4) <= 1e-6
    assert duhamel_residual(f, 0.1, builtin("stark", E=1.0), K=4) <= 1e-6


@settings(max_examples=10, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-2, 2), st.floats(-1, 1))
def test_unitarity_property(t, E, c):
    g = make_grid(1, 512, 12 * np.pi)
    f = sample(g, gaussian(c, 1.0, 0.5))
    for u in (free_prop(f, t), stark_prop(f, t, E), harmonic_prop(f, t)):
        assert lp_norm(u, 2) == pytest.approx(lp_norm(f, 2), abs=1e-12)
