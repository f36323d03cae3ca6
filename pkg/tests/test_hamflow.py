import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amalgamlab import builtin, check_lemh, compute_T1, compute_T2, constant_M, flow, flow_det, scaled_det
from amalgamlab.hamflow import HorizonError, StepBudgetError, flow_record


def test_free_flow_exact():
    z = builtin("zero")
    x0, xi0 = np.array([0.5, -1.0]), np.array([2.0, 0.25])
    t = 0.7
    fp = flow(z, t, x0, xi0)
    np.testing.assert_allclose(fp.x[:, 0], x0 + t * xi0, atol=1e-12)
    np.testing.assert_allclose(fp.xi[:, 0], xi0, atol=1e-12)
    np.testing.assert_allclose(fp.J, np.broadcast_to([[1, t], [0, 1]], fp.J.shape), atol=1e-12)
    np.testing.assert_allclose(fp.phase, t * xi0 ** 2 / 2, atol=1e-12)


def test_harmonic_quarter_period():
    h = builtin("harmonic")
    t = np.pi / 2
    fp = flow(h, t, np.array([1.0]), np.array([0.0]))
    assert fp.x[0, 0] == pytest.approx(0.0, abs=1e-8)
    assert fp.xi[0, 0] == pytest.approx(-1.0, abs=1e-8)
    # h = xi^2/2 - x^2/2 along (cos, -sin) integrates to -sin(2t)/4
    assert fp.phase[0] == pytest.approx(-np.sin(2 * t) / 4, abs=1e-8)


def test_group_law_cosine():
    c = builtin("cosine")
    x0, xi0 = np.array([0.4, -1.3]), np.array([0.9, 0.2])
    a = flow(c, 0.1, x0, xi0)
    b = flow(c, 0.1, a.x, a.xi)
    ab = flow(c, 0.2, x0, xi0)
    np.testing.assert_allclose(b.x, ab.x, atol=1e-8)
    np.testing.assert_allclose(b.xi, ab.xi, atol=1e-8)
    np.testing.assert_allclose(a.phase + b.phase, ab.phase, atol=1e-8)


def test_backward_flow_inverts():
    c = builtin("quad_plus_trig")
    a = flow(c, 0.5, np.array([1.0]), np.array([-0.5]))
    b = flow(c, -0.5, a.x, a.xi)
    assert b.x[0, 0] == pytest.approx(1.0, abs=1e-10)
    assert b.xi[0, 0] == pytest.approx(-0.5, abs=1e-10)


def test_flow_det_values():
    for name in ("zero", "harmonic", "cosine"):
        assert flow_det(flow(builtin(name), 0.0, np.array([0.3]), np.array([0.2])))[0] == 1
    assert flow_det(flow(builtin("harmonic"), 1.0, np.array([0.3]), np.array([0.2])))[0] == pytest.approx(1, abs=1e-10)
    rng = np.random.default_rng(9)
    x, xi = rng.uniform(-5, 5, 2)
    assert flow_det(flow(builtin("cosine"), 0.5, np.array([x]), np.array([xi])))[0] == pytest.approx(1, abs=1e-8)
    with pytest.raises(ValueError):
        flow_det(flow(builtin("zero"), 0.3, np.array([0.0]), np.array([0.0]), variational=False))


def test_flow_jacobian_matches_finite_differences():
    c = builtin("cosine", dim=2)
    x0 = np.array([[0.3, -0.8]])
    xi0 = np.array([[1.1, 0.4]])
    fp = flow(c, 0.4, x0, xi0)
    eps = 1e-6
    z0 = np.concatenate([x0, xi0], axis=-1)[0]
    cols = []
    for i in range(4):
        e = np.zeros(4)
        e[i] = eps
        p = flow(c, 0.4, (z0 + e)[None, :2], (z0 + e)[None, 2:], variational=False)
        m = flow(c, 0.4, (z0 - e)[None, :2], (z0 - e)[None, 2:], variational=False)
        cols.append((np.concatenate([p.x, p.xi], -1) - np.concatenate([m.x, m.xi], -1))[0] / (2 * eps))
    np.testing.assert_allclose(fp.J[0], np.array(cols).T, atol=1e-7)


def test_step_budget():
    with pytest.raises(StepBudgetError):
        flow(builtin("harmonic"), 1.0, np.array([0.0]), np.array([1.0]), steps=3)


def test_flow_record_matches_flow():
    c = builtin("cosine")
    x0, xi0 = np.array([[0.2], [1.0]]), np.array([[0.5], [-0.3]])
    rec = flow_record(c, x0, xi0, [0.3, 0.1, 0.0])
    ref = flow(c, 0.3, x0, xi0)
    np.testing.assert_allclose(rec[0][0], ref.x, atol=1e-8)
    np.testing.assert_allclose(rec[0][2], ref.phase, atol=1e-8)
    np.testing.assert_allclose(rec[2][0], x0)
    with pytest.raises(ValueError):
        flow_record(c, x0, xi0, [0.1, -0.1])


def test_scaled_det():
    z = builtin("zero")
    assert np.all(scaled_det(z, 0.37, np.array([0.1, 2.0]), np.array([-1.0, 3.0])) == pytest.approx(1.0, abs=1e-12))
    h = builtin("harmonic")
    assert scaled_det(h, 0.3, np.array([0.7]), np.array([-0.2]))[0] == pytest.approx(np.sin(0.3) / 0.3, abs=1e-8)
    assert np.sin(0.3) / 0.3 == pytest.approx(0.98507, abs=1e-5)
    c = builtin("cosine")
    T2 = compute_T2(c)
    rng = np.random.default_rng(0)
    for t in (-T2, -0.1, 0.05, T2):
        vals = scaled_det(c, t, rng.uniform(-5, 5, 250), rng.uniform(-5, 5, 250))
        assert np.all((vals >= 0.5 - 1e-6) & (vals <= 2 + 1e-6))


def test_check_lemh():
    z = builtin("zero")
    T1 = compute_T1(constant_M(z))
    rng = np.random.default_rng(1)
    tup = rng.uniform(-5, 5, size=(2000, 4))
    rep = check_lemh(z, 0.9 * T1, tup)
    assert rep.ok and rep.count == 2000
    same = np.repeat(rng.uniform(-5, 5, size=(10, 2)), 2, axis=0).reshape(10, 4)
    same = np.concatenate([same[:, :2], same[:, :2]], axis=1)
    rep = check_lemh(builtin("cosine"), 0.05, same)
    assert rep.ok and rep.min_slack_x == pytest.approx(0, abs=1e-12)
    with pytest.raises(HorizonError):
        check_lemh(z, 2 * T1, tup)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(["zero", "harmonic", "cosine", "quad_plus_trig", "inverted_harmonic"]),
       st.floats(-1, 1), st.floats(-5, 5), st.floats(-5, 5))
def test_liouville_property(name, t, x, xi):
    fp = flow(builtin(name), t, np.array([x]), np.array([xi]))
    assert abs(flow_det(fp)[0] - 1) <= 1e-8


@settings(max_examples=15, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-3, 3), st.floats(-3, 3))
def test_energy_conservation_property(t, x, xi):
    c = builtin("cosine")
    fp = flow(c, t, np.array([x]), np.array([xi]))
    e0 = xi ** 2 / 2 + np.cos(x)
    e1 = fp.xi[0, 0] ** 2 / 2 + np.cos(fp.x[0, 0])
    assert abs(e1 - e0) < 1e-7
