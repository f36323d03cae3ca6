import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amalgamlab import (
    DecayViolation,
    GridMismatch,
    SampledField,
    fourier,
    gaussian,
    inner_product,
    inv_fourier,
    lp_norm,
    make_grid,
    sample,
)
from amalgamlab.field import ClosedForm, convolve, fourier_multiplier


def test_make_grid_small():
    g = make_grid(1, 8, np.pi)
    assert g.spacing == pytest.approx(np.pi / 4, rel=1e-15)
    assert g.dual_spacing == pytest.approx(1.0, rel=1e-15)
    np.testing.assert_allclose(g.dual_axis, np.arange(-4, 4), atol=1e-14)
    np.testing.assert_allclose(g.axis, -np.pi + np.arange(8) * np.pi / 4, atol=1e-15)


def test_make_grid_spacing():
    assert make_grid(1, 1024, 20 * np.pi).spacing == pytest.approx(5 * np.pi / 128, rel=1e-15)
    g = make_grid(2, 64, 8 * np.pi)
    assert g.shape == (64, 64) and g.size == 64 ** 2
    assert g.spacing == pytest.approx(np.pi / 4, rel=1e-15)


@pytest.mark.parametrize("args", [(1, 7, 1.0), (1, 8, 0.0), (1, 8, -1.0), (3, 8, 1.0), (1, 0, 1.0)])
def test_make_grid_rejects(args):
    with pytest.raises(ValueError):
        make_grid(*args)


@given(st.integers(1, 2), st.integers(4, 256).map(lambda k: 2 * k), st.floats(0.1, 1e3))
def test_grid_duality(dim, N, L):
    g = make_grid(dim, N, L)
    assert g.spacing * g.dual_spacing * N == pytest.approx(2 * np.pi, rel=1e-13)


def test_gaussian_tail(grid1):
    f = sample(grid1, gaussian(0.0, 1.0))
    assert f.tail < 1e-30


def test_boundary_gaussian_rejected(grid1):
    with pytest.raises(DecayViolation):
        sample(grid1, gaussian(grid1.half_width - 0.1, 1.0))


def test_modulation_keeps_modulus(grid1):
    a = sample(grid1, gaussian(0.0, 1.0))
    b = sample(grid1, gaussian(0.0, 1.0, 3.0))
    np.testing.assert_allclose(np.abs(b.values), np.abs(a.values), rtol=1e-14, atol=0)


def test_nonfinite_rejected(small_grid):
    v = np.zeros(small_grid.shape, complex)
    v[3] = np.nan
    with pytest.raises(ValueError):
        SampledField(small_grid, v)


def test_inner_product(grid1):
    f = sample(grid1, gaussian(0.3, 1.2, 0.7))
    g = sample(grid1, gaussian(-0.5, 0.8, -1.0))
    ff = inner_product(f, f)
    assert ff.real >= 0 and abs(ff.imag) < 1e-15
    assert inner_product(g, f) == pytest.approx(np.conj(inner_product(f, g)), abs=1e-15)
    unit = sample(grid1, gaussian(0.0, 1.0))
    assert inner_product(unit, unit).real == pytest.approx(1.0, abs=1e-12)


def test_inner_product_closed_form(grid1):
    # <g_a, g_b> for two real Gaussians of width 1: exp(-(a-b)^2/4)
    f = sample(grid1, gaussian(0.0, 1.0))
    g = sample(grid1, gaussian(1.5, 1.0))
    assert inner_product(f, g).real == pytest.approx(np.exp(-1.5 ** 2 / 4), abs=1e-13)


def test_grid_mismatch(grid1, small_grid):
    with pytest.raises(GridMismatch):
        inner_product(sample(grid1, gaussian()), sample(small_grid, gaussian()))


def test_lp_norm(grid1):
    f = sample(grid1, gaussian(normalized=False))
    assert lp_norm(f, 2) == pytest.approx(np.pi ** 0.25, abs=1e-10)
    assert lp_norm(f, np.inf) == pytest.approx(1.0, abs=1e-15)
    # int exp(-x^2/2) dx = sqrt(2 pi)
    assert lp_norm(f, 1) == pytest.approx(np.sqrt(2 * np.pi), abs=1e-10)
    c = 2 + 1j
    assert lp_norm(f.like(c * f.values), 3) == pytest.approx(abs(c) * lp_norm(f, 3), rel=1e-14)
    with pytest.raises(ValueError):
        lp_norm(f, 0.5)


def test_fourier_gaussian(grid1):
    f = sample(grid1, gaussian(normalized=False))
    F = fourier(f)
    assert F.domain == "xi"
    xi = grid1.dual_axis
    err = np.max(np.abs(F.values - np.sqrt(2 * np.pi) * np.exp(-xi ** 2 / 2)))
    assert err <= 1e-10


def test_fourier_shift_phase(grid1):
    # translation by a multiplies the transform by exp(-i a xi)
    a = 1.25
    f = sample(grid1, gaussian(0.0, 1.0))
    g = sample(grid1, gaussian(a, 1.0))
    xi = grid1.dual_axis
    np.testing.assert_allclose(fourier(g).values, np.exp(-1j * a * xi) * fourier(f).values, atol=1e-12)


def test_fourier_roundtrip_and_plancherel(grid1):
    f = sample(grid1, gaussian(0.4, 1.3, 2.0))
    back = inv_fourier(fourier(f))
    assert back.domain == "x"
    assert np.linalg.norm(back.values - f.values) / np.linalg.norm(f.values) <= 1e-12
    F = fourier(f)
    assert lp_norm(F, 2) ** 2 == pytest.approx(2 * np.pi * lp_norm(f, 2) ** 2, rel=1e-10)


def test_fourier_2d():
    g = make_grid(2, 128, 8 * np.pi)
    f = sample(g, gaussian((0.5, -0.5), 1.0, dim=2, normalized=False))
    F = fourier(f)
    xi = g.coords("xi")
    ref = 2 * np.pi * np.exp(-np.sum(xi ** 2, -1) / 2 - 1j * (xi[..., 0] * 0.5 - xi[..., 1] * 0.5))
    assert np.max(np.abs(F.values - ref)) < 1e-10
    assert lp_norm(F, 2) ** 2 == pytest.approx((2 * np.pi) ** 2 * lp_norm(f, 2) ** 2, rel=1e-10)


def test_fourier_domain_checks(grid1):
    f = sample(grid1, gaussian())
    with pytest.raises(ValueError):
        inv_fourier(f)
    with pytest.raises(ValueError):
        fourier(fourier(f))


def test_multiplier_and_convolution(grid1):
    f = sample(grid1, gaussian(normalized=False))
    xi = grid1.dual_axis
    # the identity multiplier
    np.testing.assert_allclose(fourier_multiplier(f, np.ones_like(xi)).values, f.values, atol=1e-14)
    # e^{-x^2/2} * e^{-x^2/2} = sqrt(pi) e^{-x^2/4}
    c = convolve(f, f)
    x = grid1.axis
    np.testing.assert_allclose(c.values, np.sqrt(np.pi) * np.exp(-x ** 2 / 4), atol=1e-10)


def test_custom_closed_form(small_grid):
    f = sample(small_grid, ClosedForm("custom", func=lambda x: np.exp(-x[..., 0] ** 4)))
    assert lp_norm(f, np.inf) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ClosedForm("custom")
    with pytest.raises(ValueError):
        ClosedForm("gaussian", width=0.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(0.6, 2.0), st.floats(-4, 4), st.floats(-3, 3), st.floats(-3, 3))
def test_plancherel_property(c, w, k, ar, ai):
    g = make_grid(1, 512, 12 * np.pi)
    f = sample(g, gaussian(c, w, k))
    f = f.like((ar + 1j * ai) * f.values)
    assert lp_norm(fourier(f), 2) ** 2 == pytest.approx(2 * np.pi * lp_norm(f, 2) ** 2, rel=1e-10, abs=1e-300)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(0.6, 2.0), st.floats(-4, 4), st.floats(1, 8))
def test_lp_homogeneity_property(c, w, k, p):
    g = make_grid(1, 256, 8 * np.pi)
    f = sample(g, gaussian(c, w, k))
    assert lp_norm(f.like(-3j * f.values), p) == pytest.approx(3 * lp_norm(f, p), rel=1e-13)
