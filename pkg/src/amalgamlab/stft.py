"""Short-time Fourier transform with Gaussian windows.

    V_g f(x, xi) = h^n sum_y conj(g(y - x)) f(y) exp(-i y.xi)
    V_g^* F(x)   = h^n (pi/L)^n (2 pi)^{-n} sum_{y, xi} g(x - y) F(y, xi) exp(i x.xi)

The window ``g(t) = exp(i t Delta / 2) g`` of a Gaussian stays Gaussian with
complex width, so every window evaluation is closed form.  Two engines are
provided:

* a row engine, which evaluates ``V_g f(x, .)`` on the whole dual grid for
  arbitrary ``x`` by one FFT per row (optionally on a decimated dual grid);
* a point engine, which evaluates ``V_g f`` at scattered ``(x, xi)`` by a
  direct windowed sum.  The Gaussian chirp ``exp(-kappa (delta + m h)^2 - i y xi)``
  factors as ``A B^m C_m`` and the sum is done by Horner's rule, so no
  transcendental function is evaluated per summand.

In two dimensions the field is split by SVD into separable terms and each
factor is transformed with the one dimensional engines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .field import (
    DEFAULT_TAIL_TOL,
    GridMismatch,
    GridSpec,
    SampledField,
    edge_mask,
    fourier_multiplier,
    make_grid,
    tail_fraction,
)

WINDOW_HORIZON = 2.0
WINDOW_EPS = 1e-18  # relative window magnitude below which summands are dropped
SVD_RTOL = 1e-15
_CHUNK = 1 << 21  # complex elements per temporary block


class BandViolation(ValueError):
    """Raised when phase-space data carries mass near the Nyquist band edge."""


class ConventionError(RuntimeError):
    """Raised when two independent evaluations of the same object disagree."""


@dataclass(frozen=True)
class Window:
    """Gaussian window ``(pi s^2)^{-n/4} exp(-|y|^2 / (2 s^2))`` evolved to ``time``.

    Parameters
    ----------
    width : float
        Base width ``s``; ``s = 1`` gives the standard normalized window.
    time : float
        Free Schroedinger time; the profile becomes
        ``(pi s^2)^{-n/4} (s^2 / (s^2 + i t))^{n/2} exp(-|y|^2 / (2 (s^2 + i t)))``.
    dim : int
    """

    width: float = 1.0
    time: float = 0.0
    dim: int = 1

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("window width must be positive")

    @property
    def kappa(self) -> complex:
        return 1.0 / (2.0 * (self.width ** 2 + 1j * self.time))

    @property
    def amplitude1(self) -> complex:
        """One dimensional prefactor."""
        s2 = self.width ** 2
        return (np.pi * s2) ** -0.25 * np.sqrt(s2 / (s2 + 1j * self.time))

    @property
    def amplitude(self) -> complex:
        return self.amplitude1 ** self.dim

    def profile1(self, y) -> np.ndarray:
        """One dimensional factor evaluated at real ``y`` (any shape)."""
        y = np.asarray(y, dtype=float)
        return self.amplitude1 * np.exp(-self.kappa * y * y)

    def __call__(self, y) -> np.ndarray:
        """Evaluate at points of shape ``(..., dim)``."""
        y = np.asarray(y, dtype=float)
        r2 = np.sum(y * y, axis=-1)
        return self.amplitude * np.exp(-self.kappa * r2)

    def fourier(self, eta) -> np.ndarray:
        eta = np.asarray(eta, dtype=float)
        s2 = self.width ** 2
        n = self.dim
        pref = (np.pi * s2) ** (-n / 4) * (2 * np.pi * s2) ** (n / 2)
        return pref * np.exp(-(s2 + 1j * self.time) * np.sum(eta * eta, axis=-1) / 2)

    def evolved(self, t: float) -> "Window":
        return Window(self.width, self.time + t, self.dim)

    def radius(self, eps: float = WINDOW_EPS) -> float:
        """Distance beyond which ``|g| < eps * |g(0)|``."""
        return float(np.sqrt(np.log(1.0 / eps) / self.kappa.real))

    def sampled(self, grid: GridSpec) -> SampledField:
        if grid.dim != self.dim:
            raise GridMismatch("window and grid dimensions differ")
        return SampledField(grid, self(grid.coords()))


def _check_grid(t: float, dim: int) -> GridSpec:
    # box large enough for g(t) with |t| up to the horizon, band wide enough for its spectrum
    if dim == 1:
        return make_grid(1, 512, 16 * np.pi)
    return make_grid(2, 128, 6 * np.pi)


@lru_cache(maxsize=256)
def _cross_check(width: float, t0: float, t: float, dim: int) -> float:
    grid = _check_grid(t, dim)
    base = Window(width, t0, dim)
    xi = grid.coords("xi")
    symbol = np.exp(-0.5j * t * np.sum(xi * xi, axis=-1))
    spectral = fourier_multiplier(base.sampled(grid), symbol).values
    closed = base.evolved(t).sampled(grid).values
    return float(np.max(np.abs(spectral - closed)))


def evolved_window(window: Window, t: float, horizon: float = WINDOW_HORIZON,
                   tol: float = 1e-10) -> Window:
    """``exp(i t Delta / 2)`` applied to ``window``.

    The closed form is returned; it is cross-checked against spectral
    propagation of the sampled window and a disagreement above ``tol``
    raises :class:`ConventionError`.
    """
    if abs(window.time + t) > horizon:
        raise ValueError(f"window time {window.time + t} beyond horizon {horizon}")
    if t == 0:
        return window
    err = _cross_check(window.width, window.time, float(t), window.dim)
    if err > tol:
        raise ConventionError(f"evolved window paths disagree by {err:.3e}")
    return window.evolved(t)


@dataclass(frozen=True, eq=False)
class PhaseSpaceField:
    """Samples of a function of ``(x, xi)`` on grid x dual grid.

    ``values`` has shape ``(N^n, N^n)``: rows index x nodes, columns index
    dual nodes, both flattened in C order.
    """

    grid: GridSpec
    values: np.ndarray
    band_tail: float = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        n = self.grid.size
        if v.shape != (n, n):
            raise ValueError(f"phase-space values must have shape {(n, n)}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("phase-space field contains non-finite values")
        v = v.copy() if v is self.values else v
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        mask = np.broadcast_to(edge_mask(self.grid, "xi").ravel(), v.shape)
        object.__setattr__(self, "band_tail", tail_fraction(v, mask))

    @property
    def x_nodes(self) -> np.ndarray:
        return self.grid.coords("x").reshape(-1, self.grid.dim)

    @property
    def xi_nodes(self) -> np.ndarray:
        return self.grid.coords("xi").reshape(-1, self.grid.dim)

    @property
    def pairing_weight(self) -> float:
        g = self.grid
        return g.cell * g.dual_cell / (2 * np.pi) ** g.dim

    def like(self, values) -> "PhaseSpaceField":
        return PhaseSpaceField(self.grid, values)

    def __add__(self, other):
        if other.grid != self.grid:
            raise GridMismatch("phase-space fields on different grids")
        return self.like(self.values + other.values)

    def __sub__(self, other):
        if other.grid != self.grid:
            raise GridMismatch("phase-space fields on different grids")
        return self.like(self.values - other.values)

    def __mul__(self, c):
        return self.like(self.values * c)

    __rmul__ = __mul__


def phase_inner(F: PhaseSpaceField, G: PhaseSpaceField) -> complex:
    """Phase-space pairing with weight ``h^n (pi/L)^n / (2 pi)^n``."""
    if F.grid != G.grid:
        raise GridMismatch("phase-space fields on different grids")
    return complex(F.pairing_weight * np.vdot(F.values, G.values))


# ---------------------------------------------------------------------------
# one dimensional engines


def decimated_dual_axis(grid: GridSpec, decimation: int = 1) -> np.ndarray:
    N = grid.points_per_axis
    if N % decimation:
        raise ValueError("decimation must divide N")
    P = N // decimation
    return decimation * grid.dual_spacing * np.arange(-P // 2, P // 2)


def _rows_1d(u: np.ndarray, grid: GridSpec, window: Window, xs: np.ndarray,
             decimation: int = 1) -> np.ndarray:
    """``V_g u(x, xi)`` for arbitrary rows ``xs`` and the (decimated) dual grid."""
    N, h, L = grid.points_per_axis, grid.spacing, grid.half_width
    P = N // decimation
    xs = np.asarray(xs, dtype=float).ravel()
    R = window.radius()
    W = min(int(np.ceil(2 * R / h)) + 1, N)
    c_amp = np.conj(window.amplitude1)
    kap = np.conj(window.kappa)
    sign = 1.0 - 2.0 * ((decimation * np.arange(-P // 2, P // 2)) % 2)
    out = np.empty((xs.size, P), dtype=complex)
    step = max(1, _CHUNK // max(P, W))
    m = np.arange(W)
    for a in range(0, xs.size, step):
        x = xs[a:a + step]
        j0 = np.ceil((x - R + L) / h).astype(np.int64)
        j0 = np.clip(j0, 0, N - W)
        idx = j0[:, None] + m[None, :]
        d = (-L + idx * h) - x[:, None]
        seg = c_amp * np.exp(-kap * d * d) * u[idx]
        buf = np.zeros((x.size, P), dtype=complex)
        if W <= P:
            buf[np.arange(x.size)[:, None], idx % P] = seg
        else:
            full = np.zeros((x.size, N), dtype=complex)
            full[np.arange(x.size)[:, None], idx] = seg
            buf = full.reshape(x.size, decimation, P).sum(axis=1)
        out[a:a + step] = np.fft.fftshift(np.fft.fft(buf, axis=1), axes=1) * (sign * h)
    return out


def _points_1d(u: np.ndarray, grid: GridSpec, window: Window, xs: np.ndarray,
               xis: np.ndarray, weight: Optional[tuple] = None) -> np.ndarray:
    """Windowed sums at scattered ``(x, xi)``.

    ``weight = (Vy, Vx, dVx)`` multiplies each summand by the first order
    Taylor remainder ``Vy[j] - Vx - dVx (y_j - x)``.
    """
    N, h, L = grid.points_per_axis, grid.spacing, grid.half_width
    xs = np.asarray(xs, dtype=float).ravel()
    xis = np.asarray(xis, dtype=float).ravel()
    R = window.radius()
    W = int(np.ceil(2 * R / h)) + 1
    kap = np.conj(window.kappa)
    C = np.exp(-kap * (h * np.arange(W)) ** 2)
    upad = np.concatenate([np.zeros(W, complex), np.asarray(u, complex), np.zeros(W, complex)])
    if weight is not None:
        Vy_all, Vx_all, dVx_all = weight
        Vpad = np.concatenate([np.zeros(W), np.asarray(Vy_all, float), np.zeros(W)])
    out = np.empty(xs.size, dtype=complex)
    step = 1 << 17
    for a in range(0, xs.size, step):
        x, xi = xs[a:a + step], xis[a:a + step]
        j0 = np.ceil((x - R + L) / h).astype(np.int64)
        y0 = -L + j0 * h
        delta = y0 - x
        A = np.exp(-kap * delta * delta - 1j * y0 * xi)
        B = np.exp(-2 * kap * delta * h - 1j * h * xi)
        # windows lying entirely outside the box sum to zero
        inside = (j0 > -W) & (j0 < N)
        base = np.where(inside, j0, -W) + W
        acc = np.zeros(x.size, dtype=complex)
        if weight is None:
            for mm in range(W - 1, -1, -1):
                acc = acc * B + C[mm] * upad[base + mm]
        else:
            Vx, dVx = Vx_all[a:a + step], dVx_all[a:a + step]
            r0 = Vx + dVx * delta
            for mm in range(W - 1, -1, -1):
                rem = Vpad[base + mm] - r0 - dVx * (mm * h)
                acc = acc * B + (C[mm] * upad[base + mm]) * rem
        out[a:a + step] = np.where(inside, (h * np.conj(window.amplitude1)) * A * acc, 0)
    return out


# ---------------------------------------------------------------------------
# separable splitting for two dimensions


def _separable_terms(u: np.ndarray, rtol: float = SVD_RTOL):
    """Rank-revealing split ``u[y1, y2] = sum_r a_r[y1] b_r[y2]``."""
    U, s, Vh = np.linalg.svd(u)
    if s[0] == 0:
        return np.zeros((1, u.shape[0]), complex), np.zeros((1, u.shape[1]), complex)
    keep = s > rtol * s[0]
    return (U[:, keep] * s[keep]).T, Vh[keep]


def _window_1d(window: Window) -> Window:
    return Window(window.width, window.time, 1)


def _grid_1d(grid: GridSpec) -> GridSpec:
    return GridSpec(1, grid.half_width, grid.points_per_axis)


def _prep(f: SampledField, window: Window, tail_tol: float):
    if f.domain != "x":
        raise ValueError("STFT expects a physical-space field")
    if window.dim != f.grid.dim:
        raise GridMismatch("window and field dimensions differ")
    f.certify(tail_tol, "stft input")


class RowEngine:
    """Reusable evaluator of ``V_g f(x, .)`` for one field and window.

    For ``n = 2`` the separable split is computed once and each requested row
    is assembled from one dimensional rows.
    """

    def __init__(self, f: SampledField, window: Window, decimation: int = 1,
                 tail_tol: float = DEFAULT_TAIL_TOL):
        _prep(f, window, tail_tol)
        self.f, self.window, self.decimation = f, window, decimation
        self.grid = f.grid
        self.xi_axis = decimated_dual_axis(self.grid, decimation)
        if self.grid.dim == 2:
            self._a, self._b = _separable_terms(f.values)
            self._g1 = _grid_1d(self.grid)
            self._w1 = _window_1d(window)

    @property
    def xi_nodes(self) -> np.ndarray:
        ax = self.xi_axis
        mesh = np.meshgrid(*([ax] * self.grid.dim), indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.grid.dim)

    def factor_rows(self, x1: np.ndarray, x2: np.ndarray):
        """Separable factors ``A[r, i, xi1]``, ``B[r, k, xi2]`` (n = 2 only)."""
        A = np.stack([_rows_1d(a, self._g1, self._w1, x1, self.decimation) for a in self._a])
        B = np.stack([_rows_1d(b, self._g1, self._w1, x2, self.decimation) for b in self._b])
        return A, B

    def rows(self, xs: np.ndarray) -> np.ndarray:
        """Rows at points ``xs`` of shape ``(M,)`` (n = 1) or ``(M, 2)``."""
        xs = np.asarray(xs, dtype=float)
        if self.grid.dim == 1:
            return _rows_1d(self.f.values, self.grid, self.window, xs.ravel(), self.decimation)
        xs = xs.reshape(-1, 2)
        u1, i1 = np.unique(xs[:, 0], return_inverse=True)
        u2, i2 = np.unique(xs[:, 1], return_inverse=True)
        A, B = self.factor_rows(u1, u2)
        out = np.einsum("rip,riq->ipq", A[:, i1], B[:, i2])
        return out.reshape(xs.shape[0], -1)


def stft_rows(f: SampledField, window: Window, xs=None, decimation: int = 1,
              tail_tol: float = DEFAULT_TAIL_TOL) -> np.ndarray:
    """Rows ``V_g f(x, .)`` at arbitrary ``xs`` (default: every grid node)."""
    eng = RowEngine(f, window, decimation, tail_tol)
    if xs is None:
        xs = f.grid.coords().reshape(-1, f.grid.dim)
    return eng.rows(xs)


def stft(f: SampledField, window: Optional[Window] = None,
         tail_tol: float = DEFAULT_TAIL_TOL) -> PhaseSpaceField:
    """Full STFT on grid x dual grid."""
    window = window or Window(dim=f.grid.dim)
    return PhaseSpaceField(f.grid, stft_rows(f, window, tail_tol=tail_tol))


def stft_points(f: SampledField, window: Window, xs, xis,
                tail_tol: float = DEFAULT_TAIL_TOL) -> np.ndarray:
    """``V_g f`` at scattered points; ``xs, xis`` of shape ``(P,)`` or ``(P, n)``."""
    _prep(f, window, tail_tol)
    xs = np.asarray(xs, dtype=float)
    xis = np.asarray(xis, dtype=float)
    if f.grid.dim == 1:
        return _points_1d(f.values, f.grid, window, xs.ravel(), xis.ravel())
    xs, xis = xs.reshape(-1, 2), xis.reshape(-1, 2)
    a, b = _separable_terms(f.values)
    g1, w1 = _grid_1d(f.grid), _window_1d(window)
    out = np.zeros(xs.shape[0], dtype=complex)
    for ar, br in zip(a, b):
        out += _points_1d(ar, g1, w1, xs[:, 0], xis[:, 0]) * _points_1d(br, g1, w1, xs[:, 1], xis[:, 1])
    return out


def stft_at(f: SampledField, window: Window, x, xi):
    """``V_g f`` at arbitrary continuum points (scalar in, scalar out)."""
    n = f.grid.dim
    xs = np.asarray(x, dtype=float)
    xis = np.asarray(xi, dtype=float)
    shape = xs.shape if n == 1 else xs.shape[:-1]
    out = stft_points(f, window, xs.reshape(-1, n) if n > 1 else xs, xis.reshape(-1, n) if n > 1 else xis)
    return complex(out[0]) if shape == () else out.reshape(shape)


# ---------------------------------------------------------------------------
# synthesis


def _synth_rows(F: np.ndarray, grid: GridSpec) -> np.ndarray:
    """``sum_xi F(y, xi) exp(i x.xi)`` for every row y and grid x."""
    N, n = grid.points_per_axis, grid.dim
    shp = (F.shape[0],) + grid.shape
    sign = 1.0 - 2.0 * (np.arange(-N // 2, N // 2) % 2)
    par = sign if n == 1 else np.multiply.outer(sign, sign)
    axes = tuple(range(1, n + 1))
    G = np.fft.ifftn(np.fft.ifftshift(F.reshape(shp) * par, axes=axes), axes=axes)
    return G.reshape(F.shape[0], -1) * grid.size


def synthesize(F: np.ndarray, grid: GridSpec, window: Window, kernel=None) -> np.ndarray:
    """Adjoint-type synthesis from raw phase-space values (rows x columns).

    ``kernel(y_rows, x)`` optionally multiplies ``g(x - y)`` pointwise
    (used by Taylor-remainder operators).  Only rows with nonzero data are
    visited.
    """
    n = grid.dim
    active = np.flatnonzero(np.any(F != 0, axis=1))
    out = np.zeros(grid.size, dtype=complex)
    if active.size == 0:
        return out.reshape(grid.shape)
    xs = grid.coords().reshape(-1, n)
    c = grid.cell * grid.dual_cell / (2 * np.pi) ** n
    step = max(1, _CHUNK // grid.size)
    for a in range(0, active.size, step):
        rows = active[a:a + step]
        S = _synth_rows(F[rows], grid)
        y = xs[rows]
        if n == 1:
            Gk = window.profile1(xs[None, :, 0] - y[:, None, 0])
        else:
            Gk = window(xs[None, :, :] - y[:, None, :])
        if kernel is not None:
            Gk = Gk * kernel(y, xs)
        out += np.sum(Gk * S, axis=0)
    return (c * out).reshape(grid.shape)


def adjoint_stft(F: PhaseSpaceField, window: Optional[Window] = None,
                 band_tol: float = DEFAULT_TAIL_TOL) -> SampledField:
    """``V_g^* F`` with the (2 pi)^{-n} weight."""
    window = window or Window(dim=F.grid.dim)
    if F.band_tail > band_tol:
        raise BandViolation(f"band tail {F.band_tail:.3e} exceeds {band_tol:.1e}")
    return SampledField(F.grid, synthesize(F.values, F.grid, window))


def cross_ambiguity_bound_check(s: float, t: float, F: PhaseSpaceField, p: float, q: float,
                                window: Optional[Window] = None) -> float:
    """``||V_{g(s)} V_{g(t)}^* F|| / ||F||`` in ``L^p_x L^q_xi``."""
    from .norms import mixed_norm

    window = window or Window(dim=F.grid.dim)
    den = mixed_norm(F, p, q)
    if den == 0:
        raise ZeroDivisionError("zero phase-space field")
    u = adjoint_stft(F, evolved_window(window, t))
    G = stft(u, evolved_window(window, s), tail_tol=1.0)
    return mixed_norm(G, p, q) / den
