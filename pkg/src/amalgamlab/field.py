"""Truncated periodic grids, sampled fields and the continuum-normalized DFT.

The real line (or plane) is replaced by the box ``[-L, L)^n`` sampled at
``x_j = -L + j h`` with ``h = 2L/N``.  The dual grid is ``xi_k = k pi / L`` for
``k in [-N/2, N/2)``.  Transforms carry quadrature weights so that

    fourier(f)(xi)  ~  int f(x) exp(-i x xi) dx
    inv_fourier(F)(x) ~ (2 pi)^{-n} int F(xi) exp(i x xi) dxi
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

DEFAULT_TAIL_TOL = 1e-10


class DecayViolation(ValueError):
    """Raised when a field carries too much mass near the edge of its box."""


class GridMismatch(ValueError):
    """Raised when two objects live on different grids."""


@dataclass(frozen=True)
class GridSpec:
    dim: int
    half_width: float
    points_per_axis: int

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.points_per_axis

    @property
    def dual_spacing(self) -> float:
        return np.pi / self.half_width

    @property
    def band(self) -> float:
        """Nyquist frequency pi/h."""
        return np.pi / self.spacing

    @property
    def shape(self) -> tuple:
        return (self.points_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_axis ** self.dim

    @property
    def cell(self) -> float:
        return self.spacing ** self.dim

    @property
    def dual_cell(self) -> float:
        return self.dual_spacing ** self.dim

    @property
    def axis(self) -> np.ndarray:
        return -self.half_width + self.spacing * np.arange(self.points_per_axis)

    @property
    def dual_axis(self) -> np.ndarray:
        N = self.points_per_axis
        return self.dual_spacing * np.arange(-N // 2, N // 2)

    def coords(self, domain: str = "x") -> np.ndarray:
        """Coordinates of every node, shape ``shape + (dim,)``."""
        ax = self.axis if domain == "x" else self.dual_axis
        mesh = np.meshgrid(*([ax] * self.dim), indexing="ij")
        return np.stack(mesh, axis=-1)

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.dim, self.half_width, self.points_per_axis * factor)


def make_grid(dim: int, N: int, L: float) -> GridSpec:
    """Validated constructor for :class:`GridSpec`."""
    if dim not in (1, 2):
        raise ValueError(f"unsupported dimension {dim}")
    if int(N) != N or N % 2 or N < 8:
        raise ValueError(f"N must be an even integer >= 8, got {N}")
    if not np.isfinite(L) or L <= 0:
        raise ValueError(f"half width must be positive, got {L}")
    return GridSpec(int(dim), float(L), int(N))


def edge_mask(grid: GridSpec, domain: str = "x") -> np.ndarray:
    """Nodes within a quarter box of the boundary (|coord| > 3/4 of the extent)."""
    extent = grid.half_width if domain == "x" else grid.band
    c = np.abs(grid.coords(domain))
    return np.any(c > 0.75 * extent, axis=-1)


def tail_fraction(values: np.ndarray, mask: np.ndarray) -> float:
    w = np.abs(values) ** 2
    total = w.sum()
    if total == 0.0:
        return 0.0
    return float(w[mask].sum() / total)


@dataclass(frozen=True, eq=False)
class SampledField:
    """Complex samples on a grid.

    ``domain`` is ``"x"`` for physical space or ``"xi"`` for the dual grid.
    """

    grid: GridSpec
    values: np.ndarray
    domain: str = "x"
    tail: float = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        if self.domain not in ("x", "xi"):
            raise ValueError(f"unknown domain {self.domain!r}")
        v = v.copy() if v is self.values else v
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "tail", tail_fraction(v, edge_mask(self.grid, self.domain)))

    @property
    def weight(self) -> float:
        return self.grid.cell if self.domain == "x" else self.grid.dual_cell

    def certify(self, tol: float = DEFAULT_TAIL_TOL, what: str = "field") -> "SampledField":
        if self.tail > tol:
            raise DecayViolation(f"{what}: tail fraction {self.tail:.3e} exceeds {tol:.1e}")
        return self

    def like(self, values) -> "SampledField":
        return SampledField(self.grid, values, self.domain)

    def __add__(self, other):
        _same_grid(self, other)
        return self.like(self.values + other.values)

    def __sub__(self, other):
        _same_grid(self, other)
        return self.like(self.values - other.values)

    def __mul__(self, c):
        return self.like(self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self.like(-self.values)


def _same_grid(a: SampledField, b: SampledField):
    if a.grid != b.grid or a.domain != b.domain:
        raise GridMismatch("fields live on different grids")


@dataclass(frozen=True)
class ClosedForm:
    """Test-function factory: (modulated) Gaussians or a custom callable.

    The Gaussian family is ``amplitude * exp(-|x-c|^2/(2 width^2) + i momentum.x)``.
    A custom form receives coordinates of shape ``(..., n)``.
    """

    tag: str = "gaussian"
    center: tuple = (0.0,)
    width: float = 1.0
    momentum: tuple = (0.0,)
    amplitude: complex = 1.0
    func: Optional[Callable] = None

    def __post_init__(self):
        if self.tag not in ("gaussian", "modulated-gaussian", "custom"):
            raise ValueError(f"unknown closed form {self.tag!r}")
        if self.tag == "custom" and self.func is None:
            raise ValueError("custom closed form needs a callable")
        if not self.width > 0:
            raise ValueError("width must be positive")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.tag == "custom":
            return np.asarray(self.func(x), dtype=complex)
        n = x.shape[-1]
        c = np.broadcast_to(np.asarray(self.center, dtype=float), (n,))
        k = np.broadcast_to(np.asarray(self.momentum, dtype=float), (n,))
        r2 = np.sum((x - c) ** 2, axis=-1)
        out = self.amplitude * np.exp(-r2 / (2.0 * self.width ** 2))
        if self.tag == "modulated-gaussian" or np.any(k != 0):
            out = out * np.exp(1j * (x @ k))
        return out


def gaussian(center=0.0, width=1.0, momentum=0.0, dim=1, normalized=True) -> ClosedForm:
    """Gaussian closed form, L^2-normalized by default."""
    amp = (np.pi * width ** 2) ** (-dim / 4) if normalized else 1.0
    c = tuple(np.broadcast_to(np.asarray(center, float), (dim,)))
    k = tuple(np.broadcast_to(np.asarray(momentum, float), (dim,)))
    tag = "modulated-gaussian" if any(k) else "gaussian"
    return ClosedForm(tag, c, float(width), k, amp)


def sample(grid: GridSpec, form: Callable, tail_tol: float = DEFAULT_TAIL_TOL) -> SampledField:
    """Evaluate ``form`` at every node and certify its decay."""
    f = SampledField(grid, form(grid.coords()))
    return f.certify(tail_tol, "sample")


def inner_product(f: SampledField, g: SampledField) -> complex:
    """Riemann-weighted L^2 pairing, conjugate-linear in ``f``."""
    _same_grid(f, g)
    return complex(f.weight * np.vdot(f.values, g.values))


def lp_norm(f: SampledField, p: float) -> float:
    if not p >= 1:
        raise ValueError(f"exponent must be >= 1, got {p}")
    a = np.abs(f.values)
    if np.isinf(p):
        return float(a.max())
    return float((f.weight * np.sum(a ** p)) ** (1.0 / p))


def _parity(grid: GridSpec) -> np.ndarray:
    """exp(i L xi_m) = (-1)^m on the dual grid, broadcast over all axes."""
    N = grid.points_per_axis
    s = 1.0 - 2.0 * (np.arange(-N // 2, N // 2) % 2)
    out = np.ones(grid.shape)
    for ax in range(grid.dim):
        shp = [1] * grid.dim
        shp[ax] = N
        out = out * s.reshape(shp)
    return out


def fourier(f: SampledField) -> SampledField:
    if f.domain != "x":
        raise ValueError("fourier expects a physical-space field")
    g = f.grid
    F = np.fft.fftshift(np.fft.fftn(f.values)) * _parity(g) * g.cell
    return SampledField(g, F, "xi")


def inv_fourier(F: SampledField) -> SampledField:
    if F.domain != "xi":
        raise ValueError("inv_fourier expects a dual-grid field")
    g = F.grid
    f = np.fft.ifftn(np.fft.ifftshift(F.values * _parity(g))) / g.cell
    return SampledField(g, f, "x")


def fourier_multiplier(f: SampledField, symbol: np.ndarray) -> SampledField:
    """Apply a multiplier given on the dual grid; result in physical space."""
    F = fourier(f)
    return inv_fourier(F.like(F.values * symbol))


def convolve(f: SampledField, u: SampledField) -> SampledField:
    """Linear convolution ``int f(x-y) u(y) dy`` for well-localized inputs."""
    _same_grid(f, u)
    a, b = fourier(f), fourier(u)
    return inv_fourier(a.like(a.values * b.values))
