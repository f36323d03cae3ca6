"""Mixed Lebesgue, Lorentz and Wiener amalgam norms.

``W^{p,q} = W(FL^q, L^p)`` is normed by the outer ``L^p_x`` norm of the inner
``L^q_xi`` norm of ``V_g f``.  Inner norms use the dual cell ``(pi/L)^n`` and
outer norms the physical cell ``h^n`` (no ``2 pi`` factors).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .field import DEFAULT_TAIL_TOL, SampledField
from .stft import PhaseSpaceField, RowEngine, Window

_ROW_BLOCK = 1 << 22  # complex entries per block of STFT rows


def _check_exponent(p, name="exponent"):
    if not (p >= 1):
        raise ValueError(f"{name} must lie in [1, inf], got {p}")


def lq_rows(mag: np.ndarray, q: float, weight: float) -> np.ndarray:
    """Weighted ``L^q`` norm along the last axis of nonnegative data."""
    if np.isinf(q):
        return mag.max(axis=-1)
    if q == 1:
        return weight * mag.sum(axis=-1)
    if q == 2:
        return np.sqrt(weight * np.einsum("...k,...k->...", mag, mag))
    return (weight * np.sum(mag ** q, axis=-1)) ** (1.0 / q)


def lp_values(vals: np.ndarray, p: float, weight: float) -> float:
    return float(lq_rows(np.asarray(vals, float), p, weight))


@dataclass(frozen=True)
class WeightedSamples:
    """Magnitudes with the measure of the cell each one occupies."""

    values: np.ndarray
    measures: np.ndarray

    def __post_init__(self):
        v = np.abs(np.asarray(self.values, dtype=float)).ravel()
        m = np.broadcast_to(np.asarray(self.measures, dtype=float), v.shape).ravel()
        if np.any(m <= 0) or not np.all(np.isfinite(m)):
            raise ValueError("cell measures must be positive and finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "measures", m.copy())


def _power_increments(c: np.ndarray, a: float) -> np.ndarray:
    """``c_k^a - c_{k-1}^a`` along the last axis with ``c_0 = 0``, cancellation free."""
    prev = np.concatenate([np.zeros(c.shape[:-1] + (1,)), c[..., :-1]], axis=-1)
    out = np.empty_like(c)
    first = prev == 0
    out[first] = c[first] ** a
    rest = ~first
    out[rest] = prev[rest] ** a * np.expm1(a * np.log1p((c[rest] - prev[rest]) / prev[rest]))
    return out


def _check_lorentz(p, q):
    if p == 1:
        raise ValueError("Lorentz quasi-norm with p = 1 is not supported")
    if not (p > 1):
        raise ValueError(f"Lorentz p must lie in (1, inf], got {p}")
    _check_exponent(q, "Lorentz q")
    if np.isinf(p) and not np.isinf(q):
        raise ValueError("L^{inf,q} with finite q is trivial; use q = inf")


def lorentz_norm(ws: WeightedSamples, p: float, q: float) -> float:
    """Lorentz quasi-norm ``(q/p int [t^{1/p} f*(t)]^q dt/t)^{1/q}``.

    ``f*`` is the step function obtained by sorting magnitudes in decreasing
    order over cumulative cell measures; the ``t`` integral is evaluated in
    closed form on each step.
    """
    _check_lorentz(p, q)
    order = np.lexsort((np.arange(ws.values.size), -ws.values))
    v = ws.values[order]
    c = np.cumsum(ws.measures[order])
    if v.size == 0:
        return 0.0
    if np.isinf(q):
        return float(np.max(v * c ** (0.0 if np.isinf(p) else 1.0 / p)))
    inc = _power_increments(c, q / p)
    return float(np.sum(v ** q * inc) ** (1.0 / q))


def lorentz_rows(mag: np.ndarray, p: float, q: float, mu: float) -> np.ndarray:
    """Row-wise Lorentz quasi-norm for equal cell measure ``mu``."""
    _check_lorentz(p, q)
    v = -np.sort(-mag, axis=-1)
    K = v.shape[-1]
    k = np.arange(1, K + 1, dtype=float)
    if np.isinf(q):
        e = 0.0 if np.isinf(p) else 1.0 / p
        return np.max(v * (k * mu) ** e, axis=-1)
    a = q / p
    inc = mu ** a * _power_increments(k, a)
    if q == 2:
        return np.sqrt(np.einsum("...k,k->...", v * v, inc))
    return np.sum(v ** q * inc, axis=-1) ** (1.0 / q)


def mixed_norm(F: PhaseSpaceField, p: float, q: float) -> float:
    """``|| ||F(x, .)||_{L^q_xi} ||_{L^p_x}``."""
    _check_exponent(p)
    _check_exponent(q)
    g = F.grid
    inner = lq_rows(np.abs(F.values), q, g.dual_cell)
    return lp_values(inner, p, g.cell)


# ---------------------------------------------------------------------------
# amalgam norms computed row by row from the field


def _row_reducer(kind: str, q: float, q2: float):
    if kind == "lp":
        return lambda mag, mu: lq_rows(mag, q, mu)
    return lambda mag, mu: lorentz_rows(mag, q, q2, mu)


class AmalgamEvaluator:
    """Row norms ``x -> ||V_g f(x, .)||`` and their outer norms.

    Parameters
    ----------
    f : SampledField
    window : Window
    inner : tuple
        ``("lp", q)`` for ``L^q_xi`` or ``("lorentz", q, s)`` for ``L^{q,s}_xi``.
    decimation : int
        Evaluate rows on every ``decimation``-th dual node (exact values,
        coarser xi quadrature).
    """

    def __init__(self, f: SampledField, window: Optional[Window] = None, inner=("lp", 1.0),
                 decimation: int = 1, tail_tol: float = DEFAULT_TAIL_TOL):
        window = window or Window(dim=f.grid.dim)
        self.grid = f.grid
        self.engine = RowEngine(f, window, decimation, tail_tol)
        self.mu = self.grid.dual_cell * decimation ** self.grid.dim
        kind = inner[0]
        self._reduce = _row_reducer(kind, inner[1], inner[2] if kind == "lorentz" else None)

    def at(self, xs: np.ndarray) -> np.ndarray:
        """Row norms at arbitrary points ``xs`` (``(M,)`` or ``(M, n)``)."""
        xs = np.asarray(xs, dtype=float)
        M = xs.shape[0]
        P = self.engine.xi_axis.size ** self.grid.dim
        step = max(1, _ROW_BLOCK // P)
        out = np.empty(M)
        for a in range(0, M, step):
            rows = self.engine.rows(xs[a:a + step])
            out[a:a + step] = self._reduce(np.abs(rows), self.mu)
        return out

    def on_grid(self, stride: int = 1):
        """Row norms on the grid (every ``stride``-th node per axis)."""
        g = self.grid
        ax = g.axis[::stride]
        if g.dim == 1:
            return ax[:, None], self.at(ax)
        return self._grid_2d(ax)

    def _grid_2d(self, ax):
        # assemble x1-slabs from separable factors to avoid redundant work
        A, B = self.engine.factor_rows(ax, ax)
        M = ax.size
        vals = np.empty((M, M))
        for i in range(M):
            blk = np.einsum("rp,rkq->kpq", A[:, i], B).reshape(M, -1)
            vals[i] = self._reduce(np.abs(blk), self.mu)
        mesh = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
        return mesh, vals.ravel()

    def outer(self, p: float, stride: int = 1, refine: bool = True) -> float:
        """Outer ``L^p_x`` norm; for ``p = inf`` the grid maximum is refined off-grid."""
        pts, vals = self.on_grid(stride)
        g = self.grid
        if not np.isinf(p):
            return lp_values(vals, p, (g.spacing * stride) ** g.dim)
        best = float(vals.max())
        if not refine or best == 0:
            return best
        i = int(np.argmax(vals))
        x0, hs = pts[i], g.spacing * stride
        if g.dim == 1:
            res = minimize_scalar(lambda x: -self.at(np.array([x]))[0], bounds=(x0[0] - hs, x0[0] + hs),
                                  method="bounded", options={"xatol": 1e-9 * max(1.0, hs)})
            cand = -res.fun
        else:
            res = minimize(lambda x: -self.at(x[None, :])[0], x0, method="Nelder-Mead",
                           options={"xatol": 1e-9, "fatol": 1e-15 * best, "initial_simplex":
                                    np.array([x0, x0 + [hs, 0], x0 + [0, hs]])})
            cand = -res.fun
        return max(best, float(cand))


def amalgam_norm(f: SampledField, p: float, q: float, window: Optional[Window] = None,
                 stride: int = 1, decimation: int = 1, refine: bool = True,
                 tail_tol: float = DEFAULT_TAIL_TOL) -> float:
    """``||f||_{W^{p,q}}`` with ``W^{p,q} = W(FL^q, L^p)``.

    With default arguments this equals ``mixed_norm(stft(f, window), p, q)``
    except for ``p = inf``, where the supremum over ``x`` is refined between
    grid nodes.
    """
    _check_exponent(p)
    _check_exponent(q)
    ev = AmalgamEvaluator(f, window, ("lp", q), decimation, tail_tol)
    return ev.outer(p, stride, refine)


def conjugate(p: float) -> float:
    if p == 1:
        return np.inf
    if np.isinf(p):
        return 1.0
    return p / (p - 1.0)


def amalgam_lorentz_norm(f: SampledField, p: float, window: Optional[Window] = None,
                         lorentz_q: float = 2.0, inner_p: Optional[float] = None,
                         decimation: int = 1, refine: bool = True,
                         tail_tol: float = DEFAULT_TAIL_TOL) -> float:
    """Outer ``L^p_x`` of the inner Lorentz ``L^{p', lorentz_q}_xi`` norm.

    The one dimensional endpoint ``p = inf`` is excluded.
    """
    if f.grid.dim == 1 and np.isinf(p):
        raise ValueError("the one dimensional endpoint (p = inf, r = 4) is not admissible")
    _check_exponent(p)
    pin = conjugate(p) if inner_p is None else inner_p
    ev = AmalgamEvaluator(f, window, ("lorentz", pin, lorentz_q), decimation, tail_tol)
    return ev.outer(p, 1, refine)


def trapezoid_weights(ts: np.ndarray) -> np.ndarray:
    ts = np.asarray(ts, dtype=float)
    if ts.size == 1:
        return np.ones(1)
    d = np.diff(ts)
    w = np.zeros(ts.size)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def time_norm(ts: Sequence[float], values: Sequence[float], rho: float) -> float:
    """Outer ``L^rho_t`` of sampled spatial norms by the trapezoid rule."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty trajectory")
    _check_exponent(rho, "time exponent")
    if np.isinf(rho):
        return float(v.max())
    w = trapezoid_weights(ts)
    return float(np.sum(w * v ** rho) ** (1.0 / rho))


def time_mixed_norm(trajectory, rho: float, spatial_norm: Callable[[SampledField], float]) -> float:
    """``|| ||u(t)||_X ||_{L^rho_t}`` for a list of ``(t, field)`` pairs."""
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    ts = np.array([t for t, _ in trajectory], dtype=float)
    if ts.size > 2:
        d = np.diff(ts)
        if np.max(np.abs(d - d[0])) > 1e-9 * max(1.0, abs(d[0])):
            raise ValueError("trajectory must be sampled on a uniform time grid")
    vals = [spatial_norm(u) for _, u in trajectory]
    return time_norm(ts, vals, rho)
