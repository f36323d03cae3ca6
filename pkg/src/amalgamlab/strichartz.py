"""Admissible pairs and measured dispersive, transported-norm and Strichartz quotients.

Every quantity here is a ratio of discretized norms.  Constants are never
asserted; callers compare measured values across grid refinements.
"""

from __future__ import annotations

import json
import os
from functools import cached_property
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .field import DEFAULT_TAIL_TOL, GridSpec, SampledField, gaussian, lp_norm, sample
from .hamflow import DT_MAX, HorizonError
from .norms import (
    AmalgamEvaluator,
    amalgam_norm,
    conjugate,
    lorentz_rows,
    lq_rows,
    time_norm,
    trapezoid_weights,
)
from .potentials import Potential, compute_T1, compute_T2, constant_M
from .propagate import Source, pullback, splitstep_prop, support_box
from .stft import PhaseSpaceField, Window, evolved_window, stft, stft_points, synthesize

FINITE_BOUND = 1e6
MIN_TIME_SAMPLES = 65


# ---------------------------------------------------------------------------
# admissible pairs


def _inv(p: float) -> float:
    return 0.0 if np.isinf(p) else 1.0 / p


@dataclass(frozen=True)
class AdmissiblePair:
    """Exponents with ``n/p + 2/r = n/2``, ``2 <= p <= inf``, ``4 <= r <= inf``.

    ``p`` is the spatial (amalgam) exponent and ``r`` fixes the time
    exponent ``r / 2``.
    """

    p: float
    r: float
    n: int = 1

    def __post_init__(self):
        p, r, n = float(self.p), float(self.r), int(self.n)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "r", r)
        if n < 1:
            raise ValueError("dimension must be at least 1")
        if not (2 <= p <= np.inf) or not (4 <= r <= np.inf):
            raise ValueError(f"({p}, {r}) outside 2 <= p <= inf, 4 <= r <= inf")
        if abs(n * _inv(p) + 2 * _inv(r) - n / 2) > 1e-12:
            raise ValueError(f"({p}, {r}) is off the scaling line n/p + 2/r = n/2 for n = {n}")
        if n == 1 and np.isinf(p) and r == 4:
            raise ValueError("(n, p, r) = (1, inf, 4) is excluded")

    @property
    def endpoint(self) -> bool:
        return self.n > 1 and self.r == 4 and abs(self.p - 2 * self.n / (self.n - 1)) < 1e-12

    @property
    def time_exponent(self) -> float:
        return self.r / 2

    @property
    def inner(self) -> float:
        return conjugate(self.p)

    def label(self) -> str:
        return f"({self.p:g},{self.r:g})"


def pair_from_p(p: float, n: int = 1) -> AdmissiblePair:
    """The admissible pair with spatial exponent ``p``."""
    rest = 0.5 - _inv(p)
    r = np.inf if rest == 0 else 2.0 / (n * rest)
    return AdmissiblePair(p, r, n)


def admissible_pairs(n: int, count: int) -> list:
    """``count`` pairs along the scaling line, from ``r = 4`` (just above for
    ``n = 1``) up to ``r = inf``; the endpoint is included for ``n > 1``."""
    if n < 1 or count < 1:
        raise ValueError("need n >= 1 and count >= 1")
    # parametrize by theta = 4 / r in (0, 1]; theta = 0 is r = inf
    top = 1.0 if n > 1 else 1.0 - 1.0 / (count + 1)
    thetas = np.linspace(top, 0.0, count) if count > 1 else np.array([top])
    out = []
    for th in thetas:
        r = np.inf if th == 0 else 4.0 / th
        s = 0.5 - 2 * _inv(r) / n
        p = np.inf if s <= 0 else 1.0 / s
        if n > 1 and th == 1.0:
            p = 2.0 * n / (n - 1)
        out.append(AdmissiblePair(p, r, n))
    return out


# ---------------------------------------------------------------------------
# dispersive decay


@dataclass(frozen=True)
class DispersiveFit:
    slope: float
    intercept: float
    times: tuple
    norms: tuple


def dispersive_fit(propagator: Callable[[SampledField, float], SampledField], u0: SampledField,
                   t_list: Sequence[float], window: Optional[Window] = None, stride: int = 1,
                   decimation: int = 1, refine: bool = True) -> DispersiveFit:
    """Least squares fit of ``log ||U(t) u0||_{W^{inf,1}}`` against ``log t``."""
    ts = np.asarray(t_list, dtype=float)
    if ts.size < 4:
        raise ValueError("dispersive fit needs at least 4 sample times")
    if np.any(ts <= 0):
        raise ValueError("sample times must be positive")
    vals = np.array([amalgam_norm(propagator(u0, t), np.inf, 1.0, window, stride=stride,
                                  decimation=decimation, refine=refine) for t in ts])
    slope, intercept = np.polyfit(np.log(ts), np.log(vals), 1)
    return DispersiveFit(float(slope), float(intercept), tuple(ts.tolist()), tuple(vals.tolist()))


# ---------------------------------------------------------------------------
# phase-space test functions and transported L^inf_x L^1_xi norms


@dataclass(frozen=True, eq=False)
class CoherentSum:
    """``F(x, xi) = sum_k c_k exp(-(x - a_k)^2 / (2 w^2) - (xi - b_k)^2 / (2 w^2))``."""

    centers: np.ndarray
    coeffs: np.ndarray
    width: float = 1.0

    def __call__(self, xs, xis) -> np.ndarray:
        xs = np.asarray(xs, dtype=float).ravel()
        xis = np.asarray(xis, dtype=float).ravel()
        out = np.zeros(xs.size, dtype=complex)
        s = 0.5 / self.width ** 2
        for (a, b), c in zip(self.centers, self.coeffs):
            out += c * np.exp(-s * ((xs - a) ** 2 + (xis - b) ** 2))
        return out

    @property
    def box(self):
        r = self.width * np.sqrt(2 * np.log(1e16))
        a, b = self.centers[:, 0], self.centers[:, 1]
        return (a.min() - r, a.max() + r, b.min() - r, b.max() + r)

    def on_grid(self, grid: GridSpec) -> PhaseSpaceField:
        X, K = np.meshgrid(grid.axis, grid.dual_axis, indexing="ij")
        return PhaseSpaceField(grid, self(X, K).reshape(X.shape))

    def __mul__(self, c):
        return CoherentSum(self.centers, self.coeffs * c, self.width)

    __rmul__ = __mul__


def random_coherent(rng: np.random.Generator, count: int = 3, spread: float = 2.0,
                    width: float = 1.0) -> CoherentSum:
    centers = rng.uniform(-spread, spread, size=(count, 2))
    coeffs = rng.normal(size=count) + 1j * rng.normal(size=count)
    return CoherentSum(centers, coeffs, width)


@dataclass(frozen=True, eq=False)
class STFTImage:
    """``V_g f`` as an evaluable phase-space function."""

    f: SampledField
    window: Window

    def __call__(self, xs, xis) -> np.ndarray:
        return stft_points(self.f, self.window, xs, xis, tail_tol=np.inf)

    @cached_property
    def box(self):
        g = self.f.grid
        return support_box(self.on_grid(g).values, g.axis, g.dual_axis)

    def on_grid(self, grid: GridSpec) -> PhaseSpaceField:
        if grid != self.f.grid:
            raise ValueError("STFT image is only available on the grid of its field")
        return stft(self.f, self.window, tail_tol=np.inf)


def _row_l1(F, pot: Potential, t: float, xs: np.ndarray, xis: np.ndarray, mu: float, dt_max: float):
    src = Source(t, F, F.box, with_phase=False)
    vals = pullback(pot, [src], xs, xis, dt_max)
    return lq_rows(np.abs(vals), 1.0, mu)


def transported_sup_l1(F, pot: Potential, t: float, grid: GridSpec, stride: int = 1,
                       decimation: int = 1, refine: bool = True, dt_max: float = 1e-3) -> float:
    """``sup_x int |F(Phi(t)(x, xi))| dxi`` for an evaluable ``F``.

    Rows are taken every ``stride`` grid nodes and the ``xi`` integral on
    every ``decimation``-th dual node; the maximizing row is refined off-grid.
    """
    xs = grid.axis[::stride]
    xis = grid.dual_axis[::decimation]
    mu = grid.dual_spacing * decimation
    rows = _row_l1(F, pot, t, xs, xis, mu, dt_max)
    best = float(rows.max())
    if not refine or best == 0:
        return best
    i = int(np.argmax(rows))
    hs = grid.spacing * stride
    res = minimize_scalar(lambda x: -_row_l1(F, pot, t, np.array([x]), xis, mu, dt_max)[0],
                          bounds=(xs[i] - hs, xs[i] + hs), method="bounded",
                          options={"xatol": 1e-6 * max(1.0, hs)})
    return max(best, float(-res.fun))


def _check_horizon(t: float, bound: float, what: str):
    if abs(t) > bound + 1e-12:
        raise HorizonError(f"|{what}| = {abs(t)} exceeds {bound}")


def lemma4_ratio(potential: Potential, window: Optional[Window], s: float, t: float, f: SampledField,
                 stride: int = 1, decimation: int = 1, refine: bool = True,
                 dt_max: float = 1e-3) -> float:
    """``|t|^n ||(V_{g(s)} f) o Phi(t)||_{L^inf_x L^1_xi} / ||f||_{W^{1,inf}}``."""
    window = window or Window()
    T2 = compute_T2(potential)
    _check_horizon(s, T2, "s")
    _check_horizon(t, T2, "t")
    if t == 0:
        raise ValueError("t must be nonzero")
    n = f.grid.dim
    if n != 1:
        raise NotImplementedError("transported norms are implemented for n = 1")
    den = amalgam_norm(f, 1.0, np.inf, window)
    if den == 0:
        raise ZeroDivisionError("zero data")
    F = STFTImage(f, evolved_window(window, s))
    num = transported_sup_l1(F, potential, t, f.grid, stride, decimation, refine, dt_max)
    return abs(t) ** n * num / den


def lemma3_ratio(potential: Potential, window: Optional[Window], s: float, t: float, F: CoherentSum,
                 grid: GridSpec, stride: int = 1, decimation: int = 1, refine: bool = True,
                 dt_max: float = 1e-3) -> float:
    """``||(V_{g(s)} V_{g(s)}^* F) o Phi(t)|| / ||F o Phi(t)||`` in ``L^inf_x L^1_xi``."""
    window = window or Window()
    T1 = compute_T1(constant_M(potential))
    _check_horizon(s, T1, "s")
    _check_horizon(t, T1, "t")
    if grid.dim != 1:
        raise NotImplementedError("transported norms are implemented for n = 1")
    gs = evolved_window(window, s)
    den = transported_sup_l1(F, potential, t, grid, stride, decimation, refine, dt_max)
    if den == 0:
        raise ZeroDivisionError("zero phase-space field")
    u = SampledField(grid, synthesize(F.on_grid(grid).values, grid, gs))
    num = transported_sup_l1(STFTImage(u, gs), potential, t, grid, stride, decimation, refine, dt_max)
    return num / den


# ---------------------------------------------------------------------------
# Strichartz quotients


@dataclass(frozen=True)
class NormSpec:
    """Spatial norm ``W(FL^q, L^p)`` or its Lorentz-refined variant
    ``W(FL^{q,2}, L^p)``, evaluated on strided rows and decimated columns."""

    p: float
    q: float
    lorentz: bool = False
    stride: int = 1
    decimation: int = 1
    refine: bool = True

    def __call__(self, u: SampledField, window: Optional[Window] = None) -> float:
        inner = ("lorentz", self.q, 2.0) if self.lorentz else ("lp", self.q)
        ev = AmalgamEvaluator(u, window, inner, self.decimation, tail_tol=np.inf)
        return ev.outer(self.p, self.stride, self.refine)


def pair_norm(pair: AdmissiblePair, endpoint_mode: bool = False, stride: int = 1,
              decimation: int = 1) -> NormSpec:
    if endpoint_mode and pair.n == 1:
        raise ValueError("the Lorentz endpoint norm is not defined for n = 1")
    return NormSpec(pair.p, pair.inner, endpoint_mode, stride, decimation)


def time_grid(T: float, samples: int) -> np.ndarray:
    if samples < 2:
        raise ValueError("need at least two time samples")
    return np.linspace(-T, T, samples)


def trajectory(propagator: Callable, u0: SampledField, ts: Sequence[float]) -> list:
    return [(float(t), propagator(u0, float(t))) for t in ts]


def trajectory_quotient(traj, rho: float, norm: Callable[[SampledField], float], data_norm: float) -> float:
    ts = np.array([t for t, _ in traj])
    vals = [norm(u) for _, u in traj]
    return time_norm(ts, vals, rho) / data_norm


def strichartz_quotient(propagator: Callable, u0: SampledField, T: float, pair: AdmissiblePair,
                        endpoint_mode: bool = False, samples: int = MIN_TIME_SAMPLES,
                        stride: int = 1, decimation: int = 1) -> float:
    """``||U(t) u0||_{L^{r/2}_t([-T, T]; W)} / ||u0||_2`` with ``W = W(FL^{p'}, L^p)``
    (or ``W(FL^{p',2}, L^p)`` in endpoint mode) and trapezoid time integration."""
    if samples < MIN_TIME_SAMPLES:
        raise ValueError(f"need at least {MIN_TIME_SAMPLES} time samples")
    norm = pair_norm(pair, endpoint_mode, stride, decimation)
    d = lp_norm(u0, 2)
    if d == 0:
        raise ZeroDivisionError("zero data")
    return trajectory_quotient(trajectory(propagator, u0, time_grid(T, samples)), pair.time_exponent, norm, d)


def strichartz_quotients(propagator: Callable, u0: SampledField, T: float, pairs: Sequence[AdmissiblePair],
                         endpoint_mode: bool = False, samples: int = MIN_TIME_SAMPLES,
                         stride: int = 1, decimation: int = 1) -> list:
    """Quotients for several pairs sharing one trajectory and one set of STFT rows."""
    if samples < MIN_TIME_SAMPLES:
        raise ValueError(f"need at least {MIN_TIME_SAMPLES} time samples")
    norms = [pair_norm(p, endpoint_mode, stride, decimation) for p in pairs]
    d = lp_norm(u0, 2)
    if d == 0:
        raise ZeroDivisionError("zero data")
    ts = time_grid(T, samples)
    vals = np.empty((len(pairs), ts.size))
    for j, t in enumerate(ts):
        u = propagator(u0, float(t))
        rows = _shared_rows(u, norms)
        for i, nm in enumerate(norms):
            vals[i, j] = rows(nm)
    return [time_norm(ts, vals[i], p.time_exponent) / d for i, p in enumerate(pairs)]


def _shared_rows(u: SampledField, norms: Sequence[NormSpec]):
    """Evaluate STFT rows once and reduce them for each norm."""
    stride, dec = norms[0].stride, norms[0].decimation
    if any(nm.stride != stride or nm.decimation != dec for nm in norms):
        raise ValueError("shared rows need a common stride and decimation")
    if any(np.isinf(nm.p) for nm in norms):
        return lambda nm: nm(u)
    ev = AmalgamEvaluator(u, None, ("lp", 2.0), dec, tail_tol=np.inf)
    g = u.grid
    ax = g.axis[::stride]
    if g.dim == 1:
        mags = [np.abs(ev.engine.rows(ax))]
    else:
        A, B = ev.engine.factor_rows(ax, ax)
        mags = [np.abs(np.einsum("rp,rkq->kpq", A[:, i], B).reshape(ax.size, -1)) for i in range(ax.size)]
    cell = (g.spacing * stride) ** g.dim

    def reduce(nm: NormSpec) -> float:
        if nm.lorentz:
            inner = np.concatenate([lorentz_rows(m, nm.q, 2.0, ev.mu) for m in mags])
        else:
            inner = np.concatenate([lq_rows(m, nm.q, ev.mu) for m in mags])
        return float(lq_rows(inner, nm.p, cell))

    return reduce


def _check_trajectory(F_traj, T: float):
    if len(F_traj) < 3:
        raise ValueError("trajectory too short")
    ts = np.array([t for t, _ in F_traj], dtype=float)
    d = np.diff(ts)
    if np.any(d <= 0) or np.max(np.abs(d - d[0])) > 1e-9 * d[0]:
        raise ValueError("trajectory must be sampled on an increasing uniform grid")
    if abs(ts[0] + T) > 1e-9 or abs(ts[-1] - T) > 1e-9:
        raise ValueError("trajectory must span [-T, T]")
    return ts, float(d[0])


def _zero_index(ts):
    k = int(np.argmin(np.abs(ts)))
    if abs(ts[k]) > 1e-9 * max(1.0, abs(ts[1] - ts[0])):
        raise ValueError("trajectory grid must contain t = 0")
    return k


def duhamel_trajectory(potential: Potential, F_traj, dt: float = 1e-3) -> list:
    """``w(t) = int_0^t U(t - s) F(s) ds`` at every trajectory time by the
    trapezoid rule on the sampling grid, marching outward from ``t = 0``."""
    ts = np.array([t for t, _ in F_traj], dtype=float)
    Fs = [f for _, f in F_traj]
    k0 = _zero_index(ts)
    out = [None] * ts.size
    zero = Fs[k0].like(np.zeros(Fs[k0].grid.shape, complex))
    out[k0] = zero
    for direction in (1, -1):
        w = zero
        k = k0
        while 0 <= k + direction < ts.size:
            j = k + direction
            delta = ts[j] - ts[k]
            step = lambda v: splitstep_prop(v, delta, potential, dt=min(dt, abs(delta)), tail_tol=np.inf)
            w = step(w + Fs[k] * (0.5 * delta)) + Fs[j] * (0.5 * delta)
            out[j] = w
            k = j
    return list(zip(ts.tolist(), out))


def retarded_quotient(potential: Potential, F_traj, T: float, pair: AdmissiblePair,
                      dual_pair: AdmissiblePair, dt: float = 1e-3, stride: int = 1,
                      decimation: int = 1) -> float:
    """``||int_0^t U(t - s) F(s) ds||_{L^{r/2} W(FL^{p'}, L^p)}`` over
    ``||F||_{L^{(r~/2)'} W(FL^{p~}, L^{p~'})}``."""
    if not isinstance(pair, AdmissiblePair) or not isinstance(dual_pair, AdmissiblePair):
        raise TypeError("pairs must be AdmissiblePair instances")
    ts, _ = _check_trajectory(F_traj, T)
    den = time_norm(ts, [amalgam_norm(f, conjugate(dual_pair.p), dual_pair.p, stride=stride,
                                      decimation=decimation, tail_tol=np.inf) for _, f in F_traj],
                    conjugate(dual_pair.time_exponent))
    if den == 0:
        return 0.0
    W = duhamel_trajectory(potential, F_traj, dt)
    num = time_norm(ts, [pair_norm(pair, False, stride, decimation)(w) for _, w in W], pair.time_exponent)
    return num / den


def dual_quotient(potential: Potential, F_traj, T: float, pair: AdmissiblePair, dt: float = 1e-3,
                  stride: int = 1, decimation: int = 1) -> float:
    """``||int U(-s) F(s) ds||_2 / ||F||_{L^{(r/2)'} W(FL^p, L^{p'})}``.

    The ``s`` integral uses trapezoid weights and Horner's scheme in
    ``U(-ds)``; the final factor ``U(T)`` is unitary and omitted.
    """
    if not isinstance(pair, AdmissiblePair):
        raise TypeError("pair must be an AdmissiblePair")
    ts, delta = _check_trajectory(F_traj, T)
    Fs = [f for _, f in F_traj]
    den = time_norm(ts, [amalgam_norm(f, conjugate(pair.p), pair.p, stride=stride, decimation=decimation,
                                      tail_tol=np.inf) for f in Fs], conjugate(pair.time_exponent))
    if den == 0:
        return 0.0
    w = trapezoid_weights(ts)
    acc = Fs[-1] * w[-1]
    for k in range(len(Fs) - 2, -1, -1):
        acc = splitstep_prop(acc, -delta, potential, dt=min(dt, delta), tail_tol=np.inf) + Fs[k] * w[k]
    return lp_norm(acc, 2) / den


# ---------------------------------------------------------------------------
# input families and records


def gaussian_family(grid: GridSpec, widths: Sequence[float], momenta: Sequence[float], center: float = 0.0,
                    tail_tol: float = DEFAULT_TAIL_TOL) -> list:
    """Normalized Gaussians ``(label, field)`` over ``widths x momenta``; in two
    dimensions the momentum is applied along the first axis."""
    out = []
    for s in widths:
        for k in momenta:
            mom = k if grid.dim == 1 else (k, 0.0)
            c = center if grid.dim == 1 else (center, center)
            f = sample(grid, gaussian(center=c, width=s, momentum=mom, dim=grid.dim), tail_tol)
            out.append((f"sigma={s:g},xi0={k:g}", f))
    return out


def drift(coarse: float, fine: float) -> float:
    """Relative change between two refinements."""
    scale = max(abs(coarse), abs(fine))
    return 0.0 if scale == 0 else abs(fine - coarse) / scale


def is_finite_measure(value: float, stable: bool = True) -> bool:
    return bool(np.isfinite(value) and value < FINITE_BOUND and stable)


def record_timestamp(configured: Optional[str] = None) -> str:
    """Deterministic stamp: ``SOURCE_DATE_EPOCH`` if set, else the configured value."""
    env = os.environ.get("SOURCE_DATE_EPOCH")
    if env:
        return env
    return configured if configured else "unset"


@dataclass
class ExperimentRecord:
    """One measured quantity with the parameters that reproduce it."""

    experiment: str
    params: dict
    values: dict
    stable: Optional[bool] = None
    timestamp: str = field(default_factory=record_timestamp)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")
