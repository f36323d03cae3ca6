"""Reference propagators, the wave-packet parametrix and its remainder operators.

Conventions: ``U(t) = exp(-i t H)`` with ``H = -Delta/2 + V``.  The parametrix is

    U_0(t) f = V_{g(t)}^* [ M(t, 0) (V_g f) o Phi(-t) ]

with ``M(t, s)(x, xi) = exp(-i int_s^t h(tau - t; x, xi) dtau)``, i.e. the
exponential of ``+i`` times the action accumulated along ``Phi`` over
``[0, s - t]``.  The remainder operator is

    R(t, s) u = V_{g(t)}^* [ M(t, s) (Rt(s) u) o Phi(s - t) ],
    Rt(s) u (x, xi) = int conj(g(s, y - x)) r(x, y) u(y) exp(-i y xi) dy,

where ``r(x, y) = V(y) - V(x) - grad V(x).(y - x)`` is the exact second order
Taylor remainder, so that ``U(t) = U_0(t) - i int_0^t R(t, s) U(s) ds``.

Phase-space data are transported by evaluating the defining ``y``-integrals
at flowed nodes (no interpolation).  Only nodes whose flowed image can meet
the numerical support of the source are visited; the support is the
bounding box of on-grid values above ``SUPPORT_RTOL`` times the maximum.
Operators built on the pullback are implemented for ``n = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .field import DEFAULT_TAIL_TOL, SampledField, fourier, fourier_multiplier, inv_fourier, lp_norm
from .hamflow import DT_MAX, HorizonError, flow, verlet
from .potentials import Potential, builtin, compute_T2, taylor_remainder
from .stft import (
    PhaseSpaceField,
    Window,
    _points_1d,
    evolved_window,
    stft,
    stft_points,
    synthesize,
)

SUPPORT_RTOL = 1e-13
FOCAL_GAP = 0.05


class FocalTimeError(ValueError):
    """Raised near times where a kernel or factorized form degenerates."""


class StepCertificateError(RuntimeError):
    """Raised when halving the split-step size changes the result too much."""


# ---------------------------------------------------------------------------
# exact and reference propagators


def _xi2(grid):
    xi = grid.coords("xi")
    return np.sum(xi * xi, axis=-1)


def free_prop(f: SampledField, t: float, tail_tol: float = DEFAULT_TAIL_TOL) -> SampledField:
    """``exp(i t Delta / 2) f`` via the multiplier ``exp(-i t |xi|^2 / 2)``."""
    if t == 0:
        return f
    out = fourier_multiplier(f, np.exp(-0.5j * t * _xi2(f.grid)))
    return out.certify(tail_tol, "free_prop output")


def translate(f: SampledField, a) -> SampledField:
    """``f(x - a)`` by a spectral phase."""
    xi = f.grid.coords("xi")
    a = np.broadcast_to(np.asarray(a, dtype=float), (f.grid.dim,))
    return fourier_multiplier(f, np.exp(-1j * (xi @ a)))


def stark_prop(f: SampledField, t: float, E, tail_tol: float = DEFAULT_TAIL_TOL) -> SampledField:
    """``exp(-i t (-Delta/2 + E.x))`` as
    ``e^{-i E^2 t^3 / 6} e^{-i t E.x} T_{-E t^2 / 2} e^{i t Delta / 2}``."""
    n = f.grid.dim
    E = np.broadcast_to(np.asarray(E, dtype=float), (n,))
    u = free_prop(f, t, tail_tol=np.inf)
    u = translate(u, -E * t * t / 2)
    x = f.grid.coords()
    vals = np.exp(-1j * float(E @ E) * t ** 3 / 6) * np.exp(-1j * t * (x @ E)) * u.values
    return f.like(vals).certify(tail_tol, "stark_prop output")


def _focal_check(t: float, sign: int, method: str):
    if sign < 0:
        return
    if method == "kernel":
        k = np.round(t / np.pi)
        if k != 0 and abs(t - k * np.pi) < FOCAL_GAP:
            raise FocalTimeError(f"t = {t} within {FOCAL_GAP} of a focal time")
    else:
        k = np.round((t - np.pi) / (2 * np.pi))
        if abs(t - (2 * k + 1) * np.pi) < FOCAL_GAP:
            raise FocalTimeError(f"t = {t} within {FOCAL_GAP} of an odd multiple of pi")


def harmonic_prop(f: SampledField, t: float, sign: int = 1, method: str = "factorized",
                  tail_tol: float = DEFAULT_TAIL_TOL) -> SampledField:
    """``exp(-i t (-Delta/2 + sign |x|^2 / 2))``.

    ``method="factorized"`` uses the exact splitting
    ``e^{-i a|x|^2/2} e^{i b Delta/2} e^{-i a|x|^2/2}`` with
    ``(a, b) = (tan(t/2), sin t)`` (or ``(-tanh(t/2), sinh t)`` for the
    inverted oscillator).  ``method="kernel"`` applies the Mehler kernel by
    direct quadrature (moderate grids, ``0 < |t| < pi``).
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if t == 0:
        return f
    _focal_check(t, sign, method)
    if method == "kernel":
        out = _mehler(f, t, sign)
    elif method == "factorized":
        out = _kdk(f, t, sign)
    else:
        raise ValueError(f"unknown method {method!r}")
    return out.certify(tail_tol, "harmonic_prop output")


def _kdk(f: SampledField, t: float, sign: int) -> SampledField:
    n = f.grid.dim
    factor = 1.0
    if sign > 0:
        k = np.round(t / (2 * np.pi))
        t = t - 2 * np.pi * k
        factor = (-1.0) ** (k * n)
        a, b = np.tan(t / 2), np.sin(t)
    else:
        a, b = -np.tanh(t / 2), np.sinh(t)
    r2 = np.sum(f.grid.coords() ** 2, axis=-1)
    kick = np.exp(-0.5j * a * r2)
    u = f.like(kick * f.values)
    u = fourier_multiplier(u, np.exp(-0.5j * b * _xi2(f.grid)))
    return f.like(factor * kick * u.values)


def _mehler_1d(grid, t: float, sign: int) -> np.ndarray:
    x = grid.axis
    if sign > 0:
        s, c = np.sin(t), np.cos(t)
    else:
        s, c = np.sinh(t), np.cosh(t)
    pref = 1.0 / np.sqrt(2j * np.pi * s + 0j) if s > 0 else np.exp(0.25j * np.pi) / np.sqrt(2 * np.pi * abs(s))
    X, Y = np.meshgrid(x, x, indexing="ij")
    return pref * np.exp(1j * ((X * X + Y * Y) * c - 2 * X * Y) / (2 * s)) * grid.spacing


def _kernel_resolvable(f: SampledField, t: float, sign: int):
    """The kernel oscillates in ``y`` at frequency ``(y cos t - x) / sin t``; it must stay below the band."""
    g = f.grid
    s, c = (np.sin(t), np.cos(t)) if sign > 0 else (np.sinh(t), np.cosh(t))
    mag = np.abs(f.values)
    live = mag > SUPPORT_RTOL * mag.max() if mag.max() > 0 else np.zeros(g.shape, bool)
    ymax = np.max(np.abs(g.coords()[live])) if live.any() else 0.0
    freq = (abs(c) * ymax + g.half_width) / abs(s)
    if freq > g.band:
        raise ValueError(f"kernel frequency {freq:.3g} exceeds the grid band {g.band:.3g}; "
                         "refine the grid or use method='factorized'")


def _mehler(f: SampledField, t: float, sign: int) -> SampledField:
    if sign > 0 and abs(t) >= np.pi:
        raise FocalTimeError("kernel path is implemented for 0 < |t| < pi")
    _kernel_resolvable(f, t, sign)
    K = _mehler_1d(f.grid, t, sign)
    u = f.values
    for ax in range(f.grid.dim):
        u = np.moveaxis(np.tensordot(K, u, axes=([1], [ax])), 0, ax)
    return f.like(u)


def _strang(vals, grid, pot: Potential, dt: float, steps: int):
    half = np.exp(-0.5j * dt * pot.value(grid.coords()))
    full = half * half
    kin = np.exp(-0.5j * dt * _xi2(grid))
    u = vals * half
    for k in range(steps):
        F = fourier(SampledField(grid, u))
        u = inv_fourier(F.like(F.values * kin)).values
        u = u * (full if k < steps - 1 else half)
    return u


def splitstep_prop(f: SampledField, t: float, potential: Potential, dt: float = 1e-3,
                   certify: bool = False, cert_tol: float = 1e-8,
                   tail_tol: float = DEFAULT_TAIL_TOL) -> SampledField:
    """Strang splitting ``e^{-i dt V/2} e^{i dt Delta/2} e^{-i dt V/2}`` iterated.

    The step is shrunk to ``t / ceil(|t| / dt)``.  With ``certify=True`` the
    run is repeated at half the step and a relative L2 change above
    ``cert_tol`` raises :class:`StepCertificateError`.
    """
    if t == 0:
        return f
    steps = max(1, int(np.ceil(abs(t) / dt)))
    u = _strang(f.values, f.grid, potential, t / steps, steps)
    out = f.like(u)
    if certify:
        fine = f.like(_strang(f.values, f.grid, potential, t / (2 * steps), 2 * steps))
        rel = lp_norm(fine - out, 2) / max(lp_norm(f, 2), 1e-300)
        if rel > cert_tol:
            raise StepCertificateError(f"split-step change {rel:.3e} under halving exceeds {cert_tol:.1e}")
        out = fine
    return out.certify(tail_tol, "splitstep_prop output")


def exact_prop(f: SampledField, t: float, potential: Potential, **kw) -> SampledField:
    """Closed-form propagator for the builtins that have one."""
    name = potential.name
    if name == "zero":
        return free_prop(f, t, **kw)
    if name == "stark":
        E = [potential.params.get("E", 0.0)] if f.grid.dim == 1 else \
            [potential.params[f"E{i}"] for i in range(f.grid.dim)]
        return stark_prop(f, t, E, **kw)
    if name == "harmonic":
        return harmonic_prop(f, t, 1, **kw)
    if name == "inverted_harmonic":
        return harmonic_prop(f, t, -1, **kw)
    raise ValueError(f"no closed-form propagator for {name}")


def apply_hamiltonian(f: SampledField, potential: Potential) -> SampledField:
    """``(-Delta/2 + V) f`` with a spectral Laplacian."""
    lap = fourier_multiplier(f, 0.5 * _xi2(f.grid))
    return f.like(lap.values + potential.value(f.grid.coords()) * f.values)


# ---------------------------------------------------------------------------
# Taylor-remainder transform on the grid


def taylor_stft(u: SampledField, s: float, potential: Potential, window: Optional[Window] = None,
                method: str = "quadrature") -> PhaseSpaceField:
    """``Rt(s) u`` on grid x dual grid (``n = 1``).

    ``method="quadrature"`` evaluates the remainder with the 16-point
    Gauss-Legendre rule in ``theta``; ``"direct"`` uses
    ``V(y) - V(x) - V'(x)(y - x)``.
    """
    grid = u.grid
    _require_1d(grid)
    window = window or Window()
    if potential.zero_hessian:
        return PhaseSpaceField(grid, np.zeros((grid.size, grid.size), complex))
    gs = evolved_window(window, s)
    N, h, L = grid.points_per_axis, grid.spacing, grid.half_width
    x = grid.axis
    R = gs.radius()
    W = min(int(np.ceil(2 * R / h)) + 1, N)
    sign = 1.0 - 2.0 * (np.arange(-N // 2, N // 2) % 2)
    out = np.empty((N, N), dtype=complex)
    step = max(1, (1 << 20) // N)
    m = np.arange(W)
    for a in range(0, N, step):
        xr = x[a:a + step]
        j0 = np.clip(np.ceil((xr - R + L) / h).astype(np.int64), 0, N - W)
        idx = j0[:, None] + m[None, :]
        y = x[idx]
        if method == "quadrature":
            rem = taylor_remainder(potential, xr[:, None, None], y[..., None])
        elif method == "direct":
            rem = potential.value(y[..., None]) - potential.value(xr[:, None, None]) - \
                potential.grad(xr[:, None, None])[..., 0] * (y - xr[:, None])
        else:
            raise ValueError(f"unknown method {method!r}")
        seg = np.conj(gs.profile1(y - xr[:, None])) * rem * u.values[idx]
        buf = np.zeros((xr.size, N), dtype=complex)
        buf[np.arange(xr.size)[:, None], idx] = seg
        out[a:a + step] = np.fft.fftshift(np.fft.fft(buf, axis=1), axes=1) * (sign * h)
    return PhaseSpaceField(grid, out)


def _require_1d(grid):
    if grid.dim != 1:
        raise NotImplementedError("parametrix operators are implemented for n = 1")


# ---------------------------------------------------------------------------
# flow pullback engine


@dataclass
class Source:
    """Phase-space function to be read at ``Phi(tau)(node)``.

    ``evaluate(xs, xis)`` returns values at scattered points; ``box`` is
    ``(xlo, xhi, klo, khi)`` outside of which the function is negligible.
    """

    tau: float
    evaluate: Callable
    box: tuple
    weight: complex = 1.0
    with_phase: bool = True


def support_box(values: np.ndarray, xs: np.ndarray, xis: np.ndarray, rtol: float = SUPPORT_RTOL,
                pad: int = 4):
    """Bounding box of on-grid entries above ``rtol`` times the maximum, padded by cells."""
    a = np.abs(values)
    mx = a.max()
    if mx == 0:
        return None
    rows, cols = np.nonzero(a > rtol * mx)
    dx = xs[1] - xs[0] if xs.size > 1 else 1.0
    dk = xis[1] - xis[0] if xis.size > 1 else 1.0
    return (xs[rows.min()] - pad * dx, xs[rows.max()] + pad * dx,
            xis[cols.min()] - pad * dk, xis[cols.max()] + pad * dk)


def _image_box(pot: Potential, box, t: float, samples: int = 256):
    """Bounding box of ``Phi(t)(box)`` from its flowed boundary."""
    xlo, xhi, klo, khi = box
    s = np.linspace(0.0, 1.0, samples)
    bx = np.concatenate([xlo + (xhi - xlo) * s, np.full(samples, xhi), xhi - (xhi - xlo) * s, np.full(samples, xlo)])
    bk = np.concatenate([np.full(samples, klo), klo + (khi - klo) * s, np.full(samples, khi), khi - (khi - klo) * s])
    if t != 0:
        fp = flow(pot, t, bx, bk, variational=False)
        bx, bk = fp.x[:, 0], fp.xi[:, 0]
    return bx.min(), bx.max(), bk.min(), bk.max()


def _in_box(x, k, box):
    return (x >= box[0]) & (x <= box[1]) & (k >= box[2]) & (k <= box[3])


def pullback(pot: Potential, sources: Sequence[Source], x_targets: np.ndarray, xi_targets: np.ndarray,
             dt_max: float = DT_MAX, margin: float = 0.0) -> np.ndarray:
    """``sum_k w_k [e^{i S_k}] F_k(Phi(tau_k)(x, xi))`` on a product of target nodes.

    ``S_k`` is the action accumulated over ``[0, tau_k]``.  All ``tau_k``
    share a sign.  Returns an array of shape ``(len(x_targets), len(xi_targets))``.
    """
    x_targets = np.asarray(x_targets, dtype=float)
    xi_targets = np.asarray(xi_targets, dtype=float)
    out = np.zeros((x_targets.size, xi_targets.size), dtype=complex)
    live = [s for s in sources if s.box is not None and s.weight != 0]
    if not live:
        return out
    taus = np.array([s.tau for s in live])
    if np.any(taus > 0) and np.any(taus < 0):
        raise ValueError("pullback times must share a sign")
    images = []
    for s in live:
        b = _image_box(pot, s.box, -s.tau)
        images.append((b[0] - margin, b[1] + margin, b[2] - margin, b[3] + margin))
    X, K = np.meshgrid(x_targets, xi_targets, indexing="ij")
    X, K = X.ravel(), K.ravel()
    active = np.zeros(X.size, dtype=bool)
    for b in images:
        active |= _in_box(X, K, b)
    idx = np.flatnonzero(active)
    if idx.size == 0:
        return out
    x = X[idx][:, None].copy()
    xi = K[idx][:, None].copy()
    phase = np.zeros(idx.size)
    acc = np.zeros(idx.size, dtype=complex)
    order = np.argsort(np.abs(taus), kind="stable")
    now = 0.0
    for i in order:
        src = live[i]
        seg = src.tau - now
        if seg != 0:
            steps = max(int(np.ceil(abs(seg) / dt_max)), 2)
            steps += steps % 2
            x, xi, _, dph = verlet(pot, x, xi, seg / steps, steps)
            phase += dph
            now = src.tau
        sel = np.flatnonzero(_in_box(x[:, 0], xi[:, 0], src.box))
        if sel.size == 0:
            continue
        vals = src.evaluate(x[sel, 0], xi[sel, 0])
        if src.with_phase:
            vals = vals * np.exp(1j * phase[sel])
        acc[sel] += src.weight * vals
    out.reshape(-1)[idx] = acc
    return out


def _stft_source(f: SampledField, window: Window, tau: float, weight=1.0, with_phase=True) -> Source:
    grid = f.grid
    V = stft(f, window, tail_tol=np.inf)
    box = support_box(V.values, grid.axis, grid.dual_axis)
    return Source(tau, lambda xs, ks: stft_points(f, window, xs, ks, tail_tol=np.inf), box, weight, with_phase)


def _remainder_source(u: SampledField, s: float, potential: Potential, window: Window, tau: float,
                      weight=1.0) -> Source:
    grid = u.grid
    gs = evolved_window(window, s)
    Vgrid = potential.value(grid.axis[:, None])
    onset = taylor_stft(u, s, potential, window, method="direct")
    box = support_box(onset.values, grid.axis, grid.dual_axis)

    def evaluate(xs, ks):
        Vx = potential.value(xs[:, None])
        dVx = potential.grad(xs[:, None])[:, 0]
        return _points_1d(u.values, grid, gs, xs, ks, weight=(Vgrid, Vx, dVx))

    return Source(tau, evaluate, box, weight)


def _horizon(potential: Potential, t: float, horizon: Optional[float]):
    hz = compute_T2(potential) if horizon is None else horizon
    if abs(t) > hz + 1e-12:
        raise HorizonError(f"|t| = {abs(t)} exceeds the parametrix horizon {hz}")


def phase_multiplier(t: float, s: float, potential: Potential, x, xi, steps: Optional[int] = None) -> np.ndarray:
    """``M(t, s)(x, xi) = exp(-i int_s^t h(tau - t; x, xi) dtau)``."""
    fp = flow(potential, s - t, x, xi, steps, variational=False)
    out = np.exp(1j * fp.phase)
    return complex(out.reshape(-1)[0]) if out.size == 1 and np.ndim(x) == 0 else out


def parametrix_field(f: SampledField, t: float, potential: Potential, window: Optional[Window] = None,
                     dt_max: float = DT_MAX) -> PhaseSpaceField:
    """``M(t, 0) (V_g f) o Phi(-t)`` on grid x dual grid."""
    _require_1d(f.grid)
    window = window or Window()
    f.certify(DEFAULT_TAIL_TOL, "parametrix input")
    g = f.grid
    raw = pullback(potential, [_stft_source(f, window, -t)], g.axis, g.dual_axis, dt_max)
    return PhaseSpaceField(g, raw)


def parametrix_U0(f: SampledField, t: float, potential: Potential, window: Optional[Window] = None,
                  dt_max: float = DT_MAX, horizon: Optional[float] = None) -> SampledField:
    """``U_0(t) f = V_{g(t)}^* M(t, 0) Phi_{-t} V_g f``."""
    window = window or Window()
    _horizon(potential, t, horizon)
    P = parametrix_field(f, t, potential, window, dt_max)
    return SampledField(f.grid, synthesize(P.values, f.grid, evolved_window(window, t)))


def remainder_R(u: SampledField, t: float, s: float, potential: Potential, window: Optional[Window] = None,
                dt_max: float = DT_MAX, horizon: Optional[float] = None) -> SampledField:
    """``R(t, s) u = V_{g(t)}^* M(t, s) Phi_{s-t} Rt(s) u``."""
    _require_1d(u.grid)
    window = window or Window()
    _horizon(potential, t, horizon)
    _horizon(potential, s, horizon)
    g = u.grid
    if potential.zero_hessian:
        return u.like(np.zeros(g.shape, complex))
    src = _remainder_source(u, s, potential, window, s - t)
    raw = pullback(potential, [src], g.axis, g.dual_axis, dt_max)
    return SampledField(g, synthesize(raw, g, evolved_window(window, t)))


def defect(f: SampledField, t: float, potential: Potential, window: Optional[Window] = None,
           dt_max: float = DT_MAX, horizon: Optional[float] = None) -> SampledField:
    """``(i d/dt - H) U_0(t) f``, assembled from the Taylor-remainder synthesis.

    With ``P = M(t, 0) (V_g f) o Phi(-t)`` the defect is
    ``-(2 pi)^{-1} int int g(t, x - y) r(y, x) P(y, eta) e^{i x eta} dy deta``
    where ``r(y, x) = V(x) - V(y) - V'(y)(x - y)``.
    """
    window = window or Window()
    _horizon(potential, t, horizon)
    g = f.grid
    if potential.zero_hessian:
        return f.like(np.zeros(g.shape, complex))
    P = parametrix_field(f, t, potential, window, dt_max)

    def kernel(y, xs):
        return taylor_remainder(potential, y[:, None, :], xs[None, :, :])

    vals = synthesize(P.values, g, evolved_window(window, t), kernel=kernel)
    return f.like(-vals)


def gauss_legendre(t: float, K: int):
    nodes, weights = np.polynomial.legendre.leggauss(K)
    return 0.5 * t * (nodes + 1.0), 0.5 * t * weights


@dataclass(frozen=True)
class DuhamelReport:
    residual: float
    N: int
    K: int
    dt: float
    t: float


def duhamel_residual(u0: SampledField, t: float, potential: Potential, window: Optional[Window] = None,
                     K: int = 32, dt: Optional[float] = None, horizon: Optional[float] = None,
                     report: bool = False):
    """``||U(t)u0 - U_0(t)u0 + i sum_k w_k R(t, s_k) U(s_k) u0|| / ||u0||``.

    ``s_k, w_k`` are the ``K``-point Gauss-Legendre rule on ``[0, t]``; the
    reference ``U`` is the Strang split-step propagator.  One step size
    ``dt`` (default ``t / (2 K)``) drives both the split-step reference and
    the flow integration, so the residual tracks the combined time
    discretization as ``K`` grows.
    """
    _require_1d(u0.grid)
    window = window or Window()
    _horizon(potential, t, horizon)
    g = u0.grid
    if t == 0:
        return DuhamelReport(0.0, g.points_per_axis, K, 0.0, 0.0) if report else 0.0
    dt = abs(t) / (2 * K) if dt is None else dt
    s, w = gauss_legendre(t, K)
    # reference states at the quadrature nodes and at t
    states = []
    u, now = u0, 0.0
    for sk in list(s) + [t]:
        n_steps = max(1, int(np.ceil(abs(sk - now) / dt)))
        u = splitstep_prop(u, sk - now, potential, dt=abs(sk - now) / n_steps, tail_tol=np.inf)
        states.append(u)
        now = sk
    Ut = states[-1]
    sources = [_stft_source(u0, window, -t)]
    if not potential.zero_hessian:
        for sk, wk, uk in zip(s, w, states[:-1]):
            sources.append(_remainder_source(uk, sk, potential, window, sk - t, weight=-1j * wk))
    raw = pullback(potential, sources, g.axis, g.dual_axis, dt_max=dt)
    approx = synthesize(raw, g, evolved_window(window, t))
    res = lp_norm(Ut.like(Ut.values - approx), 2) / lp_norm(u0, 2)
    return DuhamelReport(float(res), g.points_per_axis, K, dt, t) if report else float(res)
