"""Hamiltonian flow of ``xdot = xi``, ``xidot = -grad V(x)`` with variations and action phase.

Integration is Stoermer-Verlet (velocity form).  The linearized step is
applied to the variational matrix, so ``J`` is the exact Jacobian of the
discrete map and ``det J = 1`` holds to round-off.  The phase

    int_0^t h(tau) dtau,   h = |xi|^2/2 + V(x) - grad V(x).x

is accumulated by Simpson's rule on the Verlet nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .potentials import Potential, compute_T1, constant_M

DT_MAX = 1e-4


class StepBudgetError(ValueError):
    """Raised when fewer integration steps are requested than the accuracy rule allows."""


class HorizonError(ValueError):
    """Raised when a time lies outside the horizon where a statement is asserted."""


@dataclass(frozen=True, eq=False)
class FlowPoint:
    """State after flowing for time ``t``; arrays carry a trailing axis of length ``n``."""

    t: float
    x: np.ndarray
    xi: np.ndarray
    J: Optional[np.ndarray]
    phase: np.ndarray


def min_steps(pot: Potential, t: float) -> int:
    return int(np.ceil(64 * abs(t) * (1 + constant_M(pot))))


def default_steps(pot: Potential, t: float, dt_max: float = DT_MAX) -> int:
    s = max(min_steps(pot, t), int(np.ceil(abs(t) / dt_max)), 2)
    return s + (s % 2)


def _as_points(a, n):
    a = np.asarray(a, dtype=float)
    if n == 1 and a.ndim <= 1:
        a = a[..., None]
    if a.shape[-1] != n:
        raise ValueError(f"expected trailing axis of length {n}, got shape {a.shape}")
    return a


def _h(pot: Potential, x, xi, gx):
    return 0.5 * np.sum(xi * xi, axis=-1) + pot.value(x) - np.sum(gx * x, axis=-1)


def verlet(pot: Potential, x, xi, dt: float, steps: int, J=None, with_phase: bool = True):
    """Advance ``steps`` Verlet steps of size ``dt``.

    Returns ``(x, xi, J, phase)``; ``phase`` is the Simpson integral of ``h``
    over the segment (``steps`` must be even when requested).
    """
    if with_phase and steps % 2:
        raise ValueError("Simpson phase needs an even number of steps")
    n = x.shape[-1]
    x = np.array(x, dtype=float)
    xi = np.array(xi, dtype=float)
    gx = pot.grad(x)
    phase = np.zeros(x.shape[:-1])
    if with_phase:
        phase += _h(pot, x, xi, gx)
    if J is not None:
        J = np.array(J, dtype=float)
        Hx = pot.hess(x)
    half = 0.5 * dt
    for k in range(1, steps + 1):
        xi -= half * gx
        x += dt * xi
        gx = pot.grad(x)
        xi -= half * gx
        if J is not None:
            Jx, Jp = J[..., :n, :], J[..., n:, :]
            Jp = Jp - half * (Hx @ Jx)
            Jx = Jx + dt * Jp
            Hx = pot.hess(x)
            Jp = Jp - half * (Hx @ Jx)
            J = np.concatenate([Jx, Jp], axis=-2)
        if with_phase:
            w = 1.0 if k == steps else (4.0 if k % 2 else 2.0)
            phase += w * _h(pot, x, xi, gx)
    if with_phase:
        phase *= dt / 3.0
    return x, xi, J, phase


def flow(pot: Potential, t: float, x0, xi0, steps: Optional[int] = None,
         variational: bool = True) -> FlowPoint:
    """``Phi(t)(x0, xi0)`` with Jacobian and accumulated phase.

    For ``n = 1`` plain arrays of shape ``(P,)`` are accepted and treated as
    ``P`` points.
    """
    n = pot.dim
    x0 = _as_points(x0, n)
    xi0 = _as_points(xi0, n)
    x0, xi0 = np.broadcast_arrays(x0, xi0)
    if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(xi0))):
        raise ValueError("non-finite initial data")
    need = min_steps(pot, t)
    if steps is None:
        steps = default_steps(pot, t)
    elif steps < need:
        raise StepBudgetError(f"{steps} steps requested, at least {need} required")
    steps = max(int(steps), 2)
    steps += steps % 2
    J0 = None
    if variational:
        J0 = np.broadcast_to(np.eye(2 * n), x0.shape[:-1] + (2 * n, 2 * n))
    if t == 0:
        return FlowPoint(0.0, x0.copy(), xi0.copy(), None if J0 is None else J0.copy(), np.zeros(x0.shape[:-1]))
    x, xi, J, ph = verlet(pot, x0, xi0, t / steps, steps, J0)
    return FlowPoint(float(t), x, xi, J, ph)


def flow_record(pot: Potential, x0, xi0, times: Sequence[float], dt_max: float = DT_MAX):
    """Flow one family of points and record ``(x, xi, phase)`` at each time.

    ``times`` must share one sign (zero allowed); they are visited in order of
    increasing modulus, each segment using an even number of steps no larger
    than ``dt_max``.
    """
    times = np.asarray(times, dtype=float)
    if np.any(times > 0) and np.any(times < 0):
        raise ValueError("recording times must share a sign")
    order = np.argsort(np.abs(times), kind="stable")
    x = np.array(x0, dtype=float)
    xi = np.array(xi0, dtype=float)
    ph = np.zeros(x.shape[:-1])
    now = 0.0
    out = [None] * times.size
    for i in order:
        seg = times[i] - now
        if seg != 0:
            s = max(int(np.ceil(abs(seg) / dt_max)), 2)
            s += s % 2
            x, xi, _, dph = verlet(pot, x, xi, seg / s, s)
            ph = ph + dph
            now = times[i]
        out[i] = (x.copy(), xi.copy(), ph.copy())
    return out


def flow_det(fp: FlowPoint) -> np.ndarray:
    if fp.J is None:
        raise ValueError("flow point carries no variational matrix")
    return np.linalg.det(fp.J)


def scaled_det(pot: Potential, t: float, x, xi, steps: Optional[int] = None) -> np.ndarray:
    """``det(d x(t; x, xi/t) / d xi) / t^n``; equal to 1 in the limit ``t -> 0``."""
    n = pot.dim
    x = _as_points(x, n)
    xi = _as_points(xi, n)
    x, xi = np.broadcast_arrays(x, xi)
    if abs(t) < 1e-6:
        return np.ones(x.shape[:-1])
    fp = flow(pot, t, x, xi / t, steps)
    X = fp.J[..., :n, n:]
    return np.linalg.det(X) / t ** n


@dataclass(frozen=True)
class LemhReport:
    t: float
    T1: float
    count: int
    violations_x: int
    violations_xi: int
    min_slack_x: float
    min_slack_xi: float
    energy_violations: int

    @property
    def ok(self) -> bool:
        return self.violations_x == 0 and self.violations_xi == 0 and self.energy_violations == 0


def check_lemh(pot: Potential, t: float, tuples, slack: float = 1e-9,
               steps: Optional[int] = None) -> LemhReport:
    """Check the two-point separation inequalities on tuples ``(x, xi, z, eta)``.

    ``tuples`` has shape ``(P, 4 n)``.  Tested:
    ``|x(t) - z(t)| >= (5|x - z| - 3|xi - eta|)/6``,
    ``|xi(t) - eta(t)| >= (|xi - eta| - |x - z|)/2`` and the Gronwall bound
    ``|X(t)|^2 + |Xi(t)|^2 <= 2 M (|X|^2 + |Xi|^2) e^{2 M |t|}``.
    """
    n = pot.dim
    M = constant_M(pot, n)
    T1 = compute_T1(M)
    if abs(t) >= T1:
        raise HorizonError(f"|t| = {abs(t)} is not below T1 = {T1}")
    tup = np.asarray(tuples, dtype=float).reshape(-1, 4 * n)
    x, xi, z, eta = (tup[:, k * n:(k + 1) * n] for k in range(4))
    a = flow(pot, t, np.concatenate([x, z]), np.concatenate([xi, eta]), steps, variational=False)
    P = tup.shape[0]
    xt, zt = a.x[:P], a.x[P:]
    xit, etat = a.xi[:P], a.xi[P:]
    dX0 = np.linalg.norm(x - z, axis=-1)
    dXi0 = np.linalg.norm(xi - eta, axis=-1)
    dX = np.linalg.norm(xt - zt, axis=-1)
    dXi = np.linalg.norm(xit - etat, axis=-1)
    sx = dX - (5 * dX0 - 3 * dXi0) / 6 + slack
    sxi = dXi - (dXi0 - dX0) / 2 + slack
    energy = dX ** 2 + dXi ** 2 - 2 * M * (dX0 ** 2 + dXi0 ** 2) * np.exp(2 * M * abs(t))
    return LemhReport(float(t), T1, P, int(np.sum(sx < 0)), int(np.sum(sxi < 0)),
                      float(sx.min() - slack) if P else 0.0, float(sxi.min() - slack) if P else 0.0,
                      int(np.sum(energy > slack)))
