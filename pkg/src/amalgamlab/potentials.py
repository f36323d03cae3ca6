"""At-most-quadratic potentials and the small-time constants derived from them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import bisect

GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
# Gauss-Legendre rule mapped to [0, 1]
THETA = 0.5 * (GL_NODES + 1.0)
THETA_W = 0.5 * GL_WEIGHTS


class CertificateError(ValueError):
    """Raised when a declared Hessian bound is contradicted by sampling."""


@dataclass(frozen=True, eq=False)
class Potential:
    """Real potential with gradient, Hessian and a certified Hessian bound.

    Evaluators take points of shape ``(..., n)`` and return arrays of shape
    ``(...)``, ``(..., n)`` and ``(..., n, n)``.
    """

    name: str
    dim: int
    value: Callable
    grad: Callable
    hess: Callable
    hessian_sup: float
    exact_propagator: bool = False
    zero_hessian: bool = False
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.value(np.asarray(x, dtype=float))

    def label(self) -> str:
        if not self.params:
            return self.name
        inner = ",".join(f"{k}={v:g}" for k, v in sorted(self.params.items()))
        return f"{self.name}({inner})"


def _sumlast(a):
    return np.sum(a, axis=-1)


def _diag(d):
    n = d.shape[-1]
    out = np.zeros(d.shape + (n,))
    idx = np.arange(n)
    out[..., idx, idx] = d
    return out


def _const_hess(c, dim):
    def hess(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(c * np.eye(dim), x.shape[:-1] + (dim, dim)).copy()
    return hess


BUILTINS = ("zero", "harmonic", "inverted_harmonic", "stark", "cosine", "quad_plus_trig")


def builtin(name: str, dim: int = 1, **params) -> Potential:
    """Named potential.

    ``stark`` takes ``E`` (scalar or vector), ``cosine`` an optional
    ``amplitude``.  ``quad_plus_trig`` is ``|x|^2/2 + sum_i sin x_i``.
    """
    if name == "zero":
        return Potential(
            "zero", dim,
            lambda x: np.zeros(np.shape(x)[:-1]),
            lambda x: np.zeros(np.shape(x)),
            _const_hess(0.0, dim), 0.0, exact_propagator=True, zero_hessian=True)
    if name == "harmonic":
        return Potential(
            "harmonic", dim, lambda x: 0.5 * _sumlast(x * x), lambda x: np.array(x, dtype=float),
            _const_hess(1.0, dim), 1.0, exact_propagator=True)
    if name == "inverted_harmonic":
        return Potential(
            "inverted_harmonic", dim, lambda x: -0.5 * _sumlast(x * x), lambda x: -np.array(x, dtype=float),
            _const_hess(-1.0, dim), 1.0, exact_propagator=True)
    if name == "stark":
        E = np.broadcast_to(np.asarray(params.get("E", 1.0), dtype=float), (dim,)).copy()
        return Potential(
            "stark", dim, lambda x: np.asarray(x, float) @ E,
            lambda x: np.broadcast_to(E, np.shape(x)).copy(),
            _const_hess(0.0, dim), 0.0, exact_propagator=True, zero_hessian=True,
            params={"E": float(E[0])} if dim == 1 else {f"E{i}": float(e) for i, e in enumerate(E)})
    if name == "cosine":
        a = float(params.get("amplitude", 1.0))
        return Potential(
            "cosine", dim, lambda x: a * _sumlast(np.cos(x)), lambda x: -a * np.sin(x),
            lambda x: _diag(-a * np.cos(x)), abs(a), params={"amplitude": a} if a != 1.0 else {})
    if name == "quad_plus_trig":
        return Potential(
            "quad_plus_trig", dim, lambda x: _sumlast(0.5 * x * x + np.sin(x)),
            lambda x: x + np.cos(x), lambda x: _diag(1.0 - np.sin(x)), 2.0)
    raise ValueError(f"unknown potential {name!r}; choose from {BUILTINS}")


def certify_hessian(pot: Potential, samples: int = 10_000, box: float = 50.0, seed: int = 0) -> float:
    """Largest sampled Hessian entry; raises if it exceeds the declared bound."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-box, box, size=(samples, pot.dim))
    m = float(np.max(np.abs(pot.hess(x)))) if samples else 0.0
    if m > pot.hessian_sup * (1 + 1e-12) + 1e-300:
        raise CertificateError(f"{pot.name}: sampled |Hess V| = {m} exceeds declared {pot.hessian_sup}")
    return m


def custom(name: str, dim: int, value, grad, hess, hessian_sup: float, seed: int = 0,
           samples: int = 10_000) -> Potential:
    """User potential; the declared Hessian bound is checked on random samples."""
    if hessian_sup is None or not np.isfinite(hessian_sup) or hessian_sup < 0:
        raise ValueError("custom potentials need a finite nonnegative hessian_sup")
    pot = Potential(name, dim, value, grad, hess, float(hessian_sup))
    certify_hessian(pot, samples, seed=seed)
    return pot


def taylor_remainder(pot: Potential, x, y) -> np.ndarray:
    """Second order Taylor remainder of ``V`` at ``y`` around ``x``.

    ``sum_ij (y - x)_i (y - x)_j int_0^1 (1 - theta) d_ij V(x + theta (y - x)) dtheta``,
    with the ``theta`` integral done by 16-point Gauss-Legendre.
    Arrays ``x`` and ``y`` broadcast and have a trailing axis of length ``n``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = y - x
    out = np.zeros(np.broadcast_shapes(x.shape, y.shape)[:-1])
    if pot.zero_hessian:
        return out
    for th, w in zip(THETA, THETA_W):
        H = pot.hess(x + th * d)
        out = out + (w * (1 - th)) * np.einsum("...i,...ij,...j->...", d, H, d)
    return out


def taylor_remainder_direct(pot: Potential, x, y) -> np.ndarray:
    """``V(y) - V(x) - grad V(x).(y - x)``, algebraically equal to :func:`taylor_remainder`."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return pot.value(y) - pot.value(x) - np.sum(pot.grad(x) * (y - x), axis=-1)


@dataclass(frozen=True)
class LemmaConstants:
    M: float
    T1: float
    Mprime: float
    T2: float


def constant_M(pot: Potential, n: Optional[int] = None) -> float:
    n = pot.dim if n is None else n
    return 1.0 + n * n * pot.hessian_sup


def compute_T1(M: float, tol: float = 1e-12) -> float:
    """Largest ``T < 1/3`` with ``2 M^{3/2} e^{M T} T < 1/2``, shrunk by 0.999."""
    if M < 1:
        raise ValueError("M must be at least 1")

    def phi(T):
        return 2.0 * M ** 1.5 * np.exp(M * T) * T - 0.5

    hi = 1.0 / 3.0
    root = hi if phi(hi) < 0 else bisect(phi, 0.0, hi, xtol=tol)
    return 0.999 * min(root, hi)


def compute_T2(pot: Potential, n: Optional[int] = None) -> float:
    """Largest ``T`` with ``n M' T^2 <= 1/4``, capped at 1/3."""
    n = pot.dim if n is None else n
    Mp = 1.0 + pot.hessian_sup
    return float(min(1.0 / 3.0, np.sqrt(1.0 / (4.0 * n * Mp))))


def lemma_constants(pot: Potential, n: Optional[int] = None) -> LemmaConstants:
    M = constant_M(pot, n)
    return LemmaConstants(M, compute_T1(M), 1.0 + pot.hessian_sup, compute_T2(pot, n))
