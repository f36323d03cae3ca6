"""Command line harness: ``verify``, ``sweep <experiment>`` and ``flow-check``.

Experiments are described by an INI file (``key = value`` sections).  All
fields are validated before any computation.  Outputs are written by a
single collector in a fixed order, so identical configurations give
byte-identical files.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .field import DecayViolation, lp_norm, make_grid, sample, gaussian
from .hamflow import check_lemh, flow, flow_det, scaled_det
from .potentials import BUILTINS, builtin, certify_hessian, lemma_constants
from .propagate import (
    apply_hamiltonian,
    defect,
    duhamel_residual,
    exact_prop,
    free_prop,
    parametrix_U0,
    splitstep_prop,
    stark_prop,
)
from .norms import amalgam_norm
from .stft import Window, adjoint_stft, evolved_window, stft, stft_points
from .strichartz import (
    AdmissiblePair,
    ExperimentRecord,
    dispersive_fit,
    drift,
    gaussian_family,
    is_finite_measure,
    lemma3_ratio,
    lemma4_ratio,
    random_coherent,
    record_timestamp,
    strichartz_quotients,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
EXPERIMENTS = ("dispersive", "strichartz", "duhamel", "lemmas")
CSV_COLUMNS = ("experiment", "cell", "quantity", "value", "stable", "params")
DRIFT_TOL = 0.10


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


# ---------------------------------------------------------------------------
# configuration

_SCHEMA = {
    "experiment": {"name": str, "seed": int, "timestamp": str},
    "grid": {"dim": int, "n": int, "l": "length"},
    "potential": {"name": str, "e": float, "amplitude": float},
    "window": {"width": float},
    "time": {"t": float, "samples": int, "times": "floats", "fd_steps": "floats"},
    "pairs": {"list": "pairs", "endpoint": bool},
    "data": {"widths": "floats", "momenta": "floats", "center": float, "count": int},
    "numerics": {"stride": int, "decimation": int, "k": "ints", "refine": bool, "dt": float,
                 "fine_stride": int, "fine_decimation": int},
    "tolerances": {"plancherel": float, "inversion": float, "covariance": float, "liouville": float,
                   "lemh_slack": float, "lemdet": float, "defect_order": float, "drift": float},
    "output": {"dir": str},
}


def _length(text: str) -> float:
    s = text.strip().replace(" ", "")
    if s.endswith("pi"):
        head = s[:-2].rstrip("*")
        return (float(head) if head else 1.0) * math.pi
    return float(s)


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _pairs(text: str) -> tuple:
    out = []
    for item in text.replace(",", " ").split():
        p, r = item.split(":")
        out.append((float(p), float(r)))
    return tuple(out)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_PARSERS = {str: str.strip, int: int, float: float, bool: _bool, "length": _length, "floats": _floats,
            "ints": _ints, "pairs": _pairs}


@dataclass
class ExperimentConfig:
    name: str = "default"
    seed: Optional[int] = 0
    timestamp: str = ""
    dim: int = 1
    N: int = 512
    L: float = 12 * math.pi
    potential: str = "zero"
    potential_params: dict = field(default_factory=dict)
    window_width: float = 1.0
    T: float = 0.2
    samples: int = 65
    times: tuple = (0.05, 0.1, 0.2, 0.3)
    fd_steps: tuple = (0.02, 0.01, 0.005)
    pairs: tuple = ((4.0, 8.0), (3.0, 12.0), (2.5, 20.0))
    endpoint: bool = False
    widths: tuple = (0.8, 1.0, 1.5)
    momenta: tuple = (0.0, 1.0)
    center: float = 0.0
    count: int = 100
    stride: int = 1
    decimation: int = 1
    K: tuple = (16, 32)
    refine: bool = False
    dt: float = 1e-3
    fine_stride: int = 0
    fine_decimation: int = 0
    tol: dict = field(default_factory=lambda: {
        "plancherel": 1e-8, "inversion": 1e-8, "covariance": 1e-6, "liouville": 1e-8,
        "lemh_slack": 1e-9, "lemdet": 1e-6, "defect_order": 1.8, "drift": DRIFT_TOL})
    out_dir: str = "out"

    def window(self) -> Window:
        return Window(width=self.window_width, dim=self.dim)

    def grid(self, refine: int = 1):
        return make_grid(self.dim, self.N * refine, self.L)

    def make_potential(self):
        return builtin(self.potential, self.dim, **self.potential_params)

    def provenance(self) -> dict:
        return {"dim": self.dim, "N": self.N, "L": self.L, "potential": self.potential,
                "potential_params": dict(sorted(self.potential_params.items())),
                "window_width": self.window_width, "seed": self.seed, "config": self.name}

    def pair_objects(self) -> list:
        return [AdmissiblePair(p, r, self.dim) for p, r in self.pairs]

    def require_seed(self):
        if self.seed is None:
            raise ConfigError("[experiment] seed is required for randomized suites")


def _read_raw(path: Optional[str]) -> dict:
    if path is None:
        return {}
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return {s: dict(cp.items(s)) for s in cp.sections()}


def load_config(path: Optional[str]) -> ExperimentConfig:
    """Parse and validate a configuration file (``None`` gives the defaults)."""
    raw = _read_raw(path)
    parsed = {}
    for section, items in raw.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, text in items.items():
            kind = _SCHEMA[section].get(key)
            if kind is None:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                parsed[(section, key)] = _PARSERS[kind](text)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    cfg = ExperimentConfig()
    if path is not None:
        cfg.seed = None
    simple = {("experiment", "name"): "name", ("experiment", "seed"): "seed",
              ("experiment", "timestamp"): "timestamp", ("grid", "dim"): "dim", ("grid", "n"): "N",
              ("grid", "l"): "L", ("potential", "name"): "potential", ("window", "width"): "window_width",
              ("time", "t"): "T", ("time", "samples"): "samples", ("time", "times"): "times",
              ("time", "fd_steps"): "fd_steps", ("pairs", "list"): "pairs", ("pairs", "endpoint"): "endpoint",
              ("data", "widths"): "widths", ("data", "momenta"): "momenta", ("data", "center"): "center",
              ("data", "count"): "count", ("numerics", "stride"): "stride",
              ("numerics", "decimation"): "decimation", ("numerics", "k"): "K",
              ("numerics", "refine"): "refine", ("numerics", "dt"): "dt",
              ("numerics", "fine_stride"): "fine_stride", ("numerics", "fine_decimation"): "fine_decimation",
              ("output", "dir"): "out_dir"}
    for key, attr in simple.items():
        if key in parsed:
            setattr(cfg, attr, parsed[key])
    for key in ("e", "amplitude"):
        if ("potential", key) in parsed:
            cfg.potential_params["E" if key == "e" else key] = parsed[("potential", key)]
    for (section, key), val in parsed.items():
        if section == "tolerances":
            cfg.tol[key] = val
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig):
    if cfg.dim not in (1, 2):
        raise ConfigError("grid dim must be 1 or 2")
    if cfg.N < 8 or cfg.N % 2:
        raise ConfigError("grid N must be even and at least 8")
    if not (cfg.L > 0 and math.isfinite(cfg.L)):
        raise ConfigError("grid L must be positive")
    if cfg.potential not in BUILTINS:
        raise ConfigError(f"unknown potential {cfg.potential!r}")
    if cfg.potential_params.get("E") is not None and cfg.potential != "stark":
        raise ConfigError("E applies to the stark potential only")
    if "amplitude" in cfg.potential_params and cfg.potential != "cosine":
        raise ConfigError("amplitude applies to the cosine potential only")
    if not cfg.window_width > 0:
        raise ConfigError("window width must be positive")
    if not cfg.T > 0:
        raise ConfigError("time horizon T must be positive")
    if cfg.samples < 2:
        raise ConfigError("time samples must be at least 2")
    if not cfg.times or any(not t > 0 for t in cfg.times):
        raise ConfigError("times must be a nonempty list of positive values")
    if not cfg.widths or any(not w > 0 for w in cfg.widths):
        raise ConfigError("data widths must be positive")
    if not cfg.momenta:
        raise ConfigError("data momenta must be nonempty")
    if cfg.count < 1:
        raise ConfigError("data count must be positive")
    for v, what in ((cfg.stride, "stride"), (cfg.decimation, "decimation")):
        if v < 1 or cfg.N % v:
            raise ConfigError(f"{what} must be a positive divisor of N")
    for v, what in ((cfg.fine_stride, "fine_stride"), (cfg.fine_decimation, "fine_decimation")):
        if v < 0 or (v and (2 * cfg.N) % v):
            raise ConfigError(f"{what} must divide 2 N")
    if not cfg.K or any(k < 1 for k in cfg.K):
        raise ConfigError("K must list positive node counts")
    if not cfg.dt > 0:
        raise ConfigError("dt must be positive")
    if any(not (v > 0) for v in cfg.tol.values()):
        raise ConfigError("tolerances must be positive")
    try:
        cfg.pair_objects()
    except ValueError as exc:
        raise ConfigError(f"pairs: {exc}") from exc
    if cfg.endpoint and cfg.dim == 1:
        raise ConfigError("endpoint mode needs dim = 2")


# ---------------------------------------------------------------------------
# verification suites


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def as_dict(self):
        return {"name": self.name, "passed": self.passed, "value": _num(self.value),
                "tolerance": _num(self.tolerance), "detail": self.detail}


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else repr(v)


def _guard(name: str, tol: float, fn: Callable[[], Check]) -> Check:
    try:
        return fn()
    except (DecayViolation, ValueError, ArithmeticError, NotImplementedError) as exc:
        return Check(name, False, float("nan"), tol, f"{type(exc).__name__}: {exc}")


def _suite_fields(cfg: ExperimentConfig):
    g = cfg.grid()
    return [f for _, f in gaussian_family(g, cfg.widths, cfg.momenta, cfg.center)]


def check_plancherel(cfg) -> Check:
    tol = cfg.tol["plancherel"]

    def run():
        w = cfg.window()
        worst = 0.0
        gnorm = lp_norm(w.sampled(cfg.grid()), 2)
        for f in _suite_fields(cfg):
            V = stft(f, w)
            g = f.grid
            lhs = math.sqrt(g.cell * g.dual_cell * float(np.sum(np.abs(V.values) ** 2)))
            rhs = (2 * math.pi) ** (cfg.dim / 2) * gnorm * lp_norm(f, 2)
            worst = max(worst, abs(lhs - rhs) / rhs)
        return Check("plancherel", worst <= tol, worst, tol)

    return _guard("plancherel", tol, run)


def check_inversion(cfg) -> Check:
    tol = cfg.tol["inversion"]

    def run():
        w = cfg.window()
        worst = 0.0
        for f in _suite_fields(cfg):
            back = adjoint_stft(stft(f, w), w)
            worst = max(worst, lp_norm(back - f, 2) / lp_norm(f, 2))
        return Check("inversion", worst <= tol, worst, tol)

    return _guard("inversion", tol, run)


def check_free_covariance(cfg) -> Check:
    tol = cfg.tol["covariance"]

    def run():
        w = cfg.window()
        f = _suite_fields(cfg)[0]
        g = f.grid
        xs = g.coords().reshape(-1, g.dim)
        worst = 0.0
        for t in cfg.times:
            V = stft(free_prop(f, t), evolved_window(w, t)).values
            xi = g.coords("xi").reshape(-1, g.dim)
            X = np.repeat(xs, xi.shape[0], axis=0)
            K = np.tile(xi, (xs.shape[0], 1))
            ref = stft_points(f, w, X - t * K, K).reshape(V.shape)
            ref = ref * np.exp(-0.5j * t * np.sum(K * K, axis=-1)).reshape(V.shape)
            worst = max(worst, float(np.max(np.abs(V - ref))))
        return Check("free_covariance", worst <= tol, worst, tol)

    return _guard("free_covariance", tol, run)


def check_stark_covariance(cfg) -> Check:
    tol = cfg.tol["covariance"]

    def run():
        w = cfg.window()
        f = _suite_fields(cfg)[0]
        E = cfg.potential_params.get("E", 1.0)
        worst = 0.0
        for t in cfg.times:
            a = amalgam_norm(stark_prop(f, t, E), np.inf, 1.0, w)
            b = amalgam_norm(free_prop(f, t), np.inf, 1.0, w)
            worst = max(worst, abs(a - b) / b)
        return Check("stark_covariance", worst <= tol, worst, tol)

    return _guard("stark_covariance", tol, run)


def _seeds(cfg, count, box=5.0):
    rng = np.random.default_rng(cfg.seed)
    return rng.uniform(-box, box, size=(count, 2 * cfg.dim))


def check_liouville(cfg, count: int = 1000) -> Check:
    tol = cfg.tol["liouville"]

    def run():
        pot = cfg.make_potential()
        pts = _seeds(cfg, count)
        n = cfg.dim
        worst = 0.0
        for t in (0.25, 0.5, 1.0):
            fp = flow(pot, t, pts[:, :n], pts[:, n:])
            worst = max(worst, float(np.max(np.abs(flow_det(fp) - 1))))
        return Check("liouville", worst <= tol, worst, tol)

    return _guard("liouville", tol, run)


def check_group_law(cfg, count: int = 200) -> Check:
    tol = cfg.tol["liouville"]

    def run():
        pot = cfg.make_potential()
        pts = _seeds(cfg, count)
        n = cfg.dim
        a = flow(pot, 0.3, pts[:, :n], pts[:, n:], variational=False)
        b = flow(pot, -0.3, a.x, a.xi, variational=False)
        err = float(np.max(np.abs(np.concatenate([b.x - pts[:, :n], b.xi - pts[:, n:]], axis=1))))
        return Check("inverse_law", err <= tol, err, tol)

    return _guard("inverse_law", tol, run)


def check_lemh_suite(cfg, count: int = 10_000) -> Check:
    slack = cfg.tol["lemh_slack"]

    def run():
        pot = cfg.make_potential()
        c = lemma_constants(pot)
        rng = np.random.default_rng(cfg.seed)
        tup = rng.uniform(-5, 5, size=(count, 4 * cfg.dim))
        rep = check_lemh(pot, 0.9 * c.T1, tup, slack=slack)
        bad = rep.violations_x + rep.violations_xi + rep.energy_violations
        return Check("lemma_separation", rep.ok, float(bad), 0.0,
                     f"T1={c.T1!r} min_slack_x={rep.min_slack_x!r} min_slack_xi={rep.min_slack_xi!r}")

    return _guard("lemma_separation", slack, run)


def check_lemdet_suite(cfg, count: int = 1000) -> Check:
    tol = cfg.tol["lemdet"]

    def run():
        pot = cfg.make_potential()
        c = lemma_constants(pot)
        rng = np.random.default_rng(cfg.seed)
        n = cfg.dim
        pts = rng.uniform(-5, 5, size=(count, 2 * n))
        ts = rng.uniform(-c.T2, c.T2, size=count)
        lo, hi = np.inf, -np.inf
        for t in np.unique(np.round(ts, 2)):
            if t == 0:
                continue
            d = scaled_det(pot, float(t), pts[:, :n], pts[:, n:])
            lo, hi = min(lo, float(d.min())), max(hi, float(d.max()))
        excess = max(0.5 - lo, hi - 2.0, 0.0)
        return Check("lemma_determinant", excess <= tol, excess, tol, f"T2={c.T2!r} range=[{lo!r}, {hi!r}]")

    return _guard("lemma_determinant", tol, run)


def check_defect(cfg) -> Check:
    pot_name = cfg.potential
    order_tol = cfg.tol["defect_order"]

    def run():
        pot = cfg.make_potential()
        f = _suite_fields(cfg)[0]
        t = min(0.1, 0.5 * lemma_constants(pot).T2)
        if cfg.dim != 1:
            return Check("defect", True, 0.0, order_tol, "skipped: parametrix operators are one dimensional")
        if pot.zero_hessian:
            d = lp_norm(defect(f, t, pot), 2)
            err = lp_norm(parametrix_U0(f, t, pot) - exact_prop(f, t, pot), 2) / lp_norm(f, 2)
            ok = d == 0 and err <= 1e-6
            return Check("defect", ok, err, 1e-6, f"zero-hessian potential {pot_name}: defect norm {d!r}")
        U = parametrix_U0(f, t, pot)
        rhs = apply_hamiltonian(U, pot) + defect(f, t, pot)
        errs = []
        for d in cfg.fd_steps:
            dU = (parametrix_U0(f, t + d, pot) - parametrix_U0(f, t - d, pot)) * (1j / (2 * d))
            errs.append(lp_norm(dU - rhs, 2) / lp_norm(f, 2))
        errs = np.array(errs)
        steps = np.array(cfg.fd_steps)
        order = float(np.min(np.log(errs[:-1] / errs[1:]) / np.log(steps[:-1] / steps[1:])))
        return Check("defect", order >= order_tol, order, order_tol, f"errors={errs.tolist()!r}")

    return _guard("defect", order_tol, run)


def check_hessian(cfg) -> Check:
    def run():
        pot = cfg.make_potential()
        m = certify_hessian(pot, seed=cfg.seed)
        return Check("hessian_certificate", True, m, pot.hessian_sup)

    return _guard("hessian_certificate", 0.0, run)


def run_checks(cfg: ExperimentConfig, checks, threads: int = 1) -> list:
    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        return list(ex.map(lambda c: c(cfg), checks))


def verify_checks(cfg):
    out = [check_plancherel, check_inversion, check_free_covariance]
    if cfg.potential == "stark":
        out.append(check_stark_covariance)
    return out + flow_checks(cfg) + [check_defect]


def flow_checks(cfg):
    return [check_hessian, check_liouville, check_group_law, check_lemh_suite, check_lemdet_suite]


def _write_report(out: Path, payload: dict):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _finish_checks(cfg, results, out: Path, command: str) -> int:
    failed = [c for c in results if not c.passed]
    payload = {"command": command, "config": cfg.provenance(), "timestamp": record_timestamp(cfg.timestamp),
               "passed": not failed, "first_failure": failed[0].name if failed else None,
               "checks": [c.as_dict() for c in results]}
    _write_report(out, payload)
    for c in results:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name} value={c.value!r} tol={c.tolerance!r} {c.detail}".rstrip())
    if failed:
        print(f"first failing invariant: {failed[0].name}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def run_verify(cfg: ExperimentConfig, out: Path, threads: int = 1) -> int:
    cfg.require_seed()
    return _finish_checks(cfg, run_checks(cfg, verify_checks(cfg), threads), out, "verify")


def run_flow_check(cfg: ExperimentConfig, out: Path, threads: int = 1) -> int:
    cfg.require_seed()
    return _finish_checks(cfg, run_checks(cfg, flow_checks(cfg), threads), out, "flow-check")


# ---------------------------------------------------------------------------
# sweeps


def _propagator(cfg):
    pot = cfg.make_potential()
    if pot.exact_propagator:
        return lambda u, t: exact_prop(u, t, pot, tail_tol=np.inf)
    return lambda u, t: splitstep_prop(u, t, pot, dt=cfg.dt, tail_tol=np.inf)


def _fine_params(cfg):
    return (cfg.fine_stride or 2 * cfg.stride, cfg.fine_decimation or 2 * cfg.decimation)


def sweep_dispersive(cfg, threads):
    prop = _propagator(cfg)
    f = sample(cfg.grid(), gaussian(center=cfg.center if cfg.dim == 1 else (cfg.center,) * 2,
                                    width=cfg.widths[0], dim=cfg.dim))
    fit = dispersive_fit(prop, f, cfg.times, cfg.window(), cfg.stride, cfg.decimation)
    base = cfg.provenance() | {"width": cfg.widths[0], "stride": cfg.stride, "decimation": cfg.decimation}
    recs = [ExperimentRecord("dispersive", base | {"t": t}, {"w_inf_1": v}, None, record_timestamp(cfg.timestamp))
            for t, v in zip(fit.times, fit.norms)]
    summary = {"slope": fit.slope, "intercept": fit.intercept}
    plot = [("log_t", "log_norm")] + [(math.log(t), math.log(v)) for t, v in zip(fit.times, fit.norms)]
    return recs, summary, plot


def _strichartz_cell(cfg, f, pairs, refine_level):
    prop = _propagator(cfg)
    if refine_level == 1:
        st, dec, S = cfg.stride, cfg.decimation, cfg.samples
    else:
        st, dec = _fine_params(cfg)
        S = 2 * cfg.samples - 1
    return strichartz_quotients(prop, f, cfg.T, pairs, cfg.endpoint, S, st, dec)


def sweep_strichartz(cfg, threads):
    pairs = cfg.pair_objects()
    fam = gaussian_family(cfg.grid(), cfg.widths, cfg.momenta, cfg.center)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        coarse = list(ex.map(lambda lf: _strichartz_cell(cfg, lf[1], pairs, 1), fam))
        fine = None
        if cfg.refine:
            fam2 = gaussian_family(cfg.grid(2), cfg.widths, cfg.momenta, cfg.center)
            fine = list(ex.map(lambda lf: _strichartz_cell(cfg, lf[1], pairs, 2), fam2))
    recs, summary, plot = [], {}, [("pair_index", "member_index", "quotient")]
    for i, pair in enumerate(pairs):
        vals = [row[i] for row in coarse]
        fvals = [row[i] for row in fine] if fine else None
        worst = drift(max(vals), max(fvals)) if fine else None
        stable = None if fine is None else worst < cfg.tol["drift"]
        for j, (label, _) in enumerate(fam):
            params = cfg.provenance() | {"pair": [pair.p, pair.r], "member": label, "T": cfg.T,
                                         "samples": cfg.samples, "endpoint": cfg.endpoint,
                                         "stride": cfg.stride, "decimation": cfg.decimation}
            values = {"quotient": vals[j]}
            if fvals:
                values["quotient_refined"] = fvals[j]
            recs.append(ExperimentRecord("strichartz", params, values, stable, record_timestamp(cfg.timestamp)))
            plot.append((i, j, vals[j]))
        summary[pair.label()] = {"max": max(vals), "spread": max(vals) / min(vals), "drift": worst,
                                 "stable": stable, "finite": is_finite_measure(max(vals), stable is not False)}
    return recs, summary, plot


def sweep_duhamel(cfg, threads):
    if cfg.dim != 1:
        raise ConfigError("the duhamel sweep is one dimensional")
    pot = cfg.make_potential()
    f = sample(cfg.grid(), gaussian(center=cfg.center, width=cfg.widths[0], momentum=cfg.momenta[0]))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        res = list(ex.map(lambda K: duhamel_residual(f, cfg.T, pot, cfg.window(), K=K), cfg.K))
    recs = [ExperimentRecord("duhamel", cfg.provenance() | {"K": K, "t": cfg.T, "dt": cfg.T / (2 * K)},
                             {"residual": r}, None, record_timestamp(cfg.timestamp)) for K, r in zip(cfg.K, res)]
    decreasing = all(b < a for a, b in zip(res, res[1:]))
    summary = {"residuals": res, "strictly_decreasing": decreasing}
    plot = [("K", "residual")] + list(zip(cfg.K, res))
    return recs, summary, plot


def sweep_lemmas(cfg, threads):
    cfg.require_seed()
    if cfg.dim != 1:
        raise ConfigError("the lemmas sweep is one dimensional")
    pot = cfg.make_potential()
    c = lemma_constants(pot)
    w = cfg.window()
    g = cfg.grid()
    f = sample(g, gaussian(center=cfg.center, width=cfg.widths[0], momentum=cfg.momenta[0]))
    ts = [t for t in cfg.times if t <= c.T2]
    recs, plot = [], [("log_t", "lemma4_ratio")]
    r4 = [lemma4_ratio(pot, w, 0.0, t, f, cfg.stride, cfg.decimation) for t in ts]
    for t, r in zip(ts, r4):
        recs.append(ExperimentRecord("lemma4", cfg.provenance() | {"s": 0.0, "t": t, "width": cfg.widths[0]},
                                     {"ratio": r}, None, record_timestamp(cfg.timestamp)))
        plot.append((math.log(t), r))
    rng = np.random.default_rng(cfg.seed)
    Fs = [random_coherent(rng) for _ in range(cfg.count)]
    t3 = 0.5 * c.T1
    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        r3 = list(ex.map(lambda F: lemma3_ratio(pot, w, t3, t3, F, g, cfg.stride, cfg.decimation, refine=False), Fs))
    for k, r in enumerate(r3):
        recs.append(ExperimentRecord("lemma3", cfg.provenance() | {"s": t3, "t": t3, "member": k},
                                     {"ratio": r}, None, record_timestamp(cfg.timestamp)))
    summary = {"lemma4_max": max(r4) if r4 else None, "lemma4_spread": (max(r4) / min(r4)) if r4 else None,
               "lemma3_max": max(r3), "T1": c.T1, "T2": c.T2}
    return recs, summary, plot


SWEEPS = {"dispersive": sweep_dispersive, "strichartz": sweep_strichartz, "duhamel": sweep_duhamel,
          "lemmas": sweep_lemmas}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return v


def write_outputs(out: Path, experiment: str, records, summary, plot):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        for i, rec in enumerate(records):
            params = json.dumps(rec.params, sort_keys=True)
            for key in sorted(rec.values):
                wr.writerow([rec.experiment, i, key, _fmt(rec.values[key]),
                             "" if rec.stable is None else int(rec.stable), params])
    with open(out / "records.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
    with open(out / f"plotdata_{experiment}.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(plot[0])
        for row in plot[1:]:
            wr.writerow([_fmt(v) for v in row])


def run_sweep(cfg: ExperimentConfig, experiment: str, out: Path, threads: int = 1) -> int:
    if experiment not in SWEEPS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    records, summary, plot = SWEEPS[experiment](cfg, threads)
    write_outputs(out, experiment, records, summary, plot)
    payload = {"command": f"sweep {experiment}", "config": cfg.provenance(),
               "timestamp": record_timestamp(cfg.timestamp), "summary": summary, "records": len(records)}
    _write_report(out, json.loads(json.dumps(payload, default=float)))
    print(json.dumps(summary, sort_keys=True, default=float))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="amalgamlab", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI experiment configuration")
    common.add_argument("--out", help="output directory (default: [output] dir or ./out)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for parameter cells")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("verify", parents=[common], help="run the invariant suites")
    sw = sub.add_parser("sweep", parents=[common], help="run a measurement sweep")
    sw.add_argument("experiment", choices=EXPERIMENTS)
    sub.add_parser("flow-check", parents=[common], help="run the Hamiltonian flow suites")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        out = Path(args.out or cfg.out_dir)
        if args.command == "verify":
            return run_verify(cfg, out, args.threads)
        if args.command == "flow-check":
            return run_flow_check(cfg, out, args.threads)
        return run_sweep(cfg, args.experiment, out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DecayViolation, ValueError, ArithmeticError) as exc:
        print(f"computation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
