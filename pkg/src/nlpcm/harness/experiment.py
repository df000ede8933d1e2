"""Experiment engine: offline stage per (h, delta), online stage per sample,
moments, reference comparison, Monte Carlo baseline and slope fits.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from ..errors import ConfigError, GridError
from ..grid import ParticleGrid, build_grid, odd_reflection
from ..kernel import KernelSpec
from ..local_solver import LocalProblem, solve_local_cached
from ..nonlocal_solver import NonlocalDiscretization, apply_reference_operator, solve
from ..quadrature import DEFAULT_MIN_RATIO, build_table
from ..sparse_grid import (Rule1D, SparseGridPlan, build_sparse_grid, map_to_distribution,
                           moment_estimates)
from .cases import Case, get_case

__all__ = [
    "ExperimentConfig",
    "ReportRow",
    "ConvergenceReport",
    "SlopeFit",
    "SpatialSetup",
    "run_case",
    "discrete_l2_error",
    "monte_carlo_moments",
    "fit_slope",
    "collocate",
    "pcm_moments",
    "reference_moments",
    "make_plan",
    "thread_count",
    "REPORT_VERSION",
    "COLUMNS",
]

log = logging.getLogger(__name__)

REPORT_VERSION = "# nlpcm-report v1"
COLUMNS = ("case", "h", "delta", "eta", "K", "err_mean", "err_std", "wall_ms")
DUMP_KINDS = ("grid", "weights", "plan", "eigs", "solutions")


def thread_count(cap: int | None = None) -> int:
    """Worker count: ``NLPCM_THREADS`` if set, else the CPU count, then ``cap``."""
    env = os.environ.get("NLPCM_THREADS")
    n = os.cpu_count() or 1
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"NLPCM_THREADS={env!r} is not an integer") from None
    if cap is not None:
        n = min(n, cap)
    return max(1, n)


# configuration ---------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """One study: a case, grid sizes, a delta rule, sparse levels and output.

    ``delta`` is ``("fixed", value)`` or ``("ratio", delta_over_h)``; ``None``
    fields fall back to the case defaults in :meth:`resolved`.
    """

    case: str
    h: tuple = ()
    eta: tuple = ()
    delta: tuple | None = None
    distribution: str | None = None
    mc_samples: int | None = None
    seed: int = 0
    output: str | None = None
    timing: bool = True
    reference: str | None = None
    reference_eta: int | None = None
    h_loc: float | None = None
    collar: str | None = None
    rule: str | None = None
    min_ratio: float = DEFAULT_MIN_RATIO
    cache_dir: str | None = None
    dump_dir: str | None = None
    dump: tuple = ()
    threads: int | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "case" not in d:
            raise ConfigError("config needs a 'case'")
        d = dict(d)
        delta = d.get("delta")
        if isinstance(delta, dict):
            if len(delta) != 1 or next(iter(delta)) not in ("fixed", "ratio"):
                raise ConfigError("delta must be {'fixed': value} or {'ratio': value}")
            d["delta"] = next(iter(delta.items()))
        elif delta is not None:
            d["delta"] = tuple(delta)
        for key in ("h", "eta", "dump"):
            if key in d:
                val = d[key]
                d[key] = tuple(val) if isinstance(val, (list, tuple)) else (val,)
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        return cfg.resolved()

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data)

    def resolved(self) -> "ExperimentConfig":
        """Fill defaults from the case and validate every field."""
        try:
            case = get_case(self.case)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
        hs = tuple(float(h) for h in (self.h or case.default_h))
        etas = tuple(int(e) for e in (self.eta or case.default_eta))
        delta = tuple(self.delta) if self.delta is not None else case.delta_rule
        dist = self.distribution or case.default_distribution
        ref = self.reference or case.reference
        collar = self.collar or case.collar_mode
        cfg = replace(self, h=hs, eta=etas, delta=(str(delta[0]), float(delta[1])),
                      distribution=dist, reference=ref, collar=collar, dump=tuple(self.dump))
        cfg._validate(case)
        return cfg

    def _validate(self, case: Case) -> None:
        if not self.h or any(not (h > 0 and math.isfinite(h)) for h in self.h):
            raise ConfigError(f"grid sizes must be positive: {self.h}")
        if any(e < 0 for e in self.eta):
            raise ConfigError(f"sparse levels must be nonnegative: {self.eta}")
        if self.delta[0] not in ("fixed", "ratio") or not self.delta[1] > 0:
            raise ConfigError(f"bad delta rule {self.delta}")
        if self.distribution not in case.distributions:
            raise ConfigError(f"case {case.name} has no distribution {self.distribution!r}; "
                              f"choose from {sorted(case.distributions)}")
        if self.reference not in ("closed", "local", "nonlocal"):
            raise ConfigError(f"reference must be closed, local or nonlocal, not {self.reference!r}")
        if self.reference == "closed" and case.exact is None:
            raise ConfigError(f"case {case.name} has no closed-form solution")
        if self.reference == "local" and case.local_a is None:
            raise ConfigError(f"case {case.name} has no local problem")
        if self.collar not in ("data", "odd"):
            raise ConfigError(f"collar must be data or odd, not {self.collar!r}")
        if self.collar == "odd" and case.domain.shape == "disk":
            raise ConfigError("odd collar reflection needs a box or interval domain")
        if self.mc_samples is not None and self.mc_samples < 1:
            raise ConfigError("mc_samples must be at least 1")
        if self.rule is not None:
            if self.rule not in ("cc", "gl", "gh"):
                raise ConfigError(f"rule must be cc, gl or gh, not {self.rule!r}")
            kind = case.distribution(self.distribution).kind
            if (self.rule == "gh") != (kind in ("gaussian", "lognormal")) or \
                    (self.rule == "cc" and kind != "uniform"):
                raise ConfigError(f"rule {self.rule} does not fit a {kind} input")
        bad = [k for k in self.dump if k not in DUMP_KINDS]
        if bad:
            raise ConfigError(f"unknown dump kinds {bad}; choose from {DUMP_KINDS}")
        for h in self.h:
            d = self.delta_for(h)
            if d / h < self.min_ratio * (1 - 1e-12):
                raise ConfigError(f"delta/h = {d / h:.3g} at h = {h:g} is below the "
                                  f"unisolvency guard {self.min_ratio}")

    def delta_for(self, h: float) -> float:
        kind, val = self.delta
        return float(val) if kind == "fixed" else float(val) * h


# spatial setup and collocation -------------------------------------------------

class SpatialSetup:
    """Offline stage for one ``(h, delta)``: grid, kernel, weights, pattern."""

    def __init__(self, case: Case, h: float, delta: float, *, min_ratio: float = DEFAULT_MIN_RATIO,
                 cache_dir: str | None = None, collar: str | None = None):
        self.case, self.h, self.delta = case, h, delta
        self.grid: ParticleGrid = build_grid(case.domain, h, delta)
        mode = collar or case.collar_mode
        self.collar_map = odd_reflection(self.grid) if mode == "odd" else None
        self.kernel = KernelSpec(case.dim, delta)
        self.table = build_table(self.grid, self.kernel, min_ratio=min_ratio)
        self.disc = NonlocalDiscretization(self.grid, self.kernel, self.table)
        self.cache_dir = cache_dir
        self._forcing: dict = {}

    @property
    def interior_points(self) -> np.ndarray:
        return self.grid.points[self.grid.interior]

    def forcing(self, xi) -> np.ndarray | float:
        case = self.case
        if case.forcing is not None:
            return case.forcing if not callable(case.forcing) else \
                np.asarray(case.forcing(self.interior_points, xi), dtype=float)
        key = tuple(np.asarray(xi, dtype=float).tolist())
        if key not in self._forcing:
            self._forcing[key] = self._derived_forcing(xi)
        return self._forcing[key]

    def _derived_forcing(self, xi) -> np.ndarray:
        # f = -L^delta[u] at interior nodes, from the closed-form solution
        case = self.case
        path = None
        if self.cache_dir:
            tag = hashlib.sha256(np.asarray([self.h, self.delta, *np.ravel(xi)], dtype=float)
                                 .tobytes()).hexdigest()[:20]
            path = os.path.join(self.cache_dir, f"forcing-{case.name}-{tag}.npy")
            if os.path.exists(path):
                return np.load(path)
        f = apply_reference_operator(self.kernel, case.coefficient, xi,
                                     lambda y: case.exact(y, xi), self.interior_points)
        if path:
            os.makedirs(self.cache_dir, exist_ok=True)
            tmp = f"{path}.{os.getpid()}.tmp.npy"
            np.save(tmp, f)
            os.replace(tmp, path)
        return f

    def solve_sample(self, xi) -> np.ndarray:
        """Full grid function of the discrete solution at one physical sample."""
        case = self.case
        sys_ = self.disc.assemble(case.coefficient, xi, self.forcing(xi),
                                  _collar_values(case, self.grid, xi), self.collar_map)
        return solve(sys_)


def _collar_values(case: Case, g: ParticleGrid, xi):
    if callable(case.collar):
        return case.collar(g.points[g.collar], xi)
    return case.collar


def _map_ordered(fun, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fun(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fun, items))


def collocate(setup: SpatialSetup, xis, *, threads: int = 1) -> np.ndarray:
    """Interior solution values, one row per physical sample."""
    interior = setup.grid.interior
    rows = _map_ordered(lambda xi: setup.solve_sample(xi)[interior], list(np.atleast_2d(xis)),
                        threads)
    return np.array(rows).reshape(len(rows), interior.size)


def make_plan(case: Case, eta: int, distribution: str | None = None,
              rule: str | None = None) -> SparseGridPlan:
    dist = case.distribution(distribution)
    plan = build_sparse_grid(case.n_params, eta, Rule1D(rule) if rule else dist.default_rule())
    return map_to_distribution(plan, dist)


def physical(plan: SparseGridPlan) -> np.ndarray:
    return plan.distribution.transform(plan.nodes)


def pcm_moments(setup: SpatialSetup, plan: SparseGridPlan, *, threads: int = 1):
    """``(mean, std, samples)`` of the discrete solution over a collocation plan."""
    u = collocate(setup, physical(plan), threads=threads)
    mean, std = moment_estimates(plan, u)
    return mean, std, u


def monte_carlo_moments(setup: SpatialSetup, M: int, seed: int, distribution: str | None = None,
                        *, threads: int = 1, batch: int = 256):
    """Sample mean and unbiased sample std of the discrete solution per node.

    Draws come from ``numpy.random.default_rng(seed)``; results depend only
    on ``(M, seed)``.  With ``M == 1`` the std is zero with a warning.
    """
    if M < 1:
        raise ValueError("need at least one Monte Carlo sample")
    case = setup.case
    dist = case.distribution(distribution)
    rng = np.random.default_rng(seed)
    xis = dist.sample(rng, (M, case.n_params))
    n = setup.grid.n_interior
    shift = None
    s1 = np.zeros(n)
    s2 = np.zeros(n)
    for start in range(0, M, batch):
        u = collocate(setup, xis[start:start + batch], threads=threads)
        if shift is None:
            shift = u[0].copy()
        d = u - shift
        s1 += d.sum(axis=0)
        s2 += (d * d).sum(axis=0)
    mean = shift + s1 / M
    if M == 1:
        warnings.warn("one Monte Carlo sample: std set to zero", RuntimeWarning, stacklevel=2)
        return mean, np.zeros(n)
    var = (s2 - s1 * s1 / M) / (M - 1)
    return mean, np.sqrt(np.maximum(var, 0.0))


# references ------------------------------------------------------------------------

def _local_problem(case: Case, xi, h_loc: float) -> LocalProblem:
    return LocalProblem(case.domain, case.local_a, case.local_f, case.collar, h_loc,
                        tuple(np.asarray(xi, dtype=float).tolist()))


def reference_moments(case: Case, setup: SpatialSetup, plan: SparseGridPlan, mode: str, *,
                      h_loc: float | None = None, cache_dir: str | None = None,
                      threads: int = 1, local_memo: dict | None = None):
    """Reference mean and std at the interior points of ``setup``.

    ``closed`` evaluates the closed form over ``plan``; ``local`` solves the
    local problem at every node of ``plan``; ``nonlocal`` runs the discrete
    solver itself over ``plan``.
    """
    pts = setup.interior_points
    xis = physical(plan)
    if mode == "closed":
        u = np.array([case.exact(pts, xi) for xi in xis])
    elif mode == "local":
        h_loc = h_loc or case.h_loc
        memo = {} if local_memo is None else local_memo

        def one(xi):
            key = tuple(np.asarray(xi, dtype=float).tolist())
            if key not in memo:
                memo[key] = solve_local_cached(_local_problem(case, xi, h_loc), case.name, cache_dir)
            return memo[key](pts)

        u = np.array(_map_ordered(one, list(xis), threads))
    elif mode == "nonlocal":
        u = collocate(setup, xis, threads=threads)
    else:
        raise ValueError(f"unknown reference mode {mode!r}")
    return moment_estimates(plan, u)


# error metrics and fits -----------------------------------------------------------

def discrete_l2_error(u, ref, grid: ParticleGrid) -> float:
    """``sqrt(h**d * sum over interior (u_i - ref_i)**2)``.

    ``u`` and an array ``ref`` may be given on all grid points or on the
    interior only; a callable ``ref`` is evaluated at the interior points.
    """
    n_int = grid.n_interior

    def interior(v, name):
        v = np.asarray(v, dtype=float)
        if v.shape == (grid.M,):
            return v[grid.interior]
        if v.shape == (n_int,):
            return v
        raise GridError(f"{name} has shape {v.shape}; grid has {grid.M} points, "
                        f"{n_int} interior")

    ui = interior(u, "u")
    if callable(ref):
        ri = np.asarray(ref(grid.points[grid.interior]), dtype=float)
    else:
        ri = interior(ref, "ref")
    return float(np.sqrt(grid.h ** grid.dim * np.sum((ui - ri) ** 2)))


@dataclass(frozen=True)
class SlopeFit:
    """Least-squares line through ``(log scale, log error)``; ``band`` is the
    95% half-width on the slope."""

    slope: float
    intercept: float
    band: float
    n: int

    def contains(self, lo: float, hi: float) -> bool:
        return lo <= self.slope <= hi


def fit_slope(scales, errors) -> SlopeFit:
    """Log-log least squares.

    Raises
    ------
    ValueError
        With fewer than three pairs or any nonpositive value.
    """
    x = np.asarray(scales, dtype=float)
    y = np.asarray(errors, dtype=float)
    if x.size != y.size or x.size < 3:
        raise ValueError("slope fit needs at least three (scale, error) pairs")
    if np.any(y <= 0) or np.any(x <= 0):
        raise ValueError("slope fit needs positive scales and errors")
    res = stats.linregress(np.log(x), np.log(y))
    tq = stats.t.ppf(0.975, x.size - 2)
    band = float(tq * res.stderr) if x.size > 2 else float("inf")
    return SlopeFit(float(res.slope), float(res.intercept), band, int(x.size))


# report ------------------------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    case: str
    h: float
    delta: float
    eta: int | str
    K: int
    err_mean: float
    err_std: float
    wall_ms: float

    def cells(self) -> list:
        return [self.case, repr(self.h), repr(self.delta), str(self.eta), str(self.K),
                repr(self.err_mean), repr(self.err_std), f"{self.wall_ms:.3f}"]


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)

    def slopes(self, against: str = "h", eta=None) -> dict:
        """Fits of ``err_mean`` and ``err_std`` against ``h`` or ``delta``
        over the PCM rows with level ``eta`` (the last level by default)."""
        pcm = [r for r in self.rows if r.eta != "mc"]
        if eta is None and pcm:
            eta = pcm[-1].eta
        sel = [r for r in pcm if r.eta == eta]
        x = [getattr(r, against) for r in sel]
        return {"err_mean": fit_slope(x, [r.err_mean for r in sel]),
                "err_std": fit_slope(x, [r.err_std for r in sel])}

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(REPORT_VERSION + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow(r.cells())
        text = buf.getvalue()
        if path:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "ConvergenceReport":
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        rd = csv.DictReader(lines)
        if rd.fieldnames is None or tuple(rd.fieldnames) != COLUMNS:
            raise ValueError(f"{path}: expected columns {','.join(COLUMNS)}")
        rows = []
        for rec in rd:
            eta = rec["eta"] if rec["eta"] == "mc" else int(rec["eta"])
            rows.append(ReportRow(rec["case"], float(rec["h"]), float(rec["delta"]), eta,
                                  int(rec["K"]), float(rec["err_mean"]), float(rec["err_std"]),
                                  float(rec["wall_ms"])))
        return cls(rows)


# driver ------------------------------------------------------------------------------------

def _dump_solution(path, setup: SpatialSetup, values) -> None:
    g = setup.grid
    pts = g.points[g.interior]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index", *["x", "y"][: g.dim], *values.keys()])
        cols = list(values.values())
        for r, i in enumerate(g.interior):
            w.writerow([int(i), *(repr(float(c)) for c in pts[r]), *(repr(float(c[r])) for c in cols)])


def run_case(cfg: ExperimentConfig) -> ConvergenceReport:
    """Run one study and return its report (also written to ``cfg.output``)."""
    cfg = cfg.resolved()
    case = get_case(cfg.case)
    threads = thread_count(cfg.threads)
    report = ConvergenceReport()
    dump = set(cfg.dump) if cfg.dump_dir else set()
    if dump:
        os.makedirs(cfg.dump_dir, exist_ok=True)
    clock = time.perf_counter if cfg.timing else (lambda: 0.0)
    plans: dict = {}
    local_memo: dict = {}

    def plan_for(eta):
        if eta not in plans:
            plans[eta] = make_plan(case, eta, cfg.distribution, cfg.rule)
        return plans[eta]

    if "eigs" in dump and "field" in case.extras:
        fld = case.extras["field"]
        for k, ax in enumerate(fld.axes):
            ax.to_csv(os.path.join(cfg.dump_dir, f"eigs_axis{k + 1}.csv"), max(fld.counts[k], 1))

    for hi, h in enumerate(cfg.h):
        delta = cfg.delta_for(h)
        t0 = clock()
        setup = SpatialSetup(case, h, delta, min_ratio=cfg.min_ratio, cache_dir=cfg.cache_dir,
                             collar=cfg.collar)
        offline_ms = (clock() - t0) * 1e3
        log.info("%s: h=%g delta=%g M=%d interior=%d", case.name, h, delta, setup.grid.M,
                 setup.grid.n_interior)
        if "grid" in dump:
            setup.grid.to_csv(os.path.join(cfg.dump_dir, f"grid_h{hi}.csv"))
        if "weights" in dump:
            setup.table.to_csv(os.path.join(cfg.dump_dir, f"weights_h{hi}.csv"))

        ref_cache: dict = {}

        def reference(eta):
            ref_eta = cfg.reference_eta
            if ref_eta is None:
                ref_eta = eta if cfg.reference == "local" else eta + (4 if cfg.reference == "closed" else 2)
            if ref_eta not in ref_cache:
                ref_cache[ref_eta] = reference_moments(
                    case, setup, plan_for(ref_eta), cfg.reference, h_loc=cfg.h_loc,
                    cache_dir=cfg.cache_dir, threads=threads, local_memo=local_memo)
            return ref_cache[ref_eta]

        for eta in cfg.eta:
            plan = plan_for(eta)
            if "plan" in dump and hi == 0:
                plan.to_csv(os.path.join(cfg.dump_dir, f"plan_eta{eta}.csv"))
            t0 = clock()
            mean, std, u = pcm_moments(setup, plan, threads=threads)
            ms = (clock() - t0) * 1e3 + offline_ms
            rmean, rstd = reference(eta)
            row = ReportRow(case.name, h, delta, eta, plan.K,
                            discrete_l2_error(mean, rmean, setup.grid),
                            discrete_l2_error(std, rstd, setup.grid), ms if cfg.timing else 0.0)
            report.rows.append(row)
            log.info("  eta=%d K=%d err_mean=%.3e err_std=%.3e", eta, plan.K, row.err_mean,
                     row.err_std)
            if "solutions" in dump:
                base = os.path.join(cfg.dump_dir, f"moments_h{hi}_eta{eta}.csv")
                _dump_solution(base, setup, {"mean": mean, "std": std, "ref_mean": rmean,
                                             "ref_std": rstd})
                for k in range(plan.K):
                    _dump_solution(os.path.join(cfg.dump_dir, f"solution_h{hi}_eta{eta}_k{k}.csv"),
                                   setup, {"u": u[k]})

        if cfg.mc_samples:
            t0 = clock()
            mmean, mstd = monte_carlo_moments(setup, cfg.mc_samples, cfg.seed, cfg.distribution,
                                              threads=threads)
            ms = (clock() - t0) * 1e3 + offline_ms
            rmean, rstd = reference(max(cfg.eta))
            report.rows.append(ReportRow(case.name, h, delta, "mc", cfg.mc_samples,
                                         discrete_l2_error(mmean, rmean, setup.grid),
                                         discrete_l2_error(mstd, rstd, setup.grid),
                                         ms if cfg.timing else 0.0))
    if cfg.output:
        report.to_csv(cfg.output)
    return report
