"""Invariant suite run by ``nlpcm check``.

Each check returns a :class:`CheckResult`; nothing here raises on a
violation, so the CLI can report every failure before exiting.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ..grid import DomainSpec, build_grid
from ..kernel import KernelSpec
from ..nonlocal_solver import CoefficientField, NonlocalDiscretization, solve
from ..quadrature import build_table
from ..random_field import CovarianceSpec, build_kl_field
from ..sparse_grid import Rule1D, build_sparse_grid

__all__ = ["CheckResult", "GEOMETRIES", "run_checks"]

GEOMETRIES = {
    "interval": (DomainSpec.interval(-1.0, 1.0), 1 / 20),
    "box": (DomainSpec.box([(-1.0, 1.0), (-1.0, 1.0)]), 1 / 8),
    "unit box": (DomainSpec.box([(0.0, 1.0), (0.0, 1.0)]), 1 / 16),
    "disk": (DomainSpec.disk((0.0, 0.0), 1.0), 1 / 8),
}


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.ok else 'FAIL'}] {self.name}: {self.detail}"


def _setup(dom, h, ratio):
    g = build_grid(dom, h, ratio * h)
    k = KernelSpec(dom.dim, ratio * h)
    return g, k, build_table(g, k)


def _smooth_coeff(dim):
    def a(x, xi):
        return 1.5 + 0.5 * np.sin(np.sum(x, axis=1) + xi[0])
    return CoefficientField.harmonic(a)


def check_weights(ratios=(2.8, 3.8)) -> list:
    out = []
    for (name, (dom, h)), r in itertools.product(GEOMETRIES.items(), ratios):
        g, k, T = _setup(dom, h, r)
        w = T.weights
        pos = bool(np.all(w > 0))
        res = float(np.max(T.residual))
        # weight of offset m equals that of -m on the shared stencil
        off = g.nbr_off
        key = {tuple(m): wi for m, wi in zip(off.tolist(), w.tolist())}
        sym = max(abs(key[tuple(m)] - key[tuple(-np.asarray(m))]) for m in key) / float(w.max())
        out.append(CheckResult(f"weights {name} delta/h={r}", pos and res <= 1e-10 and sym <= 1e-12,
                               f"min w/h^d={w.min() / h**dom.dim:.4f}, residual={res:.1e}, "
                               f"asymmetry={sym:.1e}"))
    return out


def check_operator(rng) -> list:
    out = []
    for name, (dom, h) in GEOMETRIES.items():
        g, k, T = _setup(dom, h, 3.8)
        D = NonlocalDiscretization(g, k, T)
        coeff = _smooth_coeff(dom.dim)
        xi = np.array([0.3])
        Lc = D.operator(coeff, xi, np.full(g.M, 2.5))
        out.append(CheckResult(f"constant annihilation {name}", bool(np.all(Lc == 0.0)),
                               f"max |L_h[c]| = {np.abs(Lc).max():.1e}"))
        Q = D.assemble(coeff, xi, 0.0, 0.0).matrix
        asym = float(abs(Q - Q.T).max() / abs(Q).max())
        out.append(CheckResult(f"stiffness symmetry {name}", asym <= 1e-12, f"relative {asym:.1e}"))
    dom, h = GEOMETRIES["interval"]
    g, k, T = _setup(dom, h, 3.8)
    D = NonlocalDiscretization(g, k, T)
    ones = CoefficientField(lambda x, y, xi: np.full(x.shape[0], 1.0))
    lin = lambda p: 0.7 * p[:, 0] - 0.2
    u = solve(D.assemble(ones, None, 0.0, lin))
    err = float(np.abs(u - lin(g.points)).max())
    out.append(CheckResult("linear patch 1D", err <= 1e-9, f"max error {err:.1e}"))
    return out


def check_max_principle(rng, instances: int = 200) -> list:
    out = []
    for name, (dom, h) in GEOMETRIES.items():
        g, k, T = _setup(dom, h, 2.8)
        D = NonlocalDiscretization(g, k, T)
        coeff = _smooth_coeff(dom.dim)
        bad = 0
        for t in range(instances):
            sign = 1.0 if t % 2 == 0 else -1.0
            f = sign * rng.uniform(0.0, 2.0, g.n_interior)
            uD = rng.normal(0.0, 1.0, g.collar.size)
            xi = rng.uniform(-1.0, 1.0, 1)
            u = solve(D.assemble(coeff, xi, f, uD))
            ui, uc = u[g.interior], u[g.collar]
            if sign > 0:
                bad += int(ui.min() < uc.min() - 1e-12)
            else:
                bad += int(ui.max() > uc.max() + 1e-12)
        out.append(CheckResult(f"maximum principle {name}", bad == 0,
                               f"{bad} violations in {instances} instances"))
    return out


def check_smolyak(rng) -> list:
    out = []
    worst = 0.0
    for N, eta in itertools.product(range(1, 6), range(0, 5)):
        plan = build_sparse_grid(N, eta, Rule1D("cc"))
        # random polynomial of total degree <= eta against exact U[-1,1] moments
        for _ in range(3):
            terms = [(c, e) for e in itertools.product(range(eta + 1), repeat=N)
                     if sum(e) <= eta for c in [rng.normal()]]
            exact = sum(c * np.prod([0.0 if p % 2 else 1.0 / (p + 1) for p in e]) for c, e in terms)
            vals = sum(c * np.prod(plan.nodes ** np.array(e), axis=1) for c, e in terms)
            err = abs(plan.integrate(vals) - exact) / max(1.0, abs(exact))
            worst = max(worst, err)
    out.append(CheckResult("Smolyak exactness N<=5, eta<=4", worst <= 1e-10, f"worst {worst:.1e}"))
    return out


def check_kl() -> list:
    fld = build_kl_field(CovarianceSpec(1.0, (1.0, 1.0), 4.0))
    ax = fld.axes[0]
    trace_err = abs(ax.trace - 2.0) / 2.0
    return [
        CheckResult("KL truncation sigma=1, eta=1", fld.counts == (2, 2), f"counts {fld.counts}"),
        CheckResult("KL trace identity", trace_err <= 5e-3, f"relative {trace_err:.1e}"),
    ]


def run_checks(seed: int = 0, instances: int = 200) -> list:
    rng = np.random.default_rng(seed)
    return (check_weights() + check_operator(rng) + check_max_principle(rng, instances)
            + check_smolyak(rng) + check_kl())
