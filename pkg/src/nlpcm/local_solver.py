"""Classical reference solver for ``-div(a grad u) = f`` with Dirichlet data.

Flux-conservative second-order finite differences with harmonic face
averages of the nodal diffusivity.  Intervals and boxes use a vertex-centred
lattice; the disk is solved in polar coordinates for radial data, which
removes the curved-boundary error altogether.
"""
from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicSpline, RegularGridInterpolator

from .errors import CoefficientError, GridError, SolverError
from .grid import DomainSpec

__all__ = ["LocalProblem", "LocalSolution", "solve_local", "solve_local_cached", "cache_key"]

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class LocalProblem:
    """Local diffusion problem at one parameter sample.

    ``a``, ``f`` and ``u_D`` take an ``(n, d)`` array of points and the
    parameter vector; ``f`` and ``u_D`` may also be plain numbers.  For the
    disk, ``a``, ``f`` and ``u_D`` must be radial.
    """

    domain: DomainSpec
    a: Callable
    f: Callable | float
    u_D: Callable | float
    h_loc: float
    xi: tuple = ()


def _eval(fun, pts, xi):
    if callable(fun):
        return np.broadcast_to(np.asarray(fun(pts, xi), dtype=float), (pts.shape[0],)).copy()
    return np.full(pts.shape[0], float(fun))


def _harm(a, b):
    return 2.0 * a * b / (a + b)


def _check_a(a, pts):
    bad = ~(np.isfinite(a) & (a > 0))
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        raise CoefficientError(f"local diffusivity a={a[j]!r} not positive at x={pts[j]}")


@dataclass
class LocalSolution:
    """Nodal solution on the local lattice with an interpolating evaluator."""

    domain: DomainSpec
    axes: tuple
    values: np.ndarray
    residual: float

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.domain.shape == "disk":
            r = np.linalg.norm(x - np.asarray(self.domain.center), axis=1)
            if np.any(r > self.domain.radius * (1 + 1e-12)):
                raise GridError("evaluation point outside the disk")
            return CubicSpline(self.axes[0], self.values)(np.minimum(r, self.axes[0][-1]))
        if self.domain.dim == 1:
            return CubicSpline(self.axes[0], self.values)(x[:, 0])
        interp = RegularGridInterpolator(self.axes, self.values, method="linear")
        return interp(x)


def _box_axes(dom: DomainSpec, h: float):
    axes = []
    for lo, hi in dom.bounding_box():
        n = int(round((hi - lo) / h))
        if n < 2 or abs(n * h - (hi - lo)) > 1e-9 * (hi - lo):
            raise GridError(f"h_loc={h} does not divide the side [{lo}, {hi}]")
        axes.append(lo + (hi - lo) * np.arange(n + 1) / n)
    return axes


def _solve(A, b):
    u = spla.spsolve(A.tocsc(), b)
    res = float(np.linalg.norm(A @ u - b) / max(np.linalg.norm(b), 1e-300))
    if not res <= RESIDUAL_TOL:
        raise SolverError(f"local solve residual {res:.2e} exceeds {RESIDUAL_TOL:.0e}")
    return u, res


def _solve_interval(p: LocalProblem) -> LocalSolution:
    (x,) = _box_axes(p.domain, p.h_loc)
    h = x[1] - x[0]
    pts = x[:, None]
    a = _eval(p.a, pts, p.xi)
    _check_a(a, pts)
    aw = _harm(a[:-1], a[1:])
    n = x.size - 2
    main = (aw[:-1] + aw[1:]) / h**2
    off = -aw[1:-1] / h**2
    A = sp.diags([off, main, off], [-1, 0, 1], format="csr")
    b = _eval(p.f, pts[1:-1], p.xi)
    ub = _eval(p.u_D, pts[[0, -1]], p.xi)
    b[0] += aw[0] * ub[0] / h**2
    b[-1] += aw[-1] * ub[1] / h**2
    u_in, res = _solve(A, b) if n > 0 else (np.zeros(0), 0.0)
    return LocalSolution(p.domain, (x,), np.concatenate([[ub[0]], u_in, [ub[1]]]), res)


def _solve_box(p: LocalProblem) -> LocalSolution:
    xs, ys = _box_axes(p.domain, p.h_loc)
    hx, hy = xs[1] - xs[0], ys[1] - ys[0]
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    a = _eval(p.a, pts, p.xi).reshape(X.shape)
    _check_a(a.ravel(), pts)
    nx, ny = X.shape
    bnd = np.zeros(X.shape, dtype=bool)
    bnd[[0, -1], :] = True
    bnd[:, [0, -1]] = True
    u = np.zeros(X.shape)
    u[bnd] = _eval(p.u_D, pts[bnd.ravel()], p.xi)

    num = -np.ones(X.shape, dtype=np.int64)
    num[~bnd] = np.arange(int((~bnd).sum()))
    n = int((~bnd).sum())
    f = _eval(p.f, pts[(~bnd).ravel()], p.xi)

    ax = _harm(a[:-1, :], a[1:, :]) / hx**2     # face between (i, j) and (i+1, j)
    ay = _harm(a[:, :-1], a[:, 1:]) / hy**2
    rows, cols, vals = [], [], []
    diag = np.zeros(X.shape)
    b = np.zeros(X.shape)
    for face, sl_a, sl_b in ((ax, (slice(None, -1), slice(None)), (slice(1, None), slice(None))),
                             (ay, (slice(None), slice(None, -1)), (slice(None), slice(1, None)))):
        for s_me, s_other in ((sl_a, sl_b), (sl_b, sl_a)):
            me, other = num[s_me], num[s_other]
            live = me >= 0
            diag[s_me] += np.where(live, face, 0.0)
            link = live & (other >= 0)
            rows.append(me[link])
            cols.append(other[link])
            vals.append(-face[link])
            to_bnd = live & (other < 0)
            b[s_me] += np.where(to_bnd, face * u[s_other], 0.0)
    rows.append(num[~bnd])
    cols.append(num[~bnd])
    vals.append(diag[~bnd])
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    u_in, res = _solve(A, f + b[~bnd])
    u[~bnd] = u_in
    return LocalSolution(p.domain, (xs, ys), u, res)


def _solve_disk(p: LocalProblem) -> LocalSolution:
    # -(1/r)(r a u')' = f on [0, R]; symmetric half cell at r = 0
    R = p.domain.radius
    n = int(round(R / p.h_loc))
    if n < 2:
        raise GridError(f"h_loc={p.h_loc} too coarse for radius {R}")
    r = R * np.arange(n + 1) / n
    dr = r[1] - r[0]
    c = np.asarray(p.domain.center)
    ray = c + np.stack([r, np.zeros_like(r)], axis=1)
    a = _eval(p.a, ray, p.xi)
    _check_a(a, ray)
    rf = 0.5 * (r[:-1] + r[1:])
    flux = rf * _harm(a[:-1], a[1:]) / dr            # face i+1/2
    vol = np.empty(n)
    vol[0] = dr**2 / 8.0
    vol[1:] = r[1:n] * dr
    f = _eval(p.f, ray[:n], p.xi) * vol
    main = flux[:n].copy()
    main[1:] += flux[: n - 1]
    off = -flux[: n - 1]
    A = sp.diags([off, main, off], [-1, 0, 1], format="csr")
    ub = float(_eval(p.u_D, ray[[-1]], p.xi)[0])
    f[-1] += flux[n - 1] * ub
    u_in, res = _solve(A, f)
    return LocalSolution(p.domain, (r,), np.append(u_in, ub), res)


def solve_local(p: LocalProblem) -> LocalSolution:
    """Solve one local problem.

    Raises
    ------
    SolverError
        If the sparse solve leaves a relative residual above 1e-10.
    CoefficientError
        If ``a`` is not positive and finite at every node.
    """
    if p.domain.shape == "disk":
        return _solve_disk(p)
    if p.domain.dim == 1:
        return _solve_interval(p)
    if p.domain.dim == 2:
        return _solve_box(p)
    raise GridError("local solver supports intervals, 2D boxes and disks")


def cache_key(case_id: str, xi, h_loc: float) -> str:
    xi = np.ascontiguousarray(np.asarray(xi, dtype=float))
    digest = hashlib.sha256(xi.tobytes()).hexdigest()[:16]
    return f"{case_id}-{digest}-{float(h_loc)!r}"


def solve_local_cached(p: LocalProblem, case_id: str, cache_dir=None) -> LocalSolution:
    """:func:`solve_local` with an optional ``.npz`` cache per (case, xi, h_loc)."""
    if cache_dir is None:
        return solve_local(p)
    os.makedirs(cache_dir, exist_ok=True)
    path = os.path.join(cache_dir, cache_key(case_id, p.xi, p.h_loc) + ".npz")
    if os.path.exists(path):
        with np.load(path) as z:
            axes = tuple(z[f"axis{i}"] for i in range(int(z["naxes"])))
            return LocalSolution(p.domain, axes, z["values"], float(z["residual"]))
    sol = solve_local(p)
    tmp = path + f".{os.getpid()}.tmp.npz"
    np.savez(tmp, values=sol.values, residual=sol.residual, naxes=len(sol.axes),
             **{f"axis{i}": ax for i, ax in enumerate(sol.axes)})
    os.replace(tmp, path)
    return sol
