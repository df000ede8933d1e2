"""Assembly and solution of the discrete nonlocal diffusion problem.

At an interior particle the scheme reads

    -L_h[u]_i = -2 sum_j A(x_i, x_j) gamma_ij (u_j - u_i) w_ji = f_i,

with Dirichlet volume data on the collar moved to the right-hand side.
The interior block is symmetric and, for positive weights, an M-matrix.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import roots_jacobi

from .errors import CoefficientError, SolverError
from .grid import ParticleGrid
from .kernel import KernelSpec, eval_kernel
from .quadrature import QuadratureTable

__all__ = [
    "CoefficientField",
    "NonlocalDiscretization",
    "StiffnessSystem",
    "assemble",
    "solve",
    "nonlocal_operator",
    "apply_reference_operator",
    "DIRECT_SOLVE_LIMIT",
]

log = logging.getLogger(__name__)

DIRECT_SOLVE_LIMIT = 200_000
RESIDUAL_TOL = 1e-10


def harmonic_mean(a_x, a_y):
    return 2.0 / (1.0 / a_x + 1.0 / a_y)


@dataclass(frozen=True)
class CoefficientField:
    """Two-point diffusivity ``A(x, y, xi)``, vectorised over rows of x and y.

    ``local`` is the pointwise diffusivity ``a(x, xi)`` when the two-point
    coefficient is its harmonic-mean lift; it is what the local limit sees.
    """

    two_point: Callable
    local: Callable | None = None
    is_harmonic: bool = False

    @classmethod
    def harmonic(cls, local: Callable) -> "CoefficientField":
        def two_point(x, y, xi):
            return harmonic_mean(local(x, xi), local(y, xi))
        return cls(two_point, local, True)

    def local_values(self, x, xi) -> np.ndarray:
        """Pointwise ``a(x, xi)``, checked to be finite and positive."""
        if self.local is None:
            raise CoefficientError("coefficient has no pointwise (local) form")
        x = np.atleast_2d(x)
        vals = np.broadcast_to(np.asarray(self.local(x, xi), dtype=float), (x.shape[0],))
        bad = ~(np.isfinite(vals) & (vals > 0))
        if bad.any():
            j = int(np.flatnonzero(bad)[0])
            raise CoefficientError(f"local diffusivity a={vals[j]!r} not in (0, inf) at "
                                   f"x={x[j]}, xi={np.asarray(xi).tolist()}")
        return vals

    def __call__(self, x, y, xi) -> np.ndarray:
        vals = np.asarray(self.two_point(x, y, xi), dtype=float)
        vals = np.broadcast_to(vals, (np.atleast_2d(x).shape[0],))
        bad = ~(np.isfinite(vals) & (vals > 0))
        if bad.any():
            j = int(np.flatnonzero(bad)[0])
            raise CoefficientError(
                f"coefficient A={vals[j]!r} not in (0, inf) at x={np.atleast_2d(x)[j]}, "
                f"y={np.atleast_2d(y)[j]}, xi={np.asarray(xi).tolist()}")
        return vals


def _values_on(points: np.ndarray, data, name: str) -> np.ndarray:
    if callable(data):
        vals = np.asarray(data(points), dtype=float)
        return np.broadcast_to(vals, (points.shape[0],)).copy()
    vals = np.asarray(data, dtype=float)
    if vals.ndim == 0:
        return np.full(points.shape[0], float(vals))
    if vals.shape != (points.shape[0],):
        raise ValueError(f"{name} has shape {vals.shape}, expected ({points.shape[0]},)")
    return vals


class NonlocalDiscretization:
    """Sample-independent part of the operator: pattern, kernel values, weights.

    Building one of these per ``(h, delta)`` and calling :meth:`assemble`
    per parameter sample reuses everything except the coefficient values.
    """

    def __init__(self, g: ParticleGrid, k: KernelSpec, table: QuadratureTable):
        self.grid, self.kernel, self.table = g, k, table
        self.rows = g.neighbor_rows()
        self.cols = g.nbr_idx
        xi = g.points[g.interior[self.rows]]
        xj = g.points[self.cols]
        self.x_row, self.x_col = xi, xj
        self.static = 2.0 * eval_kernel(k, np.linalg.norm(xj - xi, axis=1)) * table.weights
        col_row = g._row_of[self.cols]
        self.couples_interior = col_row >= 0
        self.col_row = col_row
        collar_pos = np.full(g.M, -1, dtype=np.int64)
        collar_pos[g.collar] = np.arange(g.collar.size)
        self._collar_pos = collar_pos[self.cols]

        n = g.n_interior
        off = self.couples_interior
        r = np.concatenate([self.rows[off], np.arange(n)])
        c = np.concatenate([col_row[off], np.arange(n)])
        order = np.arange(r.size, dtype=float) + 1.0
        pattern = sp.csr_matrix((order, (r, c)), shape=(n, n))
        pattern.sort_indices()
        self._perm = pattern.data.astype(np.int64) - 1
        self._indptr, self._indices = pattern.indptr, pattern.indices

    def edge_values(self, coeff: CoefficientField, xi) -> np.ndarray:
        """``2 A(x_i, x_j) gamma_ij w_ji`` for every CSR neighbour entry."""
        if coeff.is_harmonic:
            # one evaluation per particle instead of two per edge
            a = coeff.local_values(self.grid.points, xi)
            A = harmonic_mean(a[self.grid.interior[self.rows]], a[self.cols])
            return A * self.static
        return coeff(self.x_row, self.x_col, xi) * self.static

    def operator(self, coeff: CoefficientField, xi, v) -> np.ndarray:
        """``L_h[v]`` at interior rows for a grid function ``v`` on all points."""
        v = np.asarray(v, dtype=float)
        ev = self.edge_values(coeff, xi)
        vi = v[self.grid.interior[self.rows]]
        return np.bincount(self.rows, ev * (v[self.cols] - vi), minlength=self.grid.n_interior)

    def assemble(self, coeff: CoefficientField, xi, f, u_D, collar_map=None) -> "StiffnessSystem":
        """Stiffness system at one sample.

        ``collar_map`` (sparse, collar x interior) makes the collar data
        affine in the unknowns, ``u_collar = collar_map @ u_int + u_D``;
        see :func:`nlpcm.grid.odd_reflection`.
        """
        g = self.grid
        n = g.n_interior
        ev = self.edge_values(coeff, xi)
        diag = np.bincount(self.rows, ev, minlength=n)
        data_coo = np.concatenate([-ev[self.couples_interior], diag])
        Q = sp.csr_matrix((data_coo[self._perm], self._indices, self._indptr), shape=(n, n))

        f_int = _values_on(g.points[g.interior], f, "f")
        u_col = _values_on(g.points[g.collar], u_D, "u_D")
        coll = ~self.couples_interior
        C = sp.csr_matrix((ev[coll], (self.rows[coll], self._collar_pos[coll])),
                          shape=(n, g.collar.size))
        return StiffnessSystem(g, Q, C, f_int + C @ u_col, u_col, diag, collar_map)


@dataclass
class StiffnessSystem:
    """Interior stiffness matrix, collar coupling, right-hand side, collar data.

    ``matrix @ u_int - coupling @ u_collar`` is ``-L_h[u]`` at interior rows.
    With a ``collar_map`` S the collar values are ``S u_int + u_collar`` and
    the system solved is ``(matrix - coupling S) u_int = rhs``.
    """

    grid: ParticleGrid
    matrix: sp.csr_matrix
    coupling: sp.csr_matrix
    rhs: np.ndarray
    u_collar: np.ndarray
    diagonal: np.ndarray
    collar_map: sp.csr_matrix | None = None

    @property
    def system_matrix(self) -> sp.csr_matrix:
        if self.collar_map is None:
            return self.matrix
        return (self.matrix - self.coupling @ self.collar_map).tocsr()

    def full(self, u_interior) -> np.ndarray:
        u = np.empty(self.grid.M)
        u[self.grid.interior] = u_interior
        u[self.grid.collar] = self.u_collar
        if self.collar_map is not None:
            u[self.grid.collar] += self.collar_map @ u_interior
        return u

    def apply(self, v) -> np.ndarray:
        """``-L_h[v]`` at interior rows for ``v`` given on all points."""
        g = self.grid
        v = np.asarray(v, dtype=float)
        return self.matrix @ v[g.interior] - self.coupling @ v[g.collar]

    def residual(self, u_interior) -> float:
        r = self.system_matrix @ u_interior - self.rhs
        return float(np.linalg.norm(r) / max(np.linalg.norm(self.rhs), 1e-300))

    def to_csv(self, path, u) -> None:
        g = self.grid
        names = ["x", "y", "z"][: g.dim]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["index", *names, "u"])
            for i, (p, val) in enumerate(zip(g.points, u)):
                w.writerow([i, *(repr(float(c)) for c in p), repr(float(val))])


def assemble(g: ParticleGrid, k: KernelSpec, Q: QuadratureTable, coeff: CoefficientField,
             xi, f, u_D, collar_map=None) -> StiffnessSystem:
    """One-shot assembly; prefer :class:`NonlocalDiscretization` for many samples."""
    return NonlocalDiscretization(g, k, Q).assemble(coeff, xi, f, u_D, collar_map)


def nonlocal_operator(g: ParticleGrid, k: KernelSpec, Q: QuadratureTable,
                      coeff: CoefficientField, xi, v) -> np.ndarray:
    """``L_h[v]`` at interior rows, summed directly over the neighbour lists."""
    out = np.zeros(g.n_interior)
    vv = np.asarray(v, dtype=float)
    for r, i in enumerate(g.interior):
        a, b = g.nbr_ptr[r], g.nbr_ptr[r + 1]
        nb = g.nbr_idx[a:b]
        xi_rep = np.broadcast_to(g.points[i], g.points[nb].shape)
        A = coeff(xi_rep, g.points[nb], xi)
        gam = eval_kernel(k, np.linalg.norm(g.points[nb] - g.points[i], axis=1))
        out[r] = 2.0 * np.sum(A * gam * (vv[nb] - vv[i]) * Q.weights[a:b])
    return out


def solve(system: StiffnessSystem, *, rtol: float = RESIDUAL_TOL) -> np.ndarray:
    """Solve for the interior values; returns the grid function on all points.

    Sparse LU below :data:`DIRECT_SOLVE_LIMIT` unknowns, Jacobi-preconditioned
    CG above it (BiCGSTAB when a collar map makes the system nonsymmetric).

    Raises
    ------
    SolverError
        If the diagonal is not positive (assembly invariant broken), CG does
        not converge, or the final relative residual exceeds ``rtol``.
    """
    A, b = system.system_matrix, system.rhs
    n = b.size
    if n == 0:
        return system.full(np.zeros(0))
    diag = A.diagonal()
    if np.any(system.diagonal <= 0) or np.any(diag <= 0):
        raise SolverError("stiffness matrix has a nonpositive diagonal entry; "
                          "weights or coefficient violate the assembly invariants")
    if n <= DIRECT_SOLVE_LIMIT:
        u = spla.splu(A.tocsc()).solve(b)
    else:
        history: list[float] = []
        Minv = sp.diags(1.0 / diag)
        bnorm = np.linalg.norm(b)

        def cb(xk):
            history.append(float(np.linalg.norm(A @ xk - b) / bnorm))

        method = spla.cg if system.collar_map is None else spla.bicgstab
        u, info = method(A, b, rtol=rtol * 1e-2, maxiter=10 * n, M=Minv, callback=cb)
        if info != 0:
            raise SolverError(f"{method.__name__} did not converge (info={info}); residual history tail "
                              f"{history[-5:]}")
    res = system.residual(u)
    if not res <= rtol:
        raise SolverError(f"linear solve residual {res:.2e} exceeds {rtol:.0e}")
    return system.full(u)


def _angular_rule(dim: int, m: int):
    if dim == 1:
        return np.array([[-1.0], [1.0]]), np.array([1.0, 1.0])
    if dim == 2:
        phi = (np.arange(m) + 0.5) * (2 * np.pi / m)
        return np.stack([np.cos(phi), np.sin(phi)], axis=1), np.full(m, 2 * np.pi / m)
    raise ValueError("reference operator supports d = 1, 2")


def _polar_integral(k: KernelSpec, integrand, x, n_r: int, n_t: int) -> np.ndarray:
    # int_{B_delta} gamma(|z|) F(z) dz with Gauss-Jacobi in r (weight r^(d-1-s))
    beta = k.dim - 1 - k.s
    t, wt = roots_jacobi(n_r, 0.0, beta)
    rho = 0.5 * k.delta * (1.0 + t)
    w_r = wt * (0.5 * k.delta) ** (beta + 1.0)
    theta, w_t = _angular_rule(k.dim, n_t)
    z = rho[:, None, None] * theta[None, :, :]          # (n_r, n_t, d)
    z = z.reshape(-1, k.dim)
    w = (w_r[:, None] * w_t[None, :]).reshape(-1) * k.prefactor
    out = np.empty(x.shape[0])
    for a in range(x.shape[0]):
        out[a] = np.dot(w, integrand(x[a], x[a] + z))
    return out


def apply_reference_operator(k: KernelSpec, coeff: CoefficientField, xi, u: Callable, x,
                             *, atol: float = 1e-10, max_refine: int = 6) -> np.ndarray:
    """High-accuracy ``-L^delta[u](x)`` for closed-form ``u`` and coefficient.

    Polar quadrature (Gauss-Jacobi in the radius, periodic trapezoid in the
    angle) doubled until successive values agree to ``atol``.

    Raises
    ------
    SolverError
        If the tolerance is not met after ``max_refine`` doublings.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != k.dim:
        x = x.reshape(-1, k.dim)

    def integrand(xa, y):
        xr = np.broadcast_to(xa, y.shape)
        return coeff(xr, y, xi) * (u(y) - u(xr))

    n_r, n_t = 12, 32
    prev = _polar_integral(k, integrand, x, n_r, n_t)
    for _ in range(max_refine):
        n_r, n_t = 2 * n_r, 2 * n_t
        cur = _polar_integral(k, integrand, x, n_r, n_t)
        if np.max(np.abs(cur - prev)) <= atol:
            return -2.0 * cur
        prev = cur
    raise SolverError(f"reference operator did not reach atol={atol:g} "
                      f"(last change {np.max(np.abs(cur - prev)):.2e})")
