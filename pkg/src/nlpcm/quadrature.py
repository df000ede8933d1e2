"""Optimization-based one-point quadrature on kernel-weighted balls.

For an interior particle ``x_i`` with neighbours ``x_j`` in the open ball,
the weights minimise ``sum_j w_j**2 * W_j / 2`` subject to integrating
``p(y - x) * gamma(|y - x|)`` exactly for every cubic ``p``.  Eliminating
the multipliers gives

    w = W^{-1} H^T (H W^{-1} H^T)^+ g,     W = diag(gamma_j),

so ``w_j`` is a cubic polynomial in the offset evaluated at ``x_j``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import UnisolvencyError
from .grid import ParticleGrid, neighbors
from .kernel import KernelSpec, ball_moment, eval_kernel, multi_indices

__all__ = [
    "REPRODUCING_DEGREE",
    "ReproducingBasis",
    "WeightSolve",
    "QuadratureTable",
    "compute_weights",
    "stencil_weights",
    "build_table",
    "apply_quadrature",
]

log = logging.getLogger(__name__)

REPRODUCING_DEGREE = 3
EIG_CUTOFF = 1e-12
RESIDUAL_TOL = 1e-10
# smallest delta/h used in the experiments; below it positivity is not checked
DEFAULT_MIN_RATIO = 2.8


class ReproducingBasis:
    """Monomials ``(y - x)**beta`` with ``|beta| <= 3`` times the kernel."""

    def __init__(self, dim: int, degree: int = REPRODUCING_DEGREE):
        self.dim = dim
        self.degree = degree
        self.betas = multi_indices(dim, degree)
        self.exponents = np.array(self.betas, dtype=int)

    def __len__(self):
        return len(self.betas)

    def monomials(self, z) -> np.ndarray:
        """Matrix ``P[beta, j] = z_j**beta`` for offsets ``z`` of shape (n, d)."""
        z = np.asarray(z, dtype=float)
        return np.prod(z[None, :, :] ** self.exponents[:, None, :], axis=2)

    def evaluate(self, k: KernelSpec, z) -> np.ndarray:
        """``H[beta, j] = gamma(|z_j|) * z_j**beta``."""
        gam = eval_kernel(k, np.linalg.norm(z, axis=1))
        return self.monomials(z) * gam[None, :]

    def targets(self, k: KernelSpec) -> np.ndarray:
        return np.array([ball_moment(k, b) for b in self.betas])


@dataclass(frozen=True)
class WeightSolve:
    weights: np.ndarray
    residual: float
    pinv_used: bool
    rank: int


def compute_weights(z, k: KernelSpec, basis: ReproducingBasis | None = None) -> WeightSolve:
    """Quadrature weights for one ball given neighbour offsets ``z = x_j - x_i``.

    The solve is done in offsets scaled by ``delta``; the reproduced
    constraint set is unchanged by this diagonal row scaling.

    Raises
    ------
    UnisolvencyError
        When the relative constraint residual exceeds ``1e-10`` even with
        the pseudo-inverse.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[1] != k.dim:
        raise ValueError(f"offsets must have shape (n, {k.dim})")
    if z.shape[0] == 0:
        raise UnisolvencyError("empty neighbourhood")
    basis = basis or ReproducingBasis(k.dim)
    y = z / k.delta
    gam = eval_kernel(k, np.linalg.norm(z, axis=1)) / k.prefactor
    P = basis.monomials(y)
    deg = basis.exponents.sum(axis=1)
    g = basis.targets(k) / (k.prefactor * k.delta ** deg)

    gram = (P * gam[None, :]) @ P.T
    lam, V = np.linalg.eigh(gram)
    keep = lam > EIG_CUTOFF * lam.max()
    coef = V[:, keep] @ ((V[:, keep].T @ g) / lam[keep])
    w_scaled = P.T @ coef
    res = np.abs((P * gam[None, :]) @ w_scaled - g).max() / np.abs(g).max()
    if not np.isfinite(res) or res > RESIDUAL_TOL:
        hmin = np.linalg.norm(z, axis=1).min()
        raise UnisolvencyError(
            f"quadrature constraints not met (residual {res:.2e}) with "
            f"{z.shape[0]} neighbours, h/delta ~ {hmin / k.delta:.3f}")
    # rows were divided by prefactor * delta**|beta|; the unknowns are untouched
    return WeightSolve(w_scaled, float(res), bool((~keep).any()), int(keep.sum()))


def stencil_weights(offsets, h: float, k: KernelSpec) -> WeightSolve:
    """Weights for an integer lattice stencil with spacing ``h``."""
    return compute_weights(np.asarray(offsets, dtype=float) * h, k)


@dataclass
class QuadratureTable:
    """Weights aligned with the grid's CSR neighbour lists."""

    grid: ParticleGrid
    kernel: KernelSpec
    weights: np.ndarray
    residual: np.ndarray
    pinv_used: np.ndarray
    n_solves: int

    def row_weights(self, i: int) -> np.ndarray:
        r = self.grid.row(i)
        return self.weights[self.grid.nbr_ptr[r]:self.grid.nbr_ptr[r + 1]]

    def pair_weight(self, i: int, j: int) -> float:
        nb = neighbors(self.grid, i)
        pos = np.flatnonzero(nb == j)
        if pos.size == 0:
            raise KeyError(f"{j} is not a neighbour of {i}")
        return float(self.row_weights(i)[pos[0]])

    def to_csv(self, path) -> None:
        g = self.grid
        rows = g.neighbor_rows()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "weight"])
            for r, j, wt in zip(rows, g.nbr_idx, self.weights):
                w.writerow([int(g.interior[r]), int(j), repr(float(wt))])


def build_table(g: ParticleGrid, k: KernelSpec, min_ratio: float = DEFAULT_MIN_RATIO) -> QuadratureTable:
    """Solve for every interior row, sharing solves between identical stencils.

    ``min_ratio`` is the smallest admissible ``delta/h``; coarser grids are
    rejected because unisolvency and positivity are not guaranteed there.
    """
    if k.delta / g.h < min_ratio * (1 - 1e-12):
        raise UnisolvencyError(
            f"delta/h = {k.delta / g.h:.3f} is below the admissible ratio {min_ratio}")
    if abs(k.delta - g.delta) > 1e-14 * g.delta:
        raise ValueError("kernel horizon differs from the grid horizon")
    basis = ReproducingBasis(k.dim)
    weights = np.empty(g.nbr_idx.size)
    residual = np.empty(g.n_interior)
    pinv = np.zeros(g.n_interior, dtype=bool)
    memo: dict[bytes, WeightSolve] = {}
    for r in range(g.n_interior):
        a, b = g.nbr_ptr[r], g.nbr_ptr[r + 1]
        off = g.nbr_off[a:b]
        key = off.tobytes()
        sol = memo.get(key)
        if sol is None:
            sol = compute_weights(off * g.h, k, basis)
            memo[key] = sol
        weights[a:b] = sol.weights
        residual[r] = sol.residual
        pinv[r] = sol.pinv_used
    log.debug("quadrature: %d rows, %d distinct stencils", g.n_interior, len(memo))
    return QuadratureTable(g, k, weights, residual, pinv, len(memo))


def apply_quadrature(g: ParticleGrid, k: KernelSpec, Q: QuadratureTable, i: int, f) -> float:
    """``sum_j f(x_i, x_j) * w_{j,i}`` for a vectorised two-point function ``f``."""
    nb = neighbors(g, i)
    xi = np.broadcast_to(g.points[i], g.points[nb].shape)
    return float(np.dot(f(xi, g.points[nb]), Q.row_weights(i)))
