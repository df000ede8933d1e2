"""Karhunen-Loeve representation of a separable Gaussian-covariance field.

Each axis factor ``c * exp(-|x - y|**2 / ell)`` is discretised by Nystrom's
method with trapezoid weights.  The 2D field is the tensor product of the
truncated 1D expansions,

    a(x, xi) = a0 + sum_{i,j} sqrt(lam1_i lam2_j) phi1_i(x1) phi2_j(x2) xi_(i,j).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import CoefficientError, SolverError

__all__ = [
    "CovarianceSpec",
    "Eigenpairs1D",
    "KLField",
    "eig_decompose_1d",
    "truncate",
    "build_kl_field",
    "ELLIPTICITY_FLOOR",
]

ELLIPTICITY_FLOOR = 0.01
ENERGY = 0.9


@dataclass(frozen=True)
class CovarianceSpec:
    """Separable squared-exponential covariance
    ``sigma2 * exp(-|x1 - y1|**2 / ell[0] - |x2 - y2|**2 / ell[1])``.

    Each axis carries the factor ``sqrt(sigma2)`` so that the product of
    the two 1D covariances is the 2D one.
    """

    sigma2: float = 1.0
    lengths: tuple = (1.0, 1.0)
    mean: float = 4.0

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("variance must be nonnegative")
        if any(l <= 0 for l in self.lengths):
            raise ValueError("correlation lengths must be positive")

    def axis_kernel(self, axis: int):
        c, ell = np.sqrt(self.sigma2), self.lengths[axis]
        return lambda x, y: c * np.exp(-np.subtract.outer(x, y) ** 2 / ell)

    def __call__(self, x, y) -> np.ndarray:
        x, y = np.atleast_2d(x), np.atleast_2d(y)
        d2 = sum((x[:, k] - y[:, k]) ** 2 / self.lengths[k] for k in range(x.shape[1]))
        return self.sigma2 * np.exp(-d2)


@dataclass(frozen=True)
class Eigenpairs1D:
    """Nystrom eigenpairs on ``[a, b]``, eigenvalues in nonincreasing order.

    ``vectors[:, i]`` holds ``phi_i`` on ``nodes``; columns are orthonormal
    in the trapezoid inner product.
    """

    interval: tuple
    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    vectors: np.ndarray
    kernel: object

    @property
    def trace(self) -> float:
        return float(np.sum(self.values))

    def evaluate(self, x, n: int | None = None) -> np.ndarray:
        """``phi_i(x)`` for the first ``n`` pairs by Nystrom extension."""
        n = self.values.size if n is None else n
        x = np.asarray(x, dtype=float)
        lam = self.values[:n]
        if np.any(lam <= 0):
            raise ValueError("Nystrom extension needs positive eigenvalues")
        Kx = self.kernel(x.ravel(), self.nodes)
        out = (Kx * self.weights) @ self.vectors[:, :n] / lam
        return out.reshape(x.shape + (n,))

    def to_csv(self, path, n: int | None = None) -> None:
        n = self.values.size if n is None else n
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "lambda", *[f"phi@{x!r}" for x in self.nodes]])
            for i in range(n):
                w.writerow([i + 1, repr(float(self.values[i])),
                            *(repr(float(v)) for v in self.vectors[:, i])])


def _nystrom(kernel, a, b, m):
    x = np.linspace(a, b, m + 1)
    w = np.full(m + 1, (b - a) / m)
    w[[0, -1]] *= 0.5
    sw = np.sqrt(w)
    S = sw[:, None] * kernel(x, x) * sw[None, :]
    try:
        lam, V = linalg.eigh(0.5 * (S + S.T))
    except linalg.LinAlgError as exc:
        raise SolverError(f"symmetric eigensolve failed: {exc}") from exc
    lam, V = lam[::-1], V[:, ::-1]
    phi = V / sw[:, None]
    # sign: positive integral, else positive value at the left end
    integral = w @ phi
    left = phi[0]
    flip = np.where(np.abs(integral) > 1e-10, integral < 0, left < 0)
    phi[:, flip] *= -1.0
    return x, w, lam, phi


def eig_decompose_1d(kernel, interval=(-1.0, 1.0), m: int = 200, *, check: bool = True,
                     rtol: float = 1e-3) -> Eigenpairs1D:
    """Fredholm eigenpairs of a 1D covariance kernel.

    With ``check`` the decomposition is repeated with ``2 m`` panels and
    every eigenvalue above ``1e-3`` of the largest must agree to ``rtol``.

    Raises
    ------
    SolverError
        If the eigensolver fails or the self-convergence check does not pass.
    """
    if m < 1:
        raise ValueError("m must be positive")
    a, b = map(float, interval)
    x, w, lam, phi = _nystrom(kernel, a, b, m)
    if check and lam[0] > 0:
        _, _, lam2, _ = _nystrom(kernel, a, b, 2 * m)
        big = lam > 1e-3 * lam[0]
        drift = np.abs(lam2[: lam.size][big] - lam[big]) / lam[big]
        if drift.size and drift.max() > rtol:
            raise SolverError(f"eigenvalues moved by {drift.max():.2e} under m -> 2m; "
                              f"increase m above {m}")
    return Eigenpairs1D((a, b), x, w, lam, phi, kernel)


def truncate(values, energy: float = ENERGY, total: float | None = None) -> int:
    """Smallest ``N`` with ``sum(values[:N]) >= energy * total``.

    ``total`` defaults to the sum of ``values``; for a covariance it is the
    trace ``integral of c(x, x)``, which the Nystrom eigenvalues reproduce.
    """
    lam = np.asarray(values, dtype=float)
    total = float(np.sum(lam)) if total is None else float(total)
    if total <= 0:
        return 0
    cum = np.cumsum(lam)
    hit = np.flatnonzero(cum >= energy * total * (1 - 1e-12))
    if hit.size == 0:
        raise ValueError("eigenvalues do not reach the requested energy fraction")
    return int(hit[0]) + 1


@dataclass(frozen=True)
class KLField:
    """Truncated tensorised KL field with constant mean ``a0``.

    Parameter ``xi`` is ordered ``(i, j)`` row-major: ``xi[i * n2 + j]``.
    """

    a0: float
    axes: tuple
    counts: tuple

    @property
    def n_params(self) -> int:
        return int(np.prod(self.counts))

    def basis(self, x) -> np.ndarray:
        """``(n_points, n_params)`` matrix B with ``a = a0 + B @ xi``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cols = []
        for k, (ax, n) in enumerate(zip(self.axes, self.counts)):
            cols.append(ax.evaluate(x[:, k], n) * np.sqrt(ax.values[:n]))
        if len(cols) == 1:
            return cols[0]
        return np.einsum("pi,pj->pij", cols[0], cols[1]).reshape(x.shape[0], -1)

    def __call__(self, x, xi) -> np.ndarray:
        """Field values; raises when ``a <= 0.01`` anywhere."""
        xi = np.asarray(xi, dtype=float).ravel()
        if xi.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {xi.size}")
        a = self.a0 + self.basis(x) @ xi
        if np.any(a <= ELLIPTICITY_FLOOR):
            j = int(np.argmin(a))
            raise CoefficientError(f"KL field a={a[j]:.4g} <= {ELLIPTICITY_FLOOR} at "
                                   f"x={np.atleast_2d(x)[j]}, xi={xi.tolist()} "
                                   "(ellipticity lost)")
        return a

    def covariance(self, x, y) -> np.ndarray:
        """Covariance of the truncated field for unit-variance parameters."""
        return np.sum(self.basis(x) * self.basis(y), axis=1)


def build_kl_field(cov: CovarianceSpec, box=((-1.0, 1.0), (-1.0, 1.0)), m: int = 200,
                   energy: float = ENERGY) -> KLField:
    """Decompose each axis, truncate each at ``energy``, tensorise."""
    axes, counts = [], []
    for k, (lo, hi) in enumerate(box):
        ep = eig_decompose_1d(cov.axis_kernel(k), (lo, hi), m)
        total = np.sqrt(cov.sigma2) * (hi - lo)
        axes.append(ep)
        counts.append(truncate(ep.values, energy, total))
    return KLField(float(cov.mean), tuple(axes), tuple(counts))
