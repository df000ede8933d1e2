"""Compactly supported power-law kernels and their exact ball moments.

The kernel family is

    gamma_delta(r) = D0 / (delta**(d + 2 - s) * r**s),   0 < r < delta,

and zero outside the open ball.  ``D0`` is fixed by requiring the second
moment of the unit kernel over the unit ball to equal the dimension ``d``,
which makes the nonlocal operator reduce to the Laplacian as delta -> 0.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import KernelError

__all__ = [
    "KernelSpec",
    "sphere_area",
    "normalization_constant",
    "eval_kernel",
    "multi_indices",
    "sphere_monomial_integral",
    "ball_moment",
    "ball_moments",
]


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in R^d (2 for d=1, 2*pi for d=2)."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def _check_admissible(d: int, s: float) -> None:
    if d not in (1, 2, 3):
        raise KernelError(f"unsupported dimension d={d}")
    if not (0.0 <= s < d):
        raise KernelError(f"kernel singularity must satisfy 0 <= s < d, got s={s}, d={d}")


def normalization_constant(d: int, s: float) -> float:
    """Return D0 such that the unit kernel has second moment ``d``.

    Parameters
    ----------
    d : int
        Spatial dimension.
    s : float
        Order of the kernel singularity, ``0 <= s < d``.

    Returns
    -------
    float
        ``d * (d + 2 - s) / |S^{d-1}|``.
    """
    _check_admissible(d, s)
    return d * (d + 2.0 - s) / sphere_area(d)


@dataclass(frozen=True)
class KernelSpec:
    """Radial kernel with horizon ``delta`` and singularity order ``s``."""

    dim: int
    delta: float
    s: float = 0.0
    d0: float = field(init=False)

    def __post_init__(self):
        _check_admissible(self.dim, self.s)
        if not self.delta > 0:
            raise KernelError(f"horizon must be positive, got {self.delta}")
        object.__setattr__(self, "d0", normalization_constant(self.dim, self.s))

    @property
    def prefactor(self) -> float:
        """D0 / delta**(d+2-s); the kernel value is this times r**(-s)."""
        return self.d0 / self.delta ** (self.dim + 2.0 - self.s)

    def __call__(self, r):
        return eval_kernel(self, r)

    def scaled(self, delta: float) -> "KernelSpec":
        return KernelSpec(self.dim, delta, self.s)


def eval_kernel(k: KernelSpec, r):
    """Evaluate ``gamma_delta(r)``; scalar in, scalar out, array in, array out.

    Raises
    ------
    KernelError
        If ``r`` is negative, or zero while ``s > 0``.
    """
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise KernelError("kernel evaluated at negative distance")
    inside = r_arr < k.delta
    if k.s > 0:
        if np.any(r_arr == 0):
            raise KernelError("singular kernel evaluated at coincident points (r=0)")
        with np.errstate(divide="ignore"):
            vals = np.where(inside, k.prefactor * r_arr ** (-k.s), 0.0)
    else:
        vals = np.where(inside, k.prefactor, 0.0)
    if np.ndim(r) == 0:
        return float(vals)
    return vals


def multi_indices(dim: int, max_degree: int) -> list[tuple[int, ...]]:
    """All multi-indices with total degree <= ``max_degree``, graded order."""
    out = []
    for deg in range(max_degree + 1):
        for beta in itertools.product(range(deg + 1), repeat=dim):
            if sum(beta) == deg:
                out.append(beta)
    # graded, then reverse-lexicographic inside a degree: (2,0) before (1,1)
    out.sort(key=lambda b: (sum(b), tuple(-c for c in b)))
    return out


def sphere_monomial_integral(beta) -> float:
    """Integral of theta**beta over the unit sphere S^{d-1}.

    Zero if any exponent is odd; otherwise
    ``2 * prod Gamma((b_i+1)/2) / Gamma((|b|+d)/2)``.
    """
    beta = tuple(int(b) for b in beta)
    if any(b % 2 for b in beta):
        return 0.0
    d = len(beta)
    num = math.prod(math.gamma((b + 1) / 2.0) for b in beta)
    return 2.0 * num / math.gamma((sum(beta) + d) / 2.0)


def ball_moment(k: KernelSpec, beta) -> float:
    """Exact ``int_{B_delta(0)} gamma_delta(|z|) z**beta dz``.

    Uses the factorisation into a radial integral
    ``prefactor * delta**(|b|+d-s) / (|b|+d-s)`` and an angular one.
    """
    beta = tuple(int(b) for b in beta)
    if len(beta) != k.dim:
        raise KernelError(f"multi-index {beta} does not match dimension {k.dim}")
    ang = sphere_monomial_integral(beta)
    if ang == 0.0:
        return 0.0
    p = sum(beta) + k.dim - k.s
    return k.prefactor * k.delta**p / p * ang


def ball_moments(k: KernelSpec, max_degree: int = 3) -> dict[tuple[int, ...], float]:
    """Moment table ``g_beta`` for every ``|beta|_1 <= max_degree``."""
    if max_degree < 0:
        raise KernelError("max_degree must be nonnegative")
    return {beta: ball_moment(k, beta) for beta in multi_indices(k.dim, max_degree)}
