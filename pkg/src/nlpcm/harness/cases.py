"""Registered benchmark cases with their closed forms and default settings.

Coefficients, forcings and solutions take an ``(n, d)`` array of points and
the *physical* parameter vector (after any lognormal or Weibull transform).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from ..grid import DomainSpec
from ..nonlocal_solver import CoefficientField
from ..random_field import CovarianceSpec, KLField, build_kl_field
from ..sparse_grid import Distribution

__all__ = ["Case", "get_case", "case_names", "CASE_NAMES"]


@dataclass(frozen=True)
class Case:
    """Problem data plus the defaults used when a config leaves them out.

    ``reference`` names what the computed moments are compared with:
    ``"closed"`` (closed-form solution ``exact``), ``"local"`` (the local
    solver on ``local_a``), or ``"nonlocal"`` (the same discrete solver on a
    finer sparse grid).
    ``forcing`` of ``None`` means it is derived from ``exact`` with the
    reference operator.  ``collar_mode`` is ``"data"`` (collar values from
    ``collar``) or ``"odd"`` (odd reflection of the unknown across the box
    faces, plus ``collar``).
    """

    name: str
    description: str
    domain: DomainSpec
    n_params: int
    delta_rule: tuple
    distributions: dict
    coefficient: CoefficientField
    forcing: Callable | float | None
    collar: Callable | float
    exact: Callable | None
    reference: str
    default_h: tuple
    default_eta: tuple
    default_distribution: str = "uniform"
    local_a: Callable | None = None
    local_f: Callable | float | None = None
    h_loc: float | None = None
    collar_mode: str = "data"
    extras: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def distribution(self, name: str | None = None) -> Distribution:
        name = name or self.default_distribution
        if name not in self.distributions:
            raise KeyError(f"case {self.name} has no distribution {name!r}; "
                           f"choose from {sorted(self.distributions)}")
        return self.distributions[name]


def _r2(x):
    return np.sum(x * x, axis=1)


# consistency, 1D, five parameters -------------------------------------------

def _s5(xi):
    xi = np.asarray(xi, dtype=float)
    return (5 + np.cos(xi[0]) + np.sin(2 * xi[1]) + np.cos(3 * xi[2]) + np.sin(4 * xi[3])
            + np.cos(5 * xi[4]))


def _consistency_1d():
    delta = 0.38

    def A(x, y, xi):
        return (2 + np.cos(0.5 * (x[:, 0] + y[:, 0]))) * _s5(xi)

    def u(x, xi):
        return np.cos(0.5 * x[:, 0]) / _s5(xi)

    def f(x, xi):
        x = x[:, 0]
        d = delta
        p = 0.5 * (-2 * np.sin(0.5 * (3 * x + d)) + np.sin(0.5 * (3 * x + 2 * d))
                   - 3 * d * np.cos(0.5 * x) + 6 * np.sin(0.5 * (x + d)))
        m = 0.5 * (-2 * np.sin(0.5 * (3 * x - d)) + np.sin(0.5 * (3 * x - 2 * d))
                   + 3 * d * np.cos(0.5 * x) + 6 * np.sin(0.5 * (x - d)))
        return -3.0 / d**3 * (p - m)

    return Case(
        name="consistency-1d-5p",
        description="1D nonlocal manufactured solution cos(x/2)/S(xi), five i.i.d. parameters",
        domain=DomainSpec.interval(-1.0, 1.0),
        n_params=5,
        delta_rule=("fixed", delta),
        distributions={"uniform": Distribution.uniform(-0.1, 0.1),
                       "gaussian": Distribution.gaussian(0.0, 0.1),
                       "lognormal": Distribution.lognormal(0.0, 0.1)},
        coefficient=CoefficientField(A),
        forcing=f,
        collar=u,
        exact=u,
        reference="closed",
        default_h=(1 / 10, 1 / 20, 1 / 40, 1 / 80),
        default_eta=(3,),
    )


# consistency, 2D box, one parameter ------------------------------------------

def _consistency_2d():
    delta, Ac, Bc = 0.525, 0.3, 0.3

    def A(x, y, xi):
        return ((2 + xi[0]) * (2 + np.cos(Ac * (x[:, 0] + y[:, 0])) * np.cos(Bc * (x[:, 1] + y[:, 1])))
                / delta**4)

    def u(x, xi):
        return np.cos(Ac * x[:, 0]) * np.sin(Bc * x[:, 1]) / (2 + xi[0])

    return Case(
        name="consistency-2d-1p",
        description="2D nonlocal manufactured solution on the unit square, one parameter",
        domain=DomainSpec.box([(0.0, 1.0), (0.0, 1.0)]),
        n_params=1,
        delta_rule=("fixed", delta),
        distributions={"uniform": Distribution.uniform(-0.1, 0.1),
                       "gaussian": Distribution.gaussian(0.0, 0.1),
                       "lognormal": Distribution.lognormal(0.0, 0.1),
                       "weibull": Distribution.weibull(5.0, 1.0, rescale=0.5)},
        coefficient=CoefficientField(A),
        forcing=None,
        collar=u,
        exact=u,
        reference="closed",
        default_h=(1 / 8, 1 / 16, 1 / 32),
        default_eta=(1, 2, 3, 4, 5),
    )


# asymptotic compatibility, 1D, five parameters -------------------------------

def _t5(xi):
    xi = np.asarray(xi, dtype=float)
    return (1 + np.exp(np.sin(xi[0])) + np.cos(xi[1]) + np.exp(np.sin(xi[2])) + np.cos(xi[3])
            + np.exp(np.sin(2 * xi[4])))


def _ac_1d():
    def a(x, xi):
        return 12 + _t5(xi) * np.sin(x[:, 0])

    def u0(x, xi):
        t = _t5(xi)
        return np.log(12 + t * np.sin(x[:, 0])) / t

    def f(x, xi):
        return np.sin(x[:, 0])

    return Case(
        name="ac-1d-5p",
        description="1D local limit log(12 + T sin x)/T with harmonic-mean nonlocal coefficient",
        domain=DomainSpec.interval(-1.0, 1.0),
        n_params=5,
        delta_rule=("ratio", 3.8),
        distributions={"uniform": Distribution.uniform(-0.1, 0.1),
                       "gaussian": Distribution.gaussian(0.0, 0.1),
                       "lognormal": Distribution.lognormal(0.0, 0.1)},
        coefficient=CoefficientField.harmonic(a),
        forcing=f,
        collar=u0,
        exact=u0,
        reference="closed",
        default_h=(1 / 10, 1 / 20, 1 / 40, 1 / 80),
        default_eta=(3,),
        local_a=a,
        local_f=f,
        h_loc=1 / 1280,
    )


# asymptotic compatibility, unit disk, one parameter ---------------------------

def _ac_disk():
    def a(x, xi):
        return 1.0 / (2 + np.cos(xi[0]) * np.sin(_r2(x)))

    def u0(x, xi):
        r2 = _r2(x)
        return 0.25 * (2 * r2 - np.cos(xi[0]) * np.cos(r2))

    # -div(a grad u0) = -1 for this pair, so the forcing is -1, not +1
    return Case(
        name="ac-disk-1p",
        description="unit disk, radial local limit (2r^2 - cos(xi) cos(r^2))/4",
        domain=DomainSpec.disk((0.0, 0.0), 1.0),
        n_params=1,
        delta_rule=("ratio", 3.8),
        distributions={"uniform": Distribution.uniform(-0.1, 0.1),
                       "gaussian": Distribution.gaussian(0.0, 0.1),
                       "lognormal": Distribution.lognormal(0.0, 0.1),
                       "weibull": Distribution.weibull(5.0, 1.0)},
        coefficient=CoefficientField.harmonic(a),
        forcing=-1.0,
        collar=u0,
        exact=u0,
        reference="closed",
        default_h=(1 / 4, 1 / 8, 1 / 16, 1 / 32),
        default_eta=(3,),
        local_a=a,
        local_f=-1.0,
        h_loc=1 / 512,
    )


# asymptotic compatibility, 2D box, two parameters -----------------------------

def _ac_2d():
    def a(x, xi):
        out = np.full(x.shape[0], 3.0)
        for k in (1, 2):
            out += ((np.cos(30 * xi[k - 1]) - 1) / k**2 * np.cos(2 * k * x[:, 0])
                    * np.sin(2 * k * x[:, 1]))
        return out

    return Case(
        name="ac-2d-2p",
        description="square [-1,1]^2, oscillatory two-parameter diffusivity, f = 1, u = 0 outside",
        domain=DomainSpec.box([(-1.0, 1.0), (-1.0, 1.0)]),
        n_params=2,
        delta_rule=("ratio", 2.8),
        distributions={"uniform": Distribution.uniform(-0.1, 0.1)},
        coefficient=CoefficientField.harmonic(a),
        forcing=1.0,
        collar=0.0,
        exact=None,
        reference="local",
        default_h=(1 / 4, 1 / 8, 1 / 16),
        default_eta=(4,),
        local_a=a,
        local_f=1.0,
        h_loc=1 / 128,
        collar_mode="odd",
    )


# KL random field on [-1,1]^2 -----------------------------------------------

@lru_cache(maxsize=None)
def kl_field() -> KLField:
    return build_kl_field(CovarianceSpec(sigma2=1.0, lengths=(1.0, 1.0), mean=4.0))


def _kl_2d():
    field_ = kl_field()

    def a(x, xi):
        return field_(x, xi)

    return Case(
        name="kl-2d",
        description="square [-1,1]^2, KL field a0 = 4, sigma = 1, unit correlation lengths, f = 1",
        domain=DomainSpec.box([(-1.0, 1.0), (-1.0, 1.0)]),
        n_params=field_.n_params,
        delta_rule=("ratio", 2.8),
        distributions={"gaussian": Distribution.gaussian(0.0, 1.0)},
        coefficient=CoefficientField.harmonic(a),
        forcing=1.0,
        collar=0.0,
        exact=None,
        reference="local",
        default_h=(1 / 4, 1 / 8, 1 / 16),
        default_eta=(3,),
        default_distribution="gaussian",
        local_a=a,
        local_f=1.0,
        h_loc=1 / 128,
        collar_mode="odd",
        extras={"field": field_},
    )


_BUILDERS = {
    "consistency-1d-5p": _consistency_1d,
    "consistency-2d-1p": _consistency_2d,
    "ac-1d-5p": _ac_1d,
    "ac-disk-1p": _ac_disk,
    "ac-2d-2p": _ac_2d,
    "kl-2d": _kl_2d,
}
CASE_NAMES = tuple(_BUILDERS)


def case_names() -> tuple:
    return CASE_NAMES


@lru_cache(maxsize=None)
def get_case(name: str) -> Case:
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise KeyError(f"unknown case {name!r}; registered: {', '.join(CASE_NAMES)}") from None
