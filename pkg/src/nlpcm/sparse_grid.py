"""Smolyak sparse-grid collocation plans and moment estimates.

Levels are indexed from 1.  A plan of level ``eta`` in ``N`` dimensions
combines tensor rules over multi-indices ``i >= 1`` with
``eta + 1 <= |i| <= eta + N``, each weighted by
``(-1)**(zeta - |i|) * binom(N - 1, zeta - |i|)`` where ``zeta = eta + N``.
All weights are probability weights: they sum to one.
"""
from __future__ import annotations

import csv
import itertools
import logging
import warnings
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy import stats

__all__ = [
    "Rule1D",
    "Distribution",
    "SparseGridPlan",
    "build_tensor_grid",
    "build_sparse_grid",
    "map_to_distribution",
    "moment_estimates",
    "clenshaw_curtis",
]

log = logging.getLogger(__name__)

MERGE_TOL = 1e-13


def clenshaw_curtis(m: int):
    """Clenshaw-Curtis nodes and probability weights for U[-1, 1]."""
    if m == 1:
        return np.zeros(1), np.ones(1)
    n = m - 1
    theta = np.pi * np.arange(m) / n
    x = -np.cos(theta)
    x = 0.5 * (x - x[::-1])                 # exact antisymmetry, exact zero
    w = np.ones(m)
    for k in range(1, n // 2 + 1):
        b = 1.0 if 2 * k == n else 2.0
        w -= b * np.cos(2 * k * theta) / (4 * k * k - 1)
    c = np.full(m, 2.0)
    c[[0, -1]] = 1.0
    w *= c / n
    return x, 0.5 * w


@dataclass(frozen=True)
class Rule1D:
    """One-dimensional rule family with its level-to-count growth.

    ``"cc"``: nested Clenshaw-Curtis on U[-1, 1], counts 1, 3, 5, 9, 17, ...
    ``"gl"``: Gauss-Legendre on U[-1, 1], ``i`` points at level ``i``.
    ``"gh"``: Gauss-Hermite on N(0, 1), ``i`` points at level ``i``.
    """

    family: str = "cc"

    def __post_init__(self):
        if self.family not in ("cc", "gl", "gh"):
            raise ValueError(f"unknown rule family {self.family!r}")

    def count(self, level: int) -> int:
        if level < 1:
            raise ValueError("rule levels start at 1")
        if self.family == "cc":
            return 1 if level == 1 else 2 ** (level - 1) + 1
        return level

    def nodes_weights(self, level: int):
        return _rule_cached(self.family, self.count(level))

    @property
    def nested(self) -> bool:
        return self.family == "cc"


@lru_cache(maxsize=None)
def _rule_cached(family: str, m: int):
    if family == "cc":
        x, w = clenshaw_curtis(m)
    elif family == "gl":
        x, w = leggauss(m)
        w = w / 2.0
    else:
        x, w = hermegauss(m)
        w = w / np.sqrt(2 * np.pi)
    if m % 2 == 1:
        x[m // 2] = 0.0
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@dataclass(frozen=True)
class Distribution:
    """Input law of one i.i.d. parameter component.

    The collocation grid lives in the space of the *base* variable
    (uniform, Gaussian or Weibull); lognormal and rescaled Weibull inputs
    are deterministic transforms of it, applied by :meth:`transform`.

    Parameters
    ----------
    kind : {"uniform", "gaussian", "lognormal", "weibull"}
    a, b : float
        Support of the uniform law.
    mu, sigma : float
        Mean and standard deviation of the (base) Gaussian law.
    shape, scale, rescale : float
        Weibull shape ``k``, scale ``lambda`` and the multiplier applied to it.
    """

    kind: str
    a: float = -1.0
    b: float = 1.0
    mu: float = 0.0
    sigma: float = 1.0
    shape: float = 1.0
    scale: float = 1.0
    rescale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian", "lognormal", "weibull"):
            raise ValueError(f"unknown distribution {self.kind!r}")
        if self.kind == "uniform" and not self.b > self.a:
            raise ValueError("uniform law needs a < b")
        if self.kind in ("gaussian", "lognormal") and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.kind == "weibull" and not (self.shape > 0 and self.scale > 0):
            raise ValueError("Weibull shape and scale must be positive")

    @classmethod
    def uniform(cls, a, b):
        return cls("uniform", a=a, b=b)

    @classmethod
    def gaussian(cls, mu, sigma):
        return cls("gaussian", mu=mu, sigma=sigma)

    @classmethod
    def lognormal(cls, mu, sigma):
        return cls("lognormal", mu=mu, sigma=sigma)

    @classmethod
    def weibull(cls, shape, scale=1.0, rescale=1.0):
        return cls("weibull", shape=shape, scale=scale, rescale=rescale)

    def default_rule(self) -> Rule1D:
        return Rule1D({"uniform": "cc", "gaussian": "gh", "lognormal": "gh", "weibull": "gl"}[self.kind])

    def _base(self):
        if self.kind == "uniform":
            return stats.uniform(loc=self.a, scale=self.b - self.a)
        if self.kind in ("gaussian", "lognormal"):
            return stats.norm(loc=self.mu, scale=self.sigma)
        return stats.weibull_min(self.shape, scale=self.scale)

    def ppf(self, p):
        """Inverse CDF of the base variable."""
        return self._base().ppf(p)

    def cdf(self, x):
        return self._base().cdf(x)

    def transform(self, base):
        """Physical parameter value from the base variable."""
        base = np.asarray(base, dtype=float)
        if self.kind == "lognormal":
            return np.exp(base)
        if self.kind == "weibull":
            return self.rescale * base
        return base

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        """Pseudo-random physical parameter values."""
        if self.kind == "uniform":
            base = rng.uniform(self.a, self.b, size)
        elif self.kind == "weibull":
            base = self.scale * rng.weibull(self.shape, size)
        else:
            base = rng.normal(self.mu, self.sigma, size)
        return self.transform(base)

    def from_canonical(self, x, family: str) -> np.ndarray:
        """Map canonical rule nodes to base-variable values."""
        x = np.asarray(x, dtype=float)
        if family == "gh":
            if self.kind not in ("gaussian", "lognormal"):
                raise ValueError(f"Gauss-Hermite nodes need a Gaussian base, not {self.kind}")
            return self.mu + self.sigma * x
        if self.kind == "uniform":
            return 0.5 * (self.a + self.b) + 0.5 * (self.b - self.a) * x
        p = 0.5 * (x + 1.0)
        if np.any((p <= 0.0) | (p >= 1.0)):
            raise ValueError(f"{self.kind} law has open support; a canonical node maps to "
                             "probability 0 or 1 (use Gauss-Legendre or Gauss-Hermite nodes)")
        return self.ppf(p)

    def to_dict(self) -> dict:
        keys = {"uniform": ("a", "b"), "gaussian": ("mu", "sigma"), "lognormal": ("mu", "sigma"),
                "weibull": ("shape", "scale", "rescale")}[self.kind]
        return {"kind": self.kind, **{k: getattr(self, k) for k in keys}}


@dataclass(frozen=True)
class SparseGridPlan:
    """Merged Smolyak nodes and probability weights.

    ``nodes`` are canonical (rule space) until :func:`map_to_distribution`
    pushes them into base-variable space; ``blocks`` keeps the
    ``(multi_index, coefficient)`` pairs of the combination formula.
    """

    dim: int
    level: int
    rule: Rule1D
    nodes: np.ndarray
    weights: np.ndarray
    blocks: tuple = ()
    distribution: Distribution | None = None

    @property
    def K(self) -> int:
        return int(self.weights.size)

    def integrate(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return np.tensordot(self.weights, values, axes=(0, 0))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["k", *[f"xi{j + 1}" for j in range(self.dim)], "mu"])
            for k, (x, mu) in enumerate(zip(self.nodes, self.weights)):
                w.writerow([k, *(repr(float(c)) for c in x), repr(float(mu))])


def build_tensor_grid(rules, levels):
    """Full tensor product of 1D rules at the given levels.

    Returns ``(nodes, weights)`` with ``prod(counts)`` rows.
    """
    parts = [r.nodes_weights(l) for r, l in zip(rules, levels)]
    nodes = np.array(list(itertools.product(*[p[0] for p in parts])), dtype=float)
    weights = np.array([np.prod(w) for w in itertools.product(*[p[1] for p in parts])])
    return nodes.reshape(-1, len(parts)), weights


def _compositions(total: int, parts: int):
    # all i in Z^parts with i >= 1 and sum(i) == total
    for cut in itertools.combinations(range(1, total), parts - 1):
        edges = (0, *cut, total)
        yield tuple(edges[k + 1] - edges[k] for k in range(parts))


def _merge(nodes: np.ndarray, weights: np.ndarray):
    # identical nodes sort next to each other; rows within MERGE_TOL of
    # their predecessor in every coordinate join its group
    order = np.lexsort(nodes.T[::-1])
    nodes, weights = nodes[order], weights[order]
    if len(nodes) == 0:
        return nodes, weights
    new_group = np.ones(len(nodes), dtype=bool)
    new_group[1:] = np.any(np.abs(np.diff(nodes, axis=0)) > MERGE_TOL, axis=1)
    starts = np.flatnonzero(new_group)
    return nodes[starts], np.add.reduceat(weights, starts)


def build_sparse_grid(N: int, eta: int, rule: Rule1D | None = None) -> SparseGridPlan:
    """Smolyak plan of level ``eta`` in ``N`` dimensions."""
    if N < 1:
        raise ValueError("N must be at least 1")
    if eta < 0:
        raise ValueError("level eta must be nonnegative")
    rule = rule or Rule1D("cc")
    zeta = eta + N
    blocks, all_nodes, all_w = [], [], []
    for norm in range(max(N, zeta - N + 1), zeta + 1):
        c = (-1) ** (zeta - norm) * comb(N - 1, zeta - norm)
        if c == 0:
            continue
        for idx in _compositions(norm, N):
            x, w = build_tensor_grid([rule] * N, idx)
            blocks.append((idx, c))
            all_nodes.append(x)
            all_w.append(c * w)
    # nodes whose merged weight cancels to zero stay: the node set is the
    # union of the blocks, which keeps Clenshaw-Curtis plans nested
    nodes, weights = _merge(np.concatenate(all_nodes), np.concatenate(all_w))
    return SparseGridPlan(N, eta, rule, nodes, weights, tuple(blocks))


def map_to_distribution(plan: SparseGridPlan, dist: Distribution) -> SparseGridPlan:
    """Push canonical nodes into base-variable space; weights are unchanged."""
    nodes = dist.from_canonical(plan.nodes, plan.rule.family)
    return SparseGridPlan(plan.dim, plan.level, plan.rule, np.asarray(nodes, dtype=float),
                          plan.weights, plan.blocks, dist)


def moment_estimates(plan: SparseGridPlan, samples, *, tol: float = 1e-12):
    """Pointwise mean and standard deviation from one solution per node.

    The variance is formed as ``sum mu_k (u_k - mean)**2``.  Negative
    weights can push it slightly below zero; values down to
    ``-tol * (1 + sum |mu_k| u_k**2)`` are clamped to zero with a warning,
    anything lower raises.
    """
    u = np.asarray(samples, dtype=float)
    if u.shape[0] != plan.K:
        raise ValueError(f"{u.shape[0]} samples for a plan with K={plan.K} nodes")
    mu = plan.weights.reshape((-1,) + (1,) * (u.ndim - 1))
    mean = np.sum(mu * u, axis=0)
    var = np.sum(mu * (u - mean) ** 2, axis=0)
    neg = var < 0
    if np.any(neg):
        scale = 1.0 + np.sum(np.abs(mu) * u**2, axis=0)
        if np.any(var[neg] < -tol * np.broadcast_to(scale, var.shape)[neg]):
            raise ValueError(f"sparse-grid variance {var.min():.3e} is negative beyond round-off")
        warnings.warn(f"clamped {int(np.sum(neg))} slightly negative variance value(s) to zero",
                      RuntimeWarning, stacklevel=2)
        var = np.where(neg, 0.0, var)
    return mean, np.sqrt(var)
