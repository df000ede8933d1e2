"""Uniform Cartesian particle sets over a domain and its nonlocal collar.

Points are the lattice ``{k*h : k in Z^d}`` intersected with the union of
the domain and the collar ``{x outside: dist(x, domain) < delta}``.  Points
on the closed domain are tagged interior; the interaction ball is open.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import GridError

__all__ = ["DomainSpec", "ParticleGrid", "build_grid", "neighbors", "odd_reflection",
           "stencil_offsets"]

# relative slack for lattice points that sit on a boundary or on the horizon
_TIE = 1e-10


@dataclass(frozen=True)
class DomainSpec:
    """Interval, axis-aligned box, or disk.

    Use the ``interval``, ``box`` and ``disk`` constructors rather than
    filling the fields directly.
    """

    shape: str
    bounds: tuple = ()
    center: tuple = ()
    radius: float = 0.0

    @classmethod
    def interval(cls, a: float, b: float) -> "DomainSpec":
        if not b > a:
            raise GridError(f"empty interval [{a}, {b}]")
        return cls("interval", bounds=((float(a), float(b)),))

    @classmethod
    def box(cls, bounds: Sequence[Sequence[float]]) -> "DomainSpec":
        bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        if any(hi <= lo for lo, hi in bounds):
            raise GridError(f"empty box {bounds}")
        return cls("box", bounds=bounds)

    @classmethod
    def disk(cls, center: Sequence[float] = (0.0, 0.0), radius: float = 1.0) -> "DomainSpec":
        if not radius > 0:
            raise GridError("disk radius must be positive")
        return cls("disk", center=tuple(float(c) for c in center), radius=float(radius))

    @property
    def dim(self) -> int:
        return len(self.center) if self.shape == "disk" else len(self.bounds)

    def bounding_box(self) -> np.ndarray:
        if self.shape == "disk":
            c = np.asarray(self.center)
            return np.stack([c - self.radius, c + self.radius], axis=1)
        return np.asarray(self.bounds, dtype=float)

    def distance(self, x) -> np.ndarray:
        """Euclidean distance from each row of ``x`` to the closed domain."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.shape == "disk":
            r = np.linalg.norm(x - np.asarray(self.center), axis=1)
            return np.maximum(r - self.radius, 0.0)
        bb = self.bounding_box()
        excess = np.maximum(np.maximum(bb[:, 0] - x, x - bb[:, 1]), 0.0)
        return np.linalg.norm(excess, axis=1)

    def contains(self, x) -> np.ndarray:
        return self.distance(x) <= _TIE * self._scale()

    def _scale(self) -> float:
        return max(1.0, float(np.abs(self.bounding_box()).max()))

    def to_dict(self) -> dict:
        if self.shape == "disk":
            return {"shape": "disk", "center": list(self.center), "radius": self.radius}
        return {"shape": self.shape, "bounds": [list(b) for b in self.bounds]}


def stencil_offsets(dim: int, h: float, delta: float) -> np.ndarray:
    """Integer lattice offsets ``m != 0`` with ``|m| h < delta`` (open ball)."""
    n = int(np.ceil(delta / h)) + 1
    axes = [np.arange(-n, n + 1)] * dim
    m = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    r = np.linalg.norm(m, axis=1) * h
    keep = (r > 0) & (r < delta * (1.0 - _TIE))
    return m[keep]


@dataclass
class ParticleGrid:
    """Lattice points with interior/collar tags and interior neighbour lists.

    ``nbr_ptr``/``nbr_idx`` form a CSR list over interior rows (in the
    order of ``interior``); ``nbr_off`` holds the matching integer offsets.
    """

    domain: DomainSpec
    h: float
    delta: float
    points: np.ndarray
    index: np.ndarray
    is_interior: np.ndarray
    interior: np.ndarray
    collar: np.ndarray
    nbr_ptr: np.ndarray
    nbr_idx: np.ndarray
    nbr_off: np.ndarray
    _row_of: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def M(self) -> int:
        return self.points.shape[0]

    @property
    def n_interior(self) -> int:
        return self.interior.size

    def row(self, i: int) -> int:
        """Position of global point ``i`` among the interior rows."""
        if not 0 <= i < self.M:
            raise GridError(f"point index {i} out of range")
        r = self._row_of[i]
        if r < 0:
            raise GridError(f"point {i} at {self.points[i]} is a collar point; "
                            "operator rows exist only for interior points")
        return int(r)

    def neighbor_rows(self) -> np.ndarray:
        """Interior row number of every CSR entry."""
        counts = np.diff(self.nbr_ptr)
        return np.repeat(np.arange(self.n_interior), counts)

    def to_csv(self, path) -> None:
        """Write ``index, x..., tag`` rows for debugging."""
        names = ["x", "y", "z"][: self.dim]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["index", *names, "tag"])
            for i, p in enumerate(self.points):
                tag = "interior" if self.is_interior[i] else "collar"
                w.writerow([i, *(repr(float(c)) for c in p), tag])


def build_grid(dom: DomainSpec, h: float, delta: float) -> ParticleGrid:
    """Enumerate lattice points of the domain and its collar.

    Ordering is lexicographic in the integer lattice index, so repeated
    builds are bit-identical.

    Raises
    ------
    GridError
        For nonpositive ``h``/``delta`` or when no lattice point falls in
        the closed domain.
    """
    if not (h > 0 and delta > 0):
        raise GridError(f"h and delta must be positive (h={h}, delta={delta})")
    d = dom.dim
    bb = dom.bounding_box()
    lo = np.floor((bb[:, 0] - delta) / h).astype(int) - 1
    hi = np.ceil((bb[:, 1] + delta) / h).astype(int) + 1
    axes = [np.arange(lo[a], hi[a] + 1) for a in range(d)]
    k = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    x = k * h
    dist = dom.distance(x)
    inside = dist <= _TIE * max(h, dom._scale())
    in_collar = (~inside) & (dist < delta * (1.0 - _TIE))
    keep = inside | in_collar
    k, x, inside = k[keep], x[keep], inside[keep]
    if not inside.any():
        raise GridError(f"no lattice point inside the domain for h={h}; refine the grid")

    interior = np.flatnonzero(inside)
    collar = np.flatnonzero(~inside)
    row_of = np.full(k.shape[0], -1, dtype=np.int64)
    row_of[interior] = np.arange(interior.size)

    # dense lookup table over the lattice bounding box
    shape = tuple(hi - lo + 1)
    lookup = np.full(shape, -1, dtype=np.int64)
    lookup[tuple((k - lo).T)] = np.arange(k.shape[0])

    offs = stencil_offsets(d, h, delta)
    kin = k[interior]
    tgt = kin[:, None, :] + offs[None, :, :]
    nb = lookup[tuple(np.moveaxis(tgt - lo, -1, 0))]
    if np.any(nb < 0):
        raise GridError("neighbour lookup left the lattice; collar does not cover the horizon")
    n_nb = offs.shape[0]
    nbr_ptr = np.arange(interior.size + 1, dtype=np.int64) * n_nb
    nbr_idx = nb.reshape(-1)
    nbr_off = np.tile(offs, (interior.size, 1))
    return ParticleGrid(dom, float(h), float(delta), x, k, inside, interior, collar,
                        nbr_ptr, nbr_idx, nbr_off, row_of)


def neighbors(g: ParticleGrid, i: int) -> np.ndarray:
    """Global indices of the points strictly inside ``B_delta(x_i)``, ``j != i``."""
    r = g.row(i)
    return g.nbr_idx[g.nbr_ptr[r]:g.nbr_ptr[r + 1]]


def odd_reflection(g: ParticleGrid):
    """Collar-to-interior map of the odd extension across the faces of a box.

    Returns a sparse ``(n_collar, n_interior)`` matrix ``S`` with one
    ``+-1`` per row: the collar value is the value at its mirror image times
    ``-1`` per reflected coordinate, so corner regions (two reflections)
    carry ``+1``.
    Imposing ``u_collar = S u_interior`` is the nonlocal counterpart of a
    homogeneous Dirichlet condition on the boundary itself.

    Raises
    ------
    GridError
        For disks, or when a box face is not on the lattice.
    """
    if g.domain.shape == "disk":
        raise GridError("odd reflection is defined for intervals and boxes only")
    bb = g.domain.bounding_box()
    kb = np.round(bb / g.h)
    if np.any(np.abs(kb * g.h - bb) > _TIE * max(1.0, float(np.abs(bb).max()))):
        raise GridError(f"box faces {bb.tolist()} are not lattice lines for h={g.h}")
    kb = kb.astype(np.int64)
    kc = g.index[g.collar].copy()
    lo, hi = kb[:, 0], kb[:, 1]
    flips = np.sum((kc > hi) | (kc < lo), axis=1)
    kc = np.where(kc > hi, 2 * hi - kc, kc)
    kc = np.where(kc < lo, 2 * lo - kc, kc)
    lookup = {tuple(k): r for r, k in enumerate(g.index[g.interior].tolist())}
    try:
        rows = np.array([lookup[tuple(k)] for k in kc.tolist()], dtype=np.int64)
    except KeyError as exc:
        raise GridError(f"mirror image {exc.args[0]} of a collar point is not interior; "
                        "delta is too large for the box") from None
    n_c = g.collar.size
    sign = np.where(flips % 2 == 1, -1.0, 1.0)
    return sp.csr_matrix((sign, (np.arange(n_c), rows)), shape=(n_c, g.n_interior))
