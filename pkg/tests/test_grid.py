import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlpcm.errors import GridError
from nlpcm.grid import DomainSpec, build_grid, neighbors, odd_reflection, stencil_offsets

INTERVAL = DomainSpec.interval(-1.0, 1.0)
UNIT_BOX = DomainSpec.box([(0.0, 1.0), (0.0, 1.0)])
BOX = DomainSpec.box([(-1.0, 1.0), (-1.0, 1.0)])
DISK = DomainSpec.disk((0.0, 0.0), 1.0)


def _brute_neighbors(g, i):
    r = np.linalg.norm(g.points - g.points[i], axis=1)
    return np.flatnonzero((r > 0) & (r < g.delta * (1 - 1e-10)))


def test_interval_example():
    g = build_grid(INTERVAL, 0.5, 1.0)
    np.testing.assert_allclose(np.sort(g.points[g.interior, 0]), [-1, -0.5, 0, 0.5, 1])
    # open collar: x = +-2 lies exactly at distance delta and is left out
    np.testing.assert_allclose(np.sort(g.points[g.collar, 0]), [-1.5, 1.5])


def test_unit_box_interior_count():
    g = build_grid(UNIT_BOX, 0.25, 0.525)
    assert g.n_interior == 25
    on_edge = np.isclose(g.points[g.interior], 0.0) | np.isclose(g.points[g.interior], 1.0)
    assert on_edge.any()


def test_disk_collar_visibility():
    # an interior point sees the collar exactly when it is closer than delta
    # to the circle; the centre (distance 1 > 0.95) does not
    g = build_grid(DISK, 0.25, 0.95)
    collar = g.points[g.collar]
    for i in g.interior:
        sees = np.any(np.linalg.norm(collar - g.points[i], axis=1) < 0.95)
        gap = 1.0 - np.linalg.norm(g.points[i])
        if gap < 0.95 - 0.25 * np.sqrt(2):
            assert sees
        if gap >= 0.95:
            assert not sees


def test_neighbor_examples():
    g = build_grid(DomainSpec.interval(-3.0, 3.0), 1.0, 2.5)
    i = int(np.flatnonzero(np.isclose(g.points[:, 0], 0.0))[0])
    np.testing.assert_allclose(np.sort(g.points[neighbors(g, i), 0]), [-2, -1, 1, 2])
    g2 = build_grid(DomainSpec.box([(-3.0, 3.0), (-3.0, 3.0)]), 1.0, 1.5)
    i = int(np.flatnonzero(np.all(np.isclose(g2.points, 0.0), axis=1))[0])
    nb = g2.points[neighbors(g2, i)]
    assert len(nb) == 8
    assert set(np.round(np.linalg.norm(nb, axis=1) ** 2).astype(int)) == {1, 2}


def test_self_exclusion_and_collar_rows():
    g = build_grid(BOX, 0.25, 0.7)
    for i in g.interior[::7]:
        assert i not in neighbors(g, i)
    with pytest.raises(GridError):
        neighbors(g, int(g.collar[0]))


@pytest.mark.parametrize("dom,h,delta", [(INTERVAL, 0.1, 0.38), (UNIT_BOX, 1 / 8, 0.525),
                                         (DISK, 1 / 8, 0.475), (BOX, 1 / 4, 0.7)])
def test_neighbors_match_brute_force(dom, h, delta):
    g = build_grid(dom, h, delta)
    for i in g.interior:
        np.testing.assert_array_equal(np.sort(neighbors(g, i)), _brute_neighbors(g, i))


@pytest.mark.parametrize("dom,h,delta", [(INTERVAL, 0.1, 0.38), (DISK, 1 / 8, 0.475)])
def test_neighbor_symmetry(dom, h, delta):
    g = build_grid(dom, h, delta)
    pairs = set()
    for i in g.interior:
        pairs.update((int(i), int(j)) for j in neighbors(g, i))
    for i, j in pairs:
        if g.is_interior[j]:
            assert (j, i) in pairs


def test_lattice_membership_and_determinism():
    g = build_grid(DISK, 1 / 8, 0.35)
    np.testing.assert_allclose(g.points / g.h, np.round(g.points / g.h), atol=1e-12)
    g2 = build_grid(DISK, 1 / 8, 0.35)
    assert g.points.tobytes() == g2.points.tobytes()
    keys = [tuple(k) for k in g.index.tolist()]
    assert keys == sorted(keys)


@pytest.mark.parametrize("dom", [INTERVAL, BOX, DISK])
def test_collar_covers_horizon(dom):
    h, delta = 1 / 8, 0.35
    g = build_grid(dom, h, delta)
    rng = np.random.default_rng(0)
    lo, hi = dom.bounding_box().T
    y = rng.uniform(lo - delta, hi + delta, (4000, dom.dim))
    dist = dom.distance(y)
    y = y[(dist > 0) & (dist < delta)]
    nearest = np.min(np.linalg.norm(y[:, None, :] - g.points[None, :, :], axis=2), axis=1)
    assert np.all(nearest <= h)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([2.8, 3.8]), st.sampled_from([1 / 8, 1 / 16]))
def test_equal_counts_far_from_edge(ratio, h):
    g = build_grid(BOX, h, ratio * h)
    counts = np.diff(g.nbr_ptr)
    assert np.all(counts == len(stencil_offsets(2, h, ratio * h)))


def test_grid_errors():
    with pytest.raises(GridError):
        build_grid(INTERVAL, 0.0, 0.3)
    with pytest.raises(GridError):
        build_grid(DomainSpec.interval(0.1, 0.2), 1.0, 3.0)
    with pytest.raises(GridError):
        DomainSpec.interval(1.0, 0.0)
    with pytest.raises(GridError):
        DomainSpec.disk((0.0, 0.0), -1.0)


def test_odd_reflection():
    g = build_grid(BOX, 1 / 8, 0.35)
    S = odd_reflection(g)
    assert S.shape == (g.collar.size, g.n_interior)
    np.testing.assert_array_equal(S.getnnz(axis=1), 1)
    assert np.all(np.abs(S.data) == 1.0)
    # a function odd under each face reflection is reproduced by the map
    u = lambda p: np.sin(np.pi * (p[:, 0] + 1)) * np.sin(np.pi * (p[:, 1] + 1))
    np.testing.assert_allclose(S @ u(g.points[g.interior]), u(g.points[g.collar]), atol=1e-12)
    with pytest.raises(GridError):
        odd_reflection(build_grid(DISK, 1 / 8, 0.35))
    with pytest.raises(GridError):
        odd_reflection(build_grid(DomainSpec.interval(-1.05, 1.0), 0.1, 0.38))
