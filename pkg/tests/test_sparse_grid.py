import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlpcm.harness.cases import _s5
from nlpcm.sparse_grid import (Distribution, Rule1D, SparseGridPlan, build_sparse_grid,
                               build_tensor_grid, clenshaw_curtis, map_to_distribution,
                               moment_estimates)


def _uniform_moment(p):
    # E[x^p] for x ~ U[-1, 1]
    return 0.0 if p % 2 else 1.0 / (p + 1)


def test_gauss_legendre_two_points():
    x, w = Rule1D("gl").nodes_weights(2)
    # roots of P2 = (3x^2 - 1)/2 from its companion matrix
    roots = np.sort(np.roots([1.5, 0.0, -0.5]).real)
    np.testing.assert_allclose(np.sort(x), roots, atol=1e-15)
    np.testing.assert_allclose(x, [-1 / np.sqrt(3), 1 / np.sqrt(3)], atol=1e-15)
    np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-15)


def test_tensor_grid():
    nodes, w = build_tensor_grid([Rule1D("gl")] * 2, (2, 2))
    assert nodes.shape == (4, 2)
    np.testing.assert_allclose(w, 0.25)
    assert np.dot(w, nodes[:, 0] ** 2 * nodes[:, 1] ** 2) == pytest.approx(1 / 9, abs=1e-15)


@pytest.mark.parametrize("family", ["cc", "gl", "gh"])
def test_rules_are_probability_rules(family):
    r = Rule1D(family)
    for level in range(1, 7):
        x, w = r.nodes_weights(level)
        assert len(x) == r.count(level)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        if family != "gh":
            assert np.all(np.abs(x) <= 1.0)


def test_clenshaw_curtis_small():
    x, w = clenshaw_curtis(3)
    np.testing.assert_allclose(x, [-1, 0, 1], atol=1e-15)
    np.testing.assert_allclose(w, [1 / 6, 2 / 3, 1 / 6], atol=1e-15)


@pytest.mark.parametrize("family", ["cc", "gl"])
@pytest.mark.parametrize("eta", [0, 1, 3, 5])
def test_one_dimensional_degeneracy(family, eta):
    r = Rule1D(family)
    plan = build_sparse_grid(1, eta, r)
    x, w = r.nodes_weights(eta + 1)
    order = np.argsort(x)
    np.testing.assert_allclose(plan.nodes[:, 0], x[order], atol=1e-15)
    np.testing.assert_allclose(plan.weights, w[order], atol=1e-15)


def test_smolyak_degree_two_in_2d():
    plan = build_sparse_grid(2, 2, Rule1D("cc"))
    x = plan.nodes
    assert plan.integrate(x[:, 0] ** 2) == pytest.approx(1 / 3, abs=1e-12)
    assert plan.integrate(x[:, 0] * x[:, 1]) == pytest.approx(0.0, abs=1e-12)
    assert plan.integrate(x[:, 1] ** 2) == pytest.approx(1 / 3, abs=1e-12)


def test_sparse_smaller_than_tensor():
    plan = build_sparse_grid(5, 3, Rule1D("cc"))
    assert plan.K < Rule1D("cc").count(4) ** 5


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 4), st.integers(0, 2**32 - 1),
       st.sampled_from(["cc", "gl"]))
def test_polynomial_exactness(N, eta, seed, family):
    rng = np.random.default_rng(seed)
    plan = build_sparse_grid(N, eta, Rule1D(family))
    assert plan.weights.sum() == pytest.approx(1.0, abs=1e-12)
    exps = [e for e in itertools.product(range(eta + 1), repeat=N) if sum(e) <= eta]
    coef = rng.normal(size=len(exps))
    exact = sum(c * math.prod(_uniform_moment(p) for p in e) for c, e in zip(coef, exps))
    vals = sum(c * np.prod(plan.nodes ** np.array(e), axis=1) for c, e in zip(coef, exps))
    assert plan.integrate(vals) == pytest.approx(exact, abs=1e-10 * max(1.0, abs(exact)))


@given(st.integers(1, 5), st.integers(0, 5))
def test_combination_coefficients(N, eta):
    plan = build_sparse_grid(N, eta, Rule1D("cc"))
    # each block is a probability rule, so the coefficients sum to one
    assert sum(c for _, c in plan.blocks) == 1


@pytest.mark.parametrize("N", [1, 2, 3])
def test_nestedness(N):
    for eta in range(4):
        a = {tuple(np.round(x, 12)) for x in build_sparse_grid(N, eta).nodes}
        b = {tuple(np.round(x, 12)) for x in build_sparse_grid(N, eta + 1).nodes}
        assert a <= b


def test_node_counts():
    assert [build_sparse_grid(2, e).K for e in range(5)] == [1, 5, 13, 29, 65]
    assert [build_sparse_grid(3, e).K for e in range(5)] == [1, 7, 25, 69, 177]
    assert build_sparse_grid(5, 3).K == 241


def test_mapping_examples():
    u = map_to_distribution(build_sparse_grid(1, 2), Distribution.uniform(-0.1, 0.1))
    assert u.nodes[np.argmin(np.abs(u.nodes[:, 0])), 0] == 0.0
    np.testing.assert_allclose(np.sort(u.nodes[:, 0]), [-0.1, -0.1 / np.sqrt(2), 0, 0.1 / np.sqrt(2), 0.1])
    g = map_to_distribution(build_sparse_grid(1, 4, Rule1D("gh")), Distribution.gaussian(0, 0.1))
    assert abs(g.integrate(g.nodes[:, 0])) <= 1e-14
    ln = Distribution.lognormal(0, 0.1)
    plan = map_to_distribution(build_sparse_grid(1, 3, ln.default_rule()), ln)
    assert plan.integrate(ln.transform(plan.nodes[:, 0])) == pytest.approx(np.exp(0.005), abs=1e-10)


def test_open_support_rejects_endpoint_nodes():
    w = Distribution.weibull(5.0, 1.0)
    with pytest.raises(ValueError):
        map_to_distribution(build_sparse_grid(1, 2, Rule1D("cc")), w)
    with pytest.raises(ValueError):
        map_to_distribution(build_sparse_grid(1, 2, Rule1D("gh")), w)
    ok = map_to_distribution(build_sparse_grid(1, 3, Rule1D("gl")), w)
    assert np.all(ok.nodes > 0)


@pytest.mark.parametrize("dist", [Distribution.uniform(-0.1, 0.1), Distribution.gaussian(0, 0.1),
                                  Distribution.lognormal(0, 0.1), Distribution.weibull(5.0, 1.0)])
def test_cdf_roundtrip(dist):
    p = np.linspace(0.001, 0.999, 301)
    x = dist.ppf(p)
    assert np.all(np.diff(x) > 0)
    np.testing.assert_allclose(dist.cdf(x), p, atol=1e-10)


def test_weibull_moments():
    # the inverse CDF behaves like p**(1/k) at p = 0, so Gauss-Legendre in
    # probability space converges algebraically
    w = Distribution.weibull(5.0, 1.0, rescale=0.5)
    exact = 0.5 * math.gamma(1.2)
    errs = []
    for level in (2, 4, 8, 16):
        plan = map_to_distribution(build_sparse_grid(1, level - 1, w.default_rule()), w)
        errs.append(abs(plan.integrate(w.transform(plan.nodes[:, 0])) - exact))
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-5


def test_moment_examples():
    plan = map_to_distribution(build_sparse_grid(1, 1), Distribution.uniform(-0.1, 0.1))
    m, s = moment_estimates(plan, np.full((plan.K, 3), 2.5))
    np.testing.assert_allclose(m, 2.5)
    np.testing.assert_allclose(s, 0.0, atol=1e-15)
    m, s = moment_estimates(plan, plan.nodes[:, 0])
    assert m == pytest.approx(0.0, abs=1e-16)
    assert s == pytest.approx(0.1 / np.sqrt(3), rel=1e-12)
    gh = map_to_distribution(build_sparse_grid(1, 2, Rule1D("gh")), Distribution.gaussian(0, 1))
    m, s = moment_estimates(gh, gh.nodes[:, 0] ** 2)
    assert m == pytest.approx(1.0, rel=1e-12)
    assert s == pytest.approx(np.sqrt(2), rel=1e-12)


def test_moment_errors_and_clamp():
    plan = build_sparse_grid(2, 2)
    with pytest.raises(ValueError):
        moment_estimates(plan, np.zeros(plan.K + 1))
    fake = SparseGridPlan(1, 0, Rule1D(), np.zeros((2, 1)), np.array([1.5, -0.5]))
    with pytest.raises(ValueError):
        moment_estimates(fake, np.array([0.0, 1.0]))
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        _, s = moment_estimates(fake, np.array([1.0, 1.0 + 1e-9]))
    assert s == 0.0 and any("clamped" in str(r.message) for r in rec)


def test_convergence_in_K():
    # E[1 / S(xi)] for the five-parameter consistency case
    dist = Distribution.uniform(-0.1, 0.1)

    def integrate(eta):
        plan = map_to_distribution(build_sparse_grid(5, eta), dist)
        return plan.K, plan.integrate(1.0 / _s5(plan.nodes.T))

    ref = integrate(7)[1]
    Ks, errs = zip(*[(K, abs(v - ref)) for K, v in map(integrate, range(1, 6))])
    for a, b in zip(errs, errs[1:]):
        assert b <= 1.1 * a
    assert np.polyfit(np.log(Ks), np.log(errs), 1)[0] < -1.0


def test_plan_csv(tmp_path):
    plan = build_sparse_grid(2, 1)
    plan.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "k,xi1,xi2,mu" and len(lines) == plan.K + 1
