import numpy as np
import pytest
from hypothesis import given, strategies as st

from nlpcm.errors import CoefficientError
from nlpcm.nonlocal_solver import harmonic_mean
from nlpcm.random_field import (CovarianceSpec, KLField, build_kl_field, eig_decompose_1d,
                                truncate)

COV = CovarianceSpec(sigma2=1.0, lengths=(1.0, 1.0), mean=4.0)


@pytest.fixture(scope="module")
def field():
    return build_kl_field(COV)


def test_leading_eigenvalue_self_convergence():
    k = COV.axis_kernel(0)
    a = eig_decompose_1d(k, (-1, 1), 200, check=False).values[0]
    b = eig_decompose_1d(k, (-1, 1), 400, check=False).values[0]
    assert abs(a - b) <= 1e-3 * a


def test_zero_variance():
    ep = eig_decompose_1d(CovarianceSpec(0.0).axis_kernel(0))
    np.testing.assert_array_equal(ep.values, 0.0)


def test_orthonormality_and_order():
    ep = eig_decompose_1d(COV.axis_kernel(0))
    G = (ep.vectors * ep.weights[:, None]).T @ ep.vectors
    np.testing.assert_allclose(G, np.eye(G.shape[0]), atol=1e-8)
    lead = ep.values[:6]
    assert np.all(lead > 0) and np.all(np.diff(lead) < 0)


def test_sign_convention():
    ep = eig_decompose_1d(COV.axis_kernel(0))
    for i in range(4):
        integral = ep.weights @ ep.vectors[:, i]
        if abs(integral) > 1e-10:
            assert integral > 0
        else:
            assert ep.vectors[0, i] > 0


def test_gram_is_psd():
    x = np.linspace(-1, 1, 150)
    lam = np.linalg.eigvalsh(COV.axis_kernel(0)(x, x))
    assert lam.min() >= -1e-10 * lam.max()


def test_truncate_examples(field):
    assert truncate([0.95, 0.05]) == 1
    assert truncate(np.ones(10)) == 9
    assert field.counts == (2, 2)
    assert field.n_params == 4
    for ax, n in zip(field.axes, field.counts):
        assert ax.values[:n].sum() >= 0.9 * 2.0


def test_trace_identity(field):
    for ax in field.axes:
        assert ax.trace == pytest.approx(2.0, rel=5e-3)


def test_mean_and_linearity(field):
    x = np.random.default_rng(0).uniform(-1, 1, (50, 2))
    np.testing.assert_allclose(field(x, np.zeros(4)), 4.0)
    xi = np.array([0.3, -0.2, 0.5, 0.1])
    np.testing.assert_allclose(field(x, 2 * xi) - 4, 2 * (field(x, xi) - 4), rtol=1e-12)


def test_nystrom_extension_matches_grid(field):
    ax = field.axes[0]
    np.testing.assert_allclose(ax.evaluate(ax.nodes, 2), ax.vectors[:, :2], atol=1e-10)


def test_monte_carlo_covariance(field):
    rng = np.random.default_rng(1)
    x = np.array([[0.2, -0.4], [-0.5, 0.7]])
    xi = rng.standard_normal((100_000, field.n_params))
    a = 4.0 + xi @ field.basis(x).T
    d = (a[:, 0] - a[:, 0].mean()) * (a[:, 1] - a[:, 1].mean())
    se = d.std(ddof=1) / np.sqrt(d.size)
    exact = field.covariance(x[:1], x[1:])[0]
    assert abs(d.mean() - exact) <= 3 * se


def test_separable_covariance(field):
    rng = np.random.default_rng(2)
    x, y = rng.uniform(-1, 1, (20, 2)), rng.uniform(-1, 1, (20, 2))
    c1 = sum(np.sqrt(field.axes[0].values[i]) ** 2 * field.axes[0].evaluate(x[:, 0], 2)[:, i]
             * field.axes[0].evaluate(y[:, 0], 2)[:, i] for i in range(2))
    c2 = sum(field.axes[1].values[j] * field.axes[1].evaluate(x[:, 1], 2)[:, j]
             * field.axes[1].evaluate(y[:, 1], 2)[:, j] for j in range(2))
    np.testing.assert_allclose(field.covariance(x, y), c1 * c2, rtol=1e-12, atol=1e-14)
    # the untruncated product reproduces the full 2D covariance
    full = KLField(4.0, field.axes, (40, 40))
    np.testing.assert_allclose(full.covariance(x, y), COV(x, y), atol=1e-6)


@given(st.floats(0.02, 50), st.floats(0.02, 50))
def test_harmonic_lift_bounds(a, b):
    A = harmonic_mean(a, b)
    assert A == pytest.approx(harmonic_mean(b, a), rel=1e-15)
    assert min(a, b) * (1 - 1e-12) <= A <= max(a, b) * (1 + 1e-12)


def test_ellipticity_guard(field):
    x = np.array([[0.0, 0.0]])
    with pytest.raises(CoefficientError):
        field(x, np.array([-10.0, 0, 0, 0]))
    with pytest.raises(ValueError):
        field(x, np.zeros(3))


def test_eigs_csv(tmp_path, field):
    field.axes[0].to_csv(tmp_path / "e.csv", 2)
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[0].startswith("i,lambda,")
