import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from nlpcm.errors import KernelError
from nlpcm.kernel import (KernelSpec, ball_moment, ball_moments, eval_kernel, multi_indices,
                          normalization_constant)


def _radial_moment(k, p):
    # independent oracle: |S^{d-1}| * int_0^delta gamma(r) r^(p+d-1) dr
    area = 2.0 if k.dim == 1 else 2 * math.pi
    val, _ = integrate.quad(lambda r: eval_kernel(k, r) * r ** (p + k.dim - 1), 0, k.delta,
                            epsabs=1e-14, epsrel=1e-13)
    return area * val


def test_normalization_examples():
    assert normalization_constant(1, 0) == pytest.approx(1.5, rel=1e-15)
    assert normalization_constant(2, 0) == pytest.approx(4 / math.pi, rel=1e-15)


@pytest.mark.parametrize("d,s", [(1, 0.0), (1, 0.5), (2, 0.0), (2, 1.0), (2, 1.5)])
def test_normalization_integral(d, s):
    k = KernelSpec(d, 1.0, s)
    assert _radial_moment(k, 2) == pytest.approx(d, rel=1e-12)


@pytest.mark.parametrize("d,s", [(1, 1.0), (1, -0.1), (2, 2.0), (2, 3.5)])
def test_inadmissible_singularity(d, s):
    with pytest.raises(KernelError):
        normalization_constant(d, s)
    with pytest.raises(KernelError):
        KernelSpec(d, 1.0, s)


def test_forcing_prefactor_1d():
    # 2 * gamma_delta = 3 / delta**3, the factor of the printed 1D forcing
    for delta in (0.38, 1.0, 0.1):
        assert 2 * eval_kernel(KernelSpec(1, delta), 0.5 * delta) == pytest.approx(3 / delta**3)


def test_eval_kernel_examples():
    assert eval_kernel(KernelSpec(1, 1.0), 0.5) == pytest.approx(1.5)
    k2 = KernelSpec(2, 0.5, 1.0)
    d0 = 2 * 3 / (2 * math.pi)
    assert eval_kernel(k2, 0.25) == pytest.approx(d0 / (0.125 * 0.25), rel=1e-12)
    for k in (KernelSpec(1, 0.38), k2, KernelSpec(2, 1.0)):
        assert eval_kernel(k, k.delta) == 0.0
        assert eval_kernel(k, 2 * k.delta) == 0.0


def test_eval_kernel_errors():
    with pytest.raises(KernelError):
        eval_kernel(KernelSpec(2, 1.0, 0.5), 0.0)
    with pytest.raises(KernelError):
        eval_kernel(KernelSpec(1, 1.0), -0.1)
    with pytest.raises(KernelError):
        KernelSpec(1, 0.0)


@given(st.sampled_from([(1, 0.0), (1, 0.7), (2, 0.0), (2, 1.2)]),
       st.floats(0.05, 2.0))
def test_kernel_positive_nonincreasing(ds, delta):
    k = KernelSpec(ds[0], delta, ds[1])
    r = np.linspace(1e-3, 1 - 1e-9, 200) * delta
    v = eval_kernel(k, r)
    assert np.all(v > 0)
    assert np.all(np.diff(v) <= 0)


def test_ball_moment_examples_1d():
    m = ball_moments(KernelSpec(1, 1.0), 3)
    assert m[(0,)] == pytest.approx(3.0)
    assert m[(2,)] == pytest.approx(1.0)
    assert m[(1,)] == 0.0 and m[(3,)] == 0.0


def test_ball_moment_examples_2d():
    k = KernelSpec(2, 1.0)
    m = ball_moments(k, 3)
    assert m[(1, 1)] == 0.0
    assert m[(2, 0)] == pytest.approx(1.0, rel=1e-14)
    assert m[(0, 2)] == pytest.approx(1.0, rel=1e-14)
    # adaptive 2D integration in polar coordinates
    val, _ = integrate.dblquad(lambda r, t: eval_kernel(k, r) * (r * math.cos(t)) ** 2 * r,
                               0, 2 * math.pi, 0, 1.0, epsabs=1e-13, epsrel=1e-12)
    assert val == pytest.approx(m[(2, 0)], abs=1e-10)


@pytest.mark.parametrize("d,s", [(1, 0.0), (2, 0.0), (2, 1.0)])
def test_ball_moment_radial_oracle(d, s):
    k = KernelSpec(d, 0.525, s)
    # |beta| = 0 and the trace of the second moments
    assert ball_moment(k, (0,) * d) == pytest.approx(_radial_moment(k, 0), rel=1e-10)
    trace = sum(ball_moment(k, tuple(2 * (i == j) for j in range(d))) for i in range(d))
    assert trace == pytest.approx(_radial_moment(k, 2), rel=1e-10)


@settings(max_examples=60)
@given(st.sampled_from([(1, 0.0), (1, 0.5), (2, 0.0), (2, 0.8), (2, 1.5)]),
       st.sampled_from([0.1, 0.38, 0.525, 1.0]))
def test_moment_normalization_and_scaling(ds, delta):
    d, s = ds
    k = KernelSpec(d, delta, s)
    k1 = KernelSpec(d, 1.0, s)
    m, m1 = ball_moments(k, 3), ball_moments(k1, 3)
    trace = sum(v for b, v in m.items() if sum(b) == 2 and max(b) == 2)
    assert trace == pytest.approx(d, rel=1e-12)
    # substituting z = delta * w: g_beta(delta) = delta**(|beta| - 2) g_beta(1)
    for b in m:
        assert m[b] == pytest.approx(delta ** (sum(b) - 2) * m1[b], rel=1e-12, abs=0)


@given(st.integers(0, 4), st.integers(0, 4))
def test_moment_symmetries(a, b):
    k = KernelSpec(2, 0.7)
    assert ball_moment(k, (a, b)) == ball_moment(k, (b, a))
    if a % 2 or b % 2:
        assert ball_moment(k, (a, b)) == 0.0


def test_multi_indices_count():
    assert len(multi_indices(1, 3)) == 4
    assert len(multi_indices(2, 3)) == math.comb(5, 3)
    with pytest.raises(KernelError):
        ball_moment(KernelSpec(2, 1.0), (2,))
