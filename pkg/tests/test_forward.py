import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcflow.forward import (
    ForwardOperator,
    apply_adjoint,
    apply_forward,
    convolve_psf,
    downsample_area,
    make_gaussian_psf,
    nearest_upsample,
    upsample_adjoint,
)
from mcflow.image import angular_frequencies, make_rng

from oracles import block_mean_loops, brute_circular_convolution


def test_band_edge_transfer_analytic():
    psf = make_gaussian_psf(2.0, (512, 512), "analytic")
    # |k| = pi/4 lies on the grid at index 512/8 = 64
    h = psf.transfer[64, 0]
    assert abs(abs(h) ** 2 - np.exp(-np.pi**2 / 4)) < 1e-12


def test_tiny_sigma_is_identity():
    psf = make_gaussian_psf(1e-3, (16, 16))
    assert np.max(np.abs(psf.transfer - 1.0)) < 1e-6
    assert psf.spatial[0, 0] == pytest.approx(1.0)


def test_discrete_matches_analytic():
    a = make_gaussian_psf(2.0, (512, 512), "discrete")
    b = make_gaussian_psf(2.0, (512, 512), "analytic")
    assert np.max(np.abs(a.transfer - b.transfer)) < 1e-6


@pytest.mark.parametrize("shape", [(16, 16), (15, 22), (64, 64)])
def test_psf_invariants(shape):
    psf = make_gaussian_psf(2.0, shape)
    k = psf.spatial
    assert k.min() >= 0
    assert abs(k.sum() - 1.0) < 1e-12
    flipped = np.roll(k[::-1, ::-1], (1, 1), axis=(0, 1))
    np.testing.assert_allclose(flipped, k, atol=1e-15)
    assert abs(psf.transfer[0, 0] - 1.0) < 1e-12
    assert np.max(np.abs(psf.transfer)) <= 1.0 + 1e-12


def test_psf_errors():
    with pytest.raises(ValueError):
        make_gaussian_psf(0.0)
    with pytest.raises(ValueError):
        make_gaussian_psf(1.0, (8, 8), "spline")


def test_convolve_constant_and_impulse():
    psf = make_gaussian_psf(2.0, (32, 32))
    np.testing.assert_allclose(convolve_psf(np.full((32, 32), 3.0), psf), 3.0, rtol=1e-12)
    delta = np.zeros((32, 32))
    delta[0, 0] = 1.0
    np.testing.assert_allclose(convolve_psf(delta, psf), psf.spatial, atol=1e-15)


@pytest.mark.parametrize("shape", [(12, 20), (64, 64)])
def test_convolution_matches_brute_force(shape):
    psf = make_gaussian_psf(2.0, shape)
    x = make_rng(3).standard_normal(shape)
    ref = brute_circular_convolution(x, psf.spatial)
    assert np.max(np.abs(convolve_psf(x, psf) - ref)) < 1e-9


def test_convolution_preserves_flux():
    psf = make_gaussian_psf(2.0, (48, 48))
    x = make_rng(4).uniform(0, 10, (48, 48))
    assert abs(convolve_psf(x, psf).sum() - x.sum()) / x.sum() < 1e-9


def test_downsample_examples():
    np.testing.assert_array_equal(downsample_area(np.array([[1.0, 2.0], [3.0, 4.0]]), 2), [[2.5]])
    np.testing.assert_allclose(downsample_area(np.full((8, 12), 7.0), 4), 7.0)
    x = make_rng(5).standard_normal((6, 6))
    np.testing.assert_array_equal(downsample_area(x, 1), x)
    np.testing.assert_allclose(downsample_area(x, 3), block_mean_loops(x, 3), atol=1e-14)
    with pytest.raises(ValueError):
        downsample_area(np.zeros((6, 7)), 2)


def test_upsample_adjoint_examples():
    np.testing.assert_array_equal(upsample_adjoint(np.array([[1.0]]), 2), np.full((2, 2), 0.25))
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    y = np.array([[1.0]])
    assert np.vdot(downsample_area(x, 2), y) == pytest.approx(2.5)
    assert np.vdot(x, upsample_adjoint(y, 2)) == pytest.approx(2.5)
    np.testing.assert_array_equal(upsample_adjoint(x, 1), x)
    np.testing.assert_array_equal(nearest_upsample(y, 2), np.ones((2, 2)))


def test_forward_examples():
    op = ForwardOperator.gaussian((64, 64), 4, 2.0)
    assert op.lr_shape == (16, 16)
    delta = np.zeros((64, 64))
    delta[10, 20] = 1.0
    assert apply_forward(op, delta).sum() == pytest.approx(1 / 16, abs=1e-12)
    np.testing.assert_allclose(op(np.full((64, 64), 2.0)), 2.0, rtol=1e-12)
    x = make_rng(6).standard_normal((64, 64))
    np.testing.assert_array_equal(op(x), downsample_area(convolve_psf(x, op.psf), 4))


def test_adjoint_examples():
    op = ForwardOperator.gaussian((64, 64), 4)
    np.testing.assert_array_equal(apply_adjoint(op, np.zeros((16, 16))), 0.0)
    np.testing.assert_allclose(op.adjoint(np.full((16, 16), 3.0)), 3.0 / 16, rtol=1e-12)


def test_operator_dimension_errors():
    op = ForwardOperator.gaussian((16, 16), 2)
    with pytest.raises(ValueError):
        op(np.zeros((8, 8)))
    with pytest.raises(ValueError):
        op.adjoint(np.zeros((16, 16)))
    with pytest.raises(ValueError):
        ForwardOperator.gaussian((18, 18), 4)


@pytest.mark.parametrize("s", [1, 2, 4])
def test_adjoint_identity_random_pairs(s):
    op = ForwardOperator.gaussian((64, 64), s)
    rng = make_rng(100 + s)
    for _ in range(100):
        x = rng.standard_normal(op.hr_shape)
        y = rng.standard_normal(op.lr_shape)
        lhs = np.vdot(op(x), y)
        rhs = np.vdot(x, op.adjoint(y))
        assert abs(lhs - rhs) / (abs(lhs) + 1e-300) < 1e-9


@given(st.sampled_from([1, 2, 4]), st.integers(0, 2**32), st.floats(-5, 5), st.floats(-5, 5))
def test_linearity_and_flux(s, seed, alpha, beta):
    op = ForwardOperator.gaussian((32, 32), s)
    rng = make_rng(seed)
    x, z = rng.standard_normal((2, 32, 32))
    lhs = op(alpha * x + beta * z)
    rhs = alpha * op(x) + beta * op(z)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * max(1.0, np.max(np.abs(rhs)))
    assert abs(op(x).sum() - x.sum() / s**2) <= 1e-9 * max(1.0, np.abs(x).sum())


def test_analytic_transfer_values():
    psf = make_gaussian_psf(1.5, (32, 32), "analytic")
    ky, kx = angular_frequencies((32, 32))
    np.testing.assert_allclose(psf.transfer.real, np.exp(-0.5 * 1.5**2 * (ky**2 + kx**2)))
