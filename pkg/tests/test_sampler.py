import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.sparse.linalg import LinearOperator, cg

from mcflow.forward import ForwardOperator
from mcflow.image import make_rng
from mcflow.sampler import (
    RectifiedVelocity,
    SamplerConfig,
    TrajectoryRecord,
    cfm_loss,
    eta_schedule,
    euler_step,
    initial_state,
    interpolate,
    make_oracle_velocity,
    make_weight_maps,
    sample,
    wfm_loss,
)

from harness import run_spike, smooth_field


def test_interpolate_examples():
    rng = make_rng(0)
    x0, x1 = rng.standard_normal((2, 4, 4))
    xt, ut = interpolate(x0, x1, 0.0)
    np.testing.assert_array_equal(xt, x0)
    np.testing.assert_array_equal(ut, x1 - x0)
    xt, _ = interpolate(x0, x1, 1.0)
    np.testing.assert_array_equal(xt, x1)
    xt, ut = interpolate(np.zeros((2, 2)), np.full((2, 2), 2.0), 0.5)
    np.testing.assert_array_equal(xt, 1.0)
    np.testing.assert_array_equal(ut, 2.0)
    with pytest.raises(ValueError):
        interpolate(x0, x1, 1.5)


@given(st.floats(0, 1), st.integers(0, 2**32))
def test_mask_alignment(t, seed):
    rng = make_rng(seed)
    x0 = rng.standard_normal((8, 8))
    x1 = np.where(rng.random((8, 8)) < 0.3, rng.uniform(1, 2, (8, 8)), 0.0)
    xt, _ = interpolate(x0, x1, t)
    np.testing.assert_allclose(xt - (1 - t) * x0, t * x1, atol=1e-12)


def test_cfm_loss_examples():
    rng = make_rng(1)
    u = rng.standard_normal((5, 6))
    assert cfm_loss(u, u) == 0.0
    assert cfm_loss(u + 1, u) == pytest.approx(1.0)
    v = rng.standard_normal((5, 6))
    brute = sum((v[i, j] - u[i, j]) ** 2 for i in range(5) for j in range(6)) / 30
    assert cfm_loss(v, u) == pytest.approx(brute, rel=1e-12)


def test_wfm_loss_examples():
    rng = make_rng(2)
    v, u = rng.standard_normal((2, 6, 6))
    w = make_weight_maps(np.ones((6, 6)), np.zeros((6, 6)))
    assert wfm_loss(v, u, w) == pytest.approx(cfm_loss(v, u), abs=1e-12)

    wht = np.ones((6, 6))
    wht[2, 3] = 0.0
    big = v.copy()
    big[2, 3] += 1e6
    w = make_weight_maps(wht, np.zeros((6, 6)))
    assert wfm_loss(big, u, w) == pytest.approx(wfm_loss(v, u, w), rel=1e-12)

    mask = np.zeros((6, 6))
    mask[:3] = 1.0
    w = make_weight_maps(np.ones((6, 6)), mask)
    assert wfm_loss(u + 0.3, u, w) == pytest.approx(0.09)
    assert w.combined[0, 0] == 2 * w.combined[5, 5]


def test_weight_maps_validation():
    w = make_weight_maps(np.array([[0.0, 4.0]]), np.array([[1.0, 1.0]]))
    np.testing.assert_array_equal(w.combined, [[0.0, 4.0]])
    with pytest.raises(ValueError):
        make_weight_maps(np.array([[-1.0]]), np.array([[0.0]]))
    with pytest.raises(ValueError):
        make_weight_maps(np.array([[1.0]]), np.array([[0.5]]))
    with pytest.raises(ValueError):
        wfm_loss(np.zeros((1, 1)), np.zeros((1, 1)), make_weight_maps(np.zeros((1, 1)), np.zeros((1, 1))))


@given(st.integers(0, 2**32))
def test_wfm_uniform_equals_cfm(seed):
    rng = make_rng(seed)
    v, u = rng.standard_normal((2, 7, 5))
    w = make_weight_maps(np.full((7, 5), rng.uniform(0.1, 10)), np.zeros((7, 5)))
    assert abs(wfm_loss(v, u, w) - cfm_loss(v, u)) < 1e-12


def test_euler_examples():
    x = make_rng(3).standard_normal((4, 4))
    np.testing.assert_array_equal(euler_step(lambda x, t, c: np.zeros_like(x), x, 0.0, 0.1), x)
    u = np.full((4, 4), 0.7)
    n = 8
    z = x.copy()
    for i in range(n):
        z = euler_step(lambda x, t, c: u, z, i / n, 1 / n)
    np.testing.assert_allclose(z, x + u, atol=1e-14)
    with pytest.raises(ValueError):
        euler_step(lambda x, t, c: u, x, 0.0, 0.0)


@pytest.mark.parametrize("n", [1, 2, 7, 10, 50])
def test_rectified_lands_on_target(n):
    rng = make_rng(n)
    x0, x1 = rng.standard_normal((2, 8, 8))
    v = RectifiedVelocity(x1)
    z = x0
    for i in range(n):
        z = euler_step(v, z, i / n, 1 / n)
    assert np.max(np.abs(z - x1)) < 1e-12


def test_eta_schedule():
    cfg = SamplerConfig(10, 0.5)
    assert eta_schedule(cfg, 0) == 0.5
    assert eta_schedule(cfg, 5) == 0.25
    assert eta_schedule(cfg, 9) == pytest.approx(0.05)
    assert eta_schedule(SamplerConfig(10, 0.5, schedule="constant"), 9) == 0.5
    with pytest.raises(ValueError):
        eta_schedule(cfg, 10)


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(0)
    with pytest.raises(ValueError):
        SamplerConfig(10, -0.1)
    with pytest.raises(ValueError):
        SamplerConfig(10, 0.5, "heun")
    with pytest.raises(ValueError):
        SamplerConfig(10, 0.5, "wiener", 0.0)
    with pytest.raises(ValueError):
        SamplerConfig(10, 0.5, schedule="cosine")


def test_oracle_kinds():
    rng = make_rng(4)
    x0, x1 = rng.standard_normal((2, 6, 6))
    end = make_oracle_velocity("endpoint", x1, x0=x0)
    rect = make_oracle_velocity("rectified", x1)
    np.testing.assert_allclose(rect(x0, 0.0, None), end(x0, 0.0, None))
    z = x0
    for i in range(5):
        z = euler_step(end, z, i / 5, 0.2)
    np.testing.assert_allclose(z, x1, atol=1e-12)
    hal = make_oracle_velocity("hallucinating", x1, spike=((2, 2), 0.0))
    np.testing.assert_array_equal(hal(x0, 0.3, None), rect(x0, 0.3, None))
    with pytest.raises(ValueError):
        make_oracle_velocity("hallucinating", x1)
    with pytest.raises(ValueError):
        make_oracle_velocity("endpoint", x1)
    with pytest.raises(ValueError):
        make_oracle_velocity("learned", x1)


def _setup(seed=0):
    op = ForwardOperator.gaussian((64, 64), 4)
    x1 = smooth_field(seed)
    return op, x1, op(x1)


def test_sample_none_lands_on_target():
    op, x1, y = _setup()
    x, rec = sample(make_oracle_velocity("rectified", x1), y, None, op, SamplerConfig(10, 0.5, "none"), 3)
    assert np.max(np.abs(x - x1)) < 1e-10
    assert len(rec.times) == len(rec.step_sizes) == len(rec.residual_norms) == 10
    assert rec.step_sizes == [0.0] * 10


def test_sample_wiener_with_consistent_target_matches_none():
    op, x1, y = _setup()
    v = make_oracle_velocity("rectified", x1)
    a, _ = sample(v, y, None, op, SamplerConfig(10, 0.5, "none"), 3)
    b, _ = sample(v, y, None, op, SamplerConfig(10, 0.5, "wiener"), 3)
    assert np.sqrt(np.mean((a - b) ** 2)) < 1e-8


def _null_space_vector(op, seed):
    """Random HR image with A(n) = 0: remove its row-space component via CG."""
    z = make_rng(seed).standard_normal(op.hr_shape)
    m = op.lr_shape[0] * op.lr_shape[1]
    gram = LinearOperator((m, m), matvec=lambda u: op(op.adjoint(u.reshape(op.lr_shape))).ravel())
    u, info = cg(gram, op(z).ravel(), rtol=1e-14, maxiter=5000)
    assert info == 0
    return z - op.adjoint(u.reshape(op.lr_shape))


def test_endpoint_on_consistent_path_needs_no_correction():
    # both ends satisfy A(x) = y, so every Euler state does too and r stays ~0
    op, x1, y = _setup()
    x0 = x1 + _null_space_vector(op, 9)
    assert np.linalg.norm(op(x0) - y) < 1e-9
    v = make_oracle_velocity("endpoint", x1, x0=x0)
    a, _ = sample(v, y, None, op, SamplerConfig(10, 0.5, "none"), 0, x0=x0)
    b, _ = sample(v, y, None, op, SamplerConfig(10, 0.5, "wiener"), 0, x0=x0)
    assert np.sqrt(np.mean((a - b) ** 2)) < 1e-8


def test_eta_zero_is_bit_identical_to_none():
    op, x1, y = _setup()
    v = make_oracle_velocity("hallucinating", x1, spike=((20, 20), 5.0))
    a, ra = sample(v, y, None, op, SamplerConfig(10, 0.5, "none"), 11)
    b, rb = sample(v, y, None, op, SamplerConfig(10, 0.0, "wiener"), 11)
    np.testing.assert_array_equal(a, b)
    assert ra.residual_norms == rb.residual_norms


def test_single_step_without_correction():
    op, x1, y = _setup()
    x0 = initial_state(op.hr_shape, 5)
    v = make_oracle_velocity("endpoint", x1, x0=x0)
    x, _ = sample(v, y, None, op, SamplerConfig(1, 0.0, "wiener"), 5)
    np.testing.assert_array_equal(x, x0 + v(x0, 0.0, None) * 1.0)


def test_sample_deterministic_and_keeps_states():
    op, x1, y = _setup()
    v = make_oracle_velocity("rectified", x1)
    cfg = SamplerConfig(4, 0.5, "adjoint", keep_states=True)
    a, ra = sample(v, y, None, op, cfg, 21)
    b, rb = sample(v, y, None, op, cfg, 21)
    np.testing.assert_array_equal(a, b)
    assert len(ra.states) == 5
    assert ra.to_csv() == rb.to_csv()


def test_sample_dimension_checks():
    op, x1, y = _setup()
    v = make_oracle_velocity("rectified", x1)
    cfg = SamplerConfig()
    with pytest.raises(ValueError):
        sample(v, np.zeros((8, 8)), None, op, cfg, 0)
    with pytest.raises(ValueError):
        sample(v, y, np.zeros((8, 8)), op, cfg, 0)
    with pytest.raises(ValueError):
        sample(v, y, None, op, cfg, 0, x0=np.zeros((8, 8)))


def test_trajectory_csv_format():
    rec = TrajectoryRecord([0.0, 0.5], [0.5, 0.25], [1.0 / 3, 2.0])
    assert rec.to_csv() == "step,t,eta,residual_l2\n0,0,0.5,0.333333333333\n1,0.5,0.25,2\n"


@pytest.mark.parametrize("correction", ["adjoint", "wiener"])
def test_spike_correction_reduces_residual_and_deviation(correction):
    base = run_spike(0, "none")
    corr = run_spike(0, correction)
    assert corr["residual"] < base["residual"]
    assert corr["spike_dev"] < base["spike_dev"]


def test_median_residual_over_seeds():
    none = [run_spike(s, "none")["residual"] for s in range(20)]
    wien = [run_spike(s, "wiener")["residual"] for s in range(20)]
    assert np.median(wien) < np.median(none)


# Measured once on the 20-seed spike harness; guards against silent changes to
# the correction step.  Only the final step's correction survives the rectified
# re-targeting, hence the small magnitude.
SPIKE_REDUCTION_BASELINE = {"wiener": 1.225957910968578e-4, "adjoint": 4.67669759590672e-5}


@pytest.mark.parametrize("correction", sorted(SPIKE_REDUCTION_BASELINE))
def test_spike_reduction_regression_baseline(correction):
    none = np.median([run_spike(s, "none")["spike_dev"] for s in range(20)])
    corr = np.median([run_spike(s, correction)["spike_dev"] for s in range(20)])
    reduction = 1 - corr / none
    assert reduction > 0
    assert reduction == pytest.approx(SPIKE_REDUCTION_BASELINE[correction], rel=1e-6)
