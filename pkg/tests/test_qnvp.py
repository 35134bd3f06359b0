import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from nfqs import QNVP, ScalePinch
from nfqs.flow import base_log_abs, evaluate, log_psi_batch, psi_on_grid, sample
from nfqs.grid import Grid1D, trapezoid
from nfqs.qnvp import constant_layer_params, gaussian_flow, logdet_check


def constant_flow(n, masks, scales, shifts=None):
    arch = QNVP(n, len(masks), (4,), False, masks=masks)
    from nfqs import Flow

    return Flow(arch, constant_layer_params(arch, scales, shifts))


def test_identity_coupling():
    f = constant_flow(3, ((1, 0, 1),), [np.ones(3)])
    y = np.array([0.2, -1.0, 0.7])
    ev = evaluate(f, y)
    np.testing.assert_allclose(ev.x, y)
    assert ev.phase == 0.0
    assert ev.log_abs_psi == pytest.approx(-0.75 * np.log(2 * np.pi) - y @ y / 4)


def test_real_scale_two():
    f = constant_flow(2, ((1, 0),), [np.array([1.0, 2.0])])
    y = np.array([0.5, 1.0])
    ev = evaluate(f, y)
    np.testing.assert_allclose(ev.x, [0.5, 4.0])
    logdet = -2 * (ev.log_abs_psi - float(base_log_abs(jnp.asarray(y))))
    assert logdet == pytest.approx(np.log(4.0))
    assert ev.phase == 0.0


def test_unit_modulus_scale_gives_phase():
    f = constant_flow(2, ((1, 0),), [np.array([1.0, 1j])])
    y = np.array([0.5, 1.0])
    ev = evaluate(f, y)
    np.testing.assert_allclose(ev.x, y, atol=1e-15)
    assert ev.phase == pytest.approx(np.pi / 2)
    assert ev.log_abs_psi == pytest.approx(float(base_log_abs(jnp.asarray(y))))


def test_scale_pinch_raises():
    f = constant_flow(2, ((1, 0),), [np.array([1.0, 0.0])])
    with pytest.raises(ScalePinch):
        evaluate(f, np.array([0.1, 0.2]))


def test_sampling_identity_variance():
    f = constant_flow(2, ((1, 0),), [np.ones(2)])
    x = sample(f, 2**15, np.random.default_rng(0)).x
    se = np.sqrt(2 / 2**15)
    assert np.all(np.abs(x.var(axis=0) - 1) < 3 * se)


def test_sampling_contracted_variance():
    f = constant_flow(1, ((0,),), [np.array([0.5])])  # |s|^2 = 1/4
    x = sample(f, 2**15, np.random.default_rng(1)).x[:, 0]
    se = (1 / 16) * np.sqrt(2 / 2**15)
    assert abs(x.var() - 1 / 16) < 3 * se


def test_sample_rejects_empty_batch():
    with pytest.raises(ValueError):
        sample(gaussian_flow(1, 0.5), 0, np.random.default_rng(0))


def test_gaussian_flow_width():
    f = gaussian_flow(3, 1 / np.sqrt(2))
    x = sample(f, 2**14, np.random.default_rng(2)).x
    np.testing.assert_allclose(x.var(axis=0), 0.5, rtol=0.05)


@given(seed=st.integers(0, 2**16))
def test_normalization_quadrature(seed):
    f = QNVP(1, 3, (8,)).init(np.random.default_rng(seed), scale=0.15)
    # the N=1 map is affine, so x(1) - x(0) is the exact stretch; size the grid to 10 sigma
    x0, x1 = (float(f.forward(jnp.array([y]))[0][0]) for y in (0.0, 1.0))
    half = 10.0 * abs(x1 - x0)
    g = Grid1D(x0 - half, x0 + half, 8192)
    z = trapezoid(np.abs(psi_on_grid(f, g.x)) ** 2, g.dx)
    assert abs(z - 1) < 1e-3


@given(seed=st.integers(0, 2**16), n=st.integers(2, 6))
def test_logdet_matches_fd_jacobian(seed, n):
    rng = np.random.default_rng(seed)
    f = QNVP(n, 2, (8,)).init(rng, scale=0.5)
    assert logdet_check(f, rng.standard_normal(n)) < 1e-6


def test_logdet_check_constant_scaling():
    f = constant_flow(2, ((1, 0), (0, 1)), [np.array([1.0, 1.3]), np.array([0.7, 1.0])])
    assert logdet_check(f, np.array([0.4, -0.3])) < 1e-8


def test_logdet_check_identity_is_zero():
    f = constant_flow(2, ((1, 0),), [np.ones(2)])
    assert logdet_check(f, np.array([0.4, -0.3])) < 1e-9


@given(seed=st.integers(0, 2**16))
def test_inverse_round_trip(seed):
    rng = np.random.default_rng(seed)
    f = QNVP(4, 3, (8,)).init(rng, scale=0.4)
    b = sample(f, 16, rng)
    la, ph = log_psi_batch(f, b.x)
    np.testing.assert_allclose(la, b.log_abs_psi, atol=1e-10)
    np.testing.assert_allclose(ph, b.phase, atol=1e-10)


def test_phase_is_additive_over_layers():
    a = np.exp(0.3j)
    b = np.exp(-1.1j)
    f = constant_flow(1, ((0,), (0,)), [np.array([a]), np.array([b])])
    assert evaluate(f, np.array([0.3])).phase == pytest.approx(0.3 - 1.1)


def test_invalid_masks():
    with pytest.raises(ValueError):
        QNVP(2, 1, masks=((1, 1),))
    with pytest.raises(ValueError):
        QNVP(2, 2, masks=((1, 0), (0, 0)))
    with pytest.raises(ValueError):
        QNVP(2, 2, masks=((1, 0),))
    with pytest.raises(ValueError):
        QNVP(2, 0)
