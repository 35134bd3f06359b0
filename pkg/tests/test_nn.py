import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from nfqs import nn
from nfqs.nn import MlpSpec, layout, mlp_apply, mlp_init, param_count

apply = jax.jit(mlp_apply, static_argnums=0)


def test_init_range_depth_six_nine_dof():
    spec = MlpSpec(9, 18, (32,))
    p = mlp_init(spec, 1 / (6 * 9), np.random.default_rng(0))
    assert np.all(np.abs(p) <= 1 / 54)
    assert np.abs(p).max() > 0.9 / 54


def test_init_rejects_non_positive_scale():
    with pytest.raises(ValueError):
        mlp_init(MlpSpec(2, 2), 0.0, np.random.default_rng(0))


def test_init_is_deterministic():
    spec = MlpSpec(3, 4, (8, 8), layer_norm=True)
    a = mlp_init(spec, 0.1, np.random.default_rng(7))
    b = mlp_init(spec, 0.1, np.random.default_rng(7))
    assert a.tobytes() == b.tobytes()


def test_layer_norm_slots_start_as_identity():
    spec = MlpSpec(3, 4, (8,), layer_norm=True)
    p = mlp_init(spec, 0.1, np.random.default_rng(0))
    for slot in layout(spec):
        vals = p[slot.offset : slot.offset + slot.size]
        if slot.kind == "gain":
            assert np.all(vals == 1.0)
        elif slot.kind == "offset":
            assert np.all(vals == 0.0)
    assert layout(spec)[-1].offset + layout(spec)[-1].size == param_count(spec)


def test_zero_params_give_zero_output():
    spec = MlpSpec(3, 2, ())
    out = mlp_apply(spec, jnp.zeros(param_count(spec)), jnp.array([1.0, -2.0, 3.0]))
    np.testing.assert_array_equal(out, np.zeros(2))


def test_identity_linear_layer():
    spec = MlpSpec(3, 3, ())
    p = np.zeros(param_count(spec))
    p[:9] = np.eye(3).ravel()
    z = jnp.array([0.3, -1.2, 2.5])
    np.testing.assert_array_equal(mlp_apply(spec, jnp.asarray(p), z), z)


def test_wrong_input_dimension():
    spec = MlpSpec(3, 2)
    with pytest.raises(ValueError):
        mlp_apply(spec, jnp.zeros(param_count(spec)), jnp.zeros(4))


def test_layer_norm_statistics():
    h = jnp.asarray(np.random.default_rng(0).normal(3.0, 5.0, size=64))
    out = np.asarray(nn.normalize(h))
    assert abs(out.mean()) < 1e-12
    assert abs(out.var() - 1.0) < 1e-9


def test_polynomial_gradient():
    np.testing.assert_allclose(nn.grad(lambda x: x @ x, jnp.array([1.0, 2.0])), [2.0, 4.0])


def test_second_derivative_of_sine():
    assert abs(float(nn.laplacian(jnp.sin, jnp.array(0.0)))) < 1e-15


def test_laplacian_of_quadratic_form():
    a = np.diag([1.0, 2.0, 3.0])
    assert float(nn.laplacian(lambda x: x @ jnp.asarray(a) @ x, jnp.ones(3))) == pytest.approx(12.0)


@given(seed=st.integers(0, 2**16), layer_norm=st.booleans())
def test_jacobian_matches_central_differences(seed, layer_norm):
    rng = np.random.default_rng(seed)
    spec = MlpSpec(3, 2, (6,), layer_norm=layer_norm)
    p = jnp.asarray(mlp_init(spec, 0.7, rng))
    z = rng.standard_normal(3)
    jac = np.asarray(jax.jit(nn.jacobian, static_argnums=0)(lambda v: mlp_apply(spec, p, v), jnp.asarray(z)))
    h = 1e-6
    fd = np.empty((2, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd[:, j] = (np.asarray(apply(spec, p, jnp.asarray(z + e))) - np.asarray(apply(spec, p, jnp.asarray(z - e)))) / (2 * h)
    np.testing.assert_allclose(jac, fd, rtol=1e-6, atol=1e-8)


@given(seed=st.integers(0, 2**16))
def test_param_gradient_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    spec = MlpSpec(2, 1, (5,))
    p = mlp_init(spec, 0.8, rng)
    z = jnp.asarray(rng.standard_normal(2))
    f = lambda q: apply(spec, q, z)[0]
    g = np.asarray(jax.jit(jax.grad(lambda q: mlp_apply(spec, q, z)[0]))(jnp.asarray(p)))
    h = 1e-6
    for i in rng.choice(p.size, 5, replace=False):
        e = np.zeros_like(p)
        e[i] = h
        fd = (float(f(jnp.asarray(p + e))) - float(f(jnp.asarray(p - e)))) / (2 * h)
        assert abs(g[i] - fd) < 1e-7 * max(1.0, abs(fd)) + 1e-9


def test_spec_round_trip():
    spec = MlpSpec(3, 4, (8, 2), "tanh", True)
    assert MlpSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize("kwargs", [dict(in_dim=0, out_dim=1), dict(in_dim=1, out_dim=1, hidden_widths=(0,)), dict(in_dim=1, out_dim=1, activation="relu6")])
def test_invalid_specs(kwargs):
    with pytest.raises(ValueError):
        MlpSpec(**kwargs)
