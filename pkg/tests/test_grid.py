import numpy as np
import pytest

from nfqs.grid import (
    Grid1D,
    density_table,
    energy,
    evolve_to,
    gaussian_tail,
    grid_evolve,
    grid_ground_state,
    grid_observables,
    state_from_function,
    theta_probability,
    unstable_state,
)
from nfqs.hamiltonian import HarmonicSpec, TunnelSpec

HO = HarmonicSpec(1)


def test_harmonic_ground_energy_and_density():
    g = Grid1D(-10, 10, 2048)
    e, st = grid_ground_state(HO, g)
    assert abs(e - 0.5) < 1e-6
    np.testing.assert_allclose(st.density(), np.exp(-g.x**2) / np.sqrt(np.pi), atol=1e-6)


def test_three_point_stencil_is_less_accurate():
    g5 = Grid1D(-10, 10, 512)
    g3 = Grid1D(-10, 10, 512, stencil=3)
    e5, _ = grid_ground_state(HO, g5)
    e3, _ = grid_ground_state(HO, g3)
    assert abs(e5 - 0.5) < abs(e3 - 0.5)


def test_coherent_state_oscillates():
    g = Grid1D(-10, 10, 2048)
    st = state_from_function(g, lambda x: np.exp(-0.5 * (x - 1.0) ** 2))
    for t in (np.pi / 2, np.pi, 2 * np.pi):
        st = evolve_to(st, HO, t)
        assert np.sum(g.x * st.density()) * g.dx == pytest.approx(np.cos(t), abs=1e-4)


def test_eigenstate_density_is_stationary():
    g = Grid1D(-10, 10, 1024)
    _, st = grid_ground_state(HO, g)
    out = grid_evolve(st, HO, 1e-3, 50)
    np.testing.assert_allclose(out.density(), st.density(), atol=1e-8)


def test_norm_preserved_over_many_steps():
    g = Grid1D()
    st = grid_evolve(unstable_state(g), TunnelSpec(), 5e-4, 10_000)
    assert st.norm() == pytest.approx(unstable_state(g).norm(), abs=1e-10)
    assert st.t == pytest.approx(5.0)


def test_energy_conserved():
    g = Grid1D()
    h = TunnelSpec()
    st = unstable_state(g)
    e0 = energy(h, st)
    assert energy(h, evolve_to(st, h, 2.0)) == pytest.approx(e0, abs=1e-9)


def test_theta_of_unstable_state():
    st = unstable_state(Grid1D())
    assert theta_probability(st, 2.0) == pytest.approx(0.00234, abs=1e-5)
    assert theta_probability(st, 2.0) == pytest.approx(gaussian_tail(2.0), abs=1e-6)
    assert theta_probability(st, st.grid.x_min) == pytest.approx(1.0, abs=1e-10)
    # symmetric about 0, and 0.137 is not a grid point
    assert theta_probability(st, 0.0) == pytest.approx(0.5, abs=1e-6)
    assert theta_probability(st, 0.137) + theta_probability(st, -0.137) == pytest.approx(1.0, abs=1e-5)


def test_observables_and_export():
    st = unstable_state(Grid1D(-8, 12, 256))
    th, rho = grid_observables(st, 2.0)
    assert th == theta_probability(st, 2.0)
    tab = density_table(st)
    assert tab.shape == (256, 4)
    np.testing.assert_array_equal(tab[:, 1], rho)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        Grid1D(1.0, 0.0)
    with pytest.raises(ValueError):
        grid_evolve(unstable_state(), HO, 2e-3)
    with pytest.raises(RuntimeError):
        # a packet launched at the wall reaches the boundary
        g = Grid1D(-4, 4, 400)
        st = state_from_function(g, lambda x: np.exp(-2 * (x - 3) ** 2 + 8j * x))
        grid_evolve(st, HarmonicSpec(1, omega=0.0), 1e-3, 2000)
