"""Exact one-dimensional reference solver on a uniform grid.

H = -D2/(2M) + diag(V) with Dirichlet walls. D2 is the 5-point stencil by
default (pentadiagonal H); the 3-point stencil (tridiagonal H) is kept for
comparison. Time steps are Crank-Nicolson (Cayley) steps, which are unitary
for any dt.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import erf

import numpy as np
from scipy.linalg import eig_banded, solve_banded

BOUNDARY_GUARD = 1e-8


@dataclass(frozen=True)
class Grid1D:
    x_min: float = -8.0
    x_max: float = 12.0
    n_points: int = 2048
    stencil: int = 5

    def __post_init__(self):
        if self.x_max <= self.x_min or self.n_points < 8:
            raise ValueError("need x_max > x_min and at least 8 points")
        if self.stencil not in (3, 5):
            raise ValueError("stencil must be 3 or 5")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)


@dataclass
class GridState:
    grid: Grid1D
    psi: np.ndarray
    t: float = 0.0

    def norm(self) -> float:
        return float(trapezoid(np.abs(self.psi) ** 2, self.grid.dx))

    def density(self) -> np.ndarray:
        return np.abs(self.psi) ** 2


def trapezoid(values, dx: float):
    return dx * (np.sum(values) - 0.5 * (values[0] + values[-1]))


def potential_on_grid(spec, grid: Grid1D) -> np.ndarray:
    return np.asarray(spec.potential(grid.x[:, None]), dtype=float)


def hamiltonian_bands(spec, grid: Grid1D) -> np.ndarray:
    """Upper-band storage (scipy ``eig_banded`` layout) of the real symmetric H."""
    m = getattr(spec, "mass", 1.0)
    v = potential_on_grid(spec, grid)
    n = grid.n_points
    k = 1.0 / (2 * m * grid.dx**2)
    if grid.stencil == 3:
        bands = np.zeros((2, n))
        bands[1] = 2 * k + v
        bands[0, 1:] = -k
    else:
        # -f'' ~ (f_{-2} - 16 f_{-1} + 30 f_0 - 16 f_1 + f_2) / (12 dx^2)
        bands = np.zeros((3, n))
        bands[2] = 30 * k / 12 + v
        bands[1, 1:] = -16 * k / 12
        bands[0, 2:] = k / 12
    return bands


def apply_bands(bands: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """H psi from upper-band storage."""
    u = bands.shape[0] - 1
    out = bands[u] * psi
    for d in range(1, u + 1):
        off = bands[u - d, d:]
        out[:-d] += off * psi[d:]
        out[d:] += off * psi[:-d]
    return out


def energy(spec, state: GridState) -> float:
    bands = hamiltonian_bands(spec, state.grid)
    h_psi = apply_bands(bands, state.psi)
    return float(np.real(np.vdot(state.psi, h_psi)) / np.real(np.vdot(state.psi, state.psi)))


def normalize(grid: Grid1D, psi: np.ndarray) -> np.ndarray:
    return psi / np.sqrt(trapezoid(np.abs(psi) ** 2, grid.dx))


def grid_ground_state(spec, grid: Grid1D | None = None) -> tuple[float, GridState]:
    """Lowest eigenpair of the banded H (bisection + inverse iteration in LAPACK)."""
    grid = grid or Grid1D()
    bands = hamiltonian_bands(spec, grid)
    w, v = eig_banded(bands, select="i", select_range=(0, 0))
    psi = v[:, 0].astype(complex)
    psi = normalize(grid, psi)
    if np.real(psi[np.argmax(np.abs(psi))]) < 0:
        psi = -psi
    return float(w[0]), GridState(grid, psi, 0.0)


def state_from_function(grid: Grid1D, fn, t: float = 0.0) -> GridState:
    return GridState(grid, normalize(grid, np.asarray(fn(grid.x), dtype=complex)), t)


def unstable_state(grid: Grid1D | None = None) -> GridState:
    """pi^(-1/4) exp(-x^2/2): ground state of the false-vacuum quadratic well."""
    grid = grid or Grid1D()
    return GridState(grid, (np.pi**-0.25 * np.exp(-0.5 * grid.x**2)).astype(complex), 0.0)


def _full_bands(upper: np.ndarray) -> np.ndarray:
    """Upper-band storage -> (l+u+1, n) storage for ``solve_banded`` with l = u."""
    u = upper.shape[0] - 1
    n = upper.shape[1]
    ab = np.zeros((2 * u + 1, n), dtype=upper.dtype)
    ab[: u + 1] = upper
    for d in range(1, u + 1):
        ab[u + d, : n - d] = upper[u - d, d:]
    return ab


def _check_boundary(psi: np.ndarray, t: float):
    edge = max(abs(psi[0]), abs(psi[-1]))
    if edge >= BOUNDARY_GUARD:
        raise RuntimeError(f"wavefunction reached the grid boundary (|psi| = {edge:.2e} at t = {t:.4f})")


def grid_evolve(state: GridState, spec, dt_grid: float = 5e-4, n: int = 1, check_boundary: bool = True) -> GridState:
    """n Crank-Nicolson steps psi <- (1 + i dt H/2)^-1 (1 - i dt H/2) psi."""
    if dt_grid > 1e-3:
        raise ValueError(f"dt_grid = {dt_grid} exceeds the 1e-3 accuracy margin")
    grid = state.grid
    bands = hamiltonian_bands(spec, grid).astype(complex)
    u = bands.shape[0] - 1
    lhs = _full_bands(0.5j * dt_grid * bands)
    lhs[u] += 1.0
    rhs_bands = -0.5j * dt_grid * bands
    rhs_bands[u] += 1.0
    psi = state.psi.astype(complex).copy()
    t = state.t
    for _ in range(n):
        psi = solve_banded((u, u), lhs, apply_bands(rhs_bands, psi), check_finite=False)
        t += dt_grid
        if check_boundary:
            _check_boundary(psi, t)
    return GridState(grid, psi, t)


def evolve_to(state: GridState, spec, t_end: float, dt_grid: float = 5e-4) -> GridState:
    """Advance to t_end with the largest step <= dt_grid that lands exactly on it."""
    span = t_end - state.t
    if span < -1e-12:
        raise ValueError("cannot evolve backward")
    if span <= 1e-12:
        return state
    n = int(np.ceil(span / dt_grid - 1e-9))
    out = grid_evolve(state, spec, span / n, n)
    out.t = t_end
    return out


def theta_probability(state: GridState, x0: float) -> float:
    """Probability of x > x0: trapezoid over grid points beyond x0 plus the partial cell."""
    x = state.grid.x
    rho = state.density()
    if x0 <= x[0]:
        return float(trapezoid(rho, state.grid.dx))
    if x0 >= x[-1]:
        return 0.0
    i = int(np.searchsorted(x, x0, side="right"))  # first point strictly beyond x0
    tail = trapezoid(rho[i:], state.grid.dx) if len(rho) - i >= 2 else 0.0
    frac = (x[i] - x0) / state.grid.dx
    rho0 = rho[i - 1] + (rho[i] - rho[i - 1]) * (1 - frac)
    return float(tail + 0.5 * (x[i] - x0) * (rho0 + rho[i]))


def grid_observables(state: GridState, x0: float) -> tuple[float, np.ndarray]:
    return theta_probability(state, x0), state.density()


def gaussian_tail(x0: float, width: float = 1 / np.sqrt(2)) -> float:
    """P(X > x0) for X ~ N(0, width^2)."""
    return 0.5 * (1 - erf(x0 / (np.sqrt(2) * width)))


def density_table(state: GridState) -> np.ndarray:
    """Columns x, |psi|^2, Re psi, Im psi."""
    psi = state.psi
    return np.column_stack([state.grid.x, np.abs(psi) ** 2, psi.real, psi.imag])
