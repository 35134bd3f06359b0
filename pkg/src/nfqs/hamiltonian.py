"""Potentials and wavefunction-level energy quantities.

Potentials are written once against the array API shared by numpy and
jax.numpy, so the same code serves the jitted flow losses and the vectorized
path-integral sampler. Coordinates of an n-particle system in d dimensions are
flattened particle-major: x[3*n + k] is component k of particle n.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Union

import jax
import jax.numpy as jnp
import numpy as np

from nfqs.errors import CoincidentParticles
from nfqs.flow import Flow, check_outputs

COINCIDENCE_EPS = 1e-10


def _xp(x):
    return jnp if isinstance(x, jax.Array) else np


class PotentialValue(NamedTuple):
    v: float
    grad: np.ndarray


@dataclass(frozen=True)
class HarmonicSpec:
    n_dof: int = 1
    omega: float = 1.0
    mass: float = 1.0
    shift: float = 0.0

    kind = "harmonic"

    def potential(self, x):
        xp = _xp(x)
        return 0.5 * self.mass * self.omega**2 * xp.sum(x * x, axis=-1) + self.shift

    def force_grad(self, x):
        return self.mass * self.omega**2 * x

    @property
    def ground_energy(self) -> float:
        return 0.5 * self.omega * self.n_dof + self.shift


@dataclass(frozen=True)
class TrapSpec:
    n_particles: int = 3
    space_dim: int = 3
    mass: float = 1.0
    omega: float = 1.0
    yukawa_mass: float = 2.0
    g2: float = 0.0

    kind = "trap"

    def __post_init__(self):
        if self.mass <= 0 or self.omega <= 0 or self.yukawa_mass <= 0:
            raise ValueError("mass, omega and yukawa_mass must be positive")

    @property
    def n_dof(self) -> int:
        return self.n_particles * self.space_dim

    def _split(self, x):
        return x.reshape(x.shape[:-1] + (self.n_particles, self.space_dim))

    def potential(self, x):
        xp = _xp(x)
        trap = 0.5 * self.mass * self.omega**2 * xp.sum(x * x, axis=-1)
        if self.g2 == 0:
            return trap
        pos = self._split(x)
        total = trap
        for a in range(self.n_particles):
            for b in range(a + 1, self.n_particles):
                r = xp.sqrt(xp.sum((pos[..., a, :] - pos[..., b, :]) ** 2, axis=-1))
                total = total + self.g2 * xp.exp(-self.yukawa_mass * r) / r
        return total

    def force_grad(self, x):
        """Analytic dV/dx, same shape as x."""
        xp = _xp(x)
        g = self.mass * self.omega**2 * x
        if self.g2 == 0:
            return g
        pos = self._split(x)
        pair = [xp.zeros_like(pos[..., 0, :]) for _ in range(self.n_particles)]
        for a in range(self.n_particles):
            for b in range(a + 1, self.n_particles):
                d = pos[..., a, :] - pos[..., b, :]
                r = xp.sqrt(xp.sum(d * d, axis=-1))
                # d/dr [g2 e^{-m r}/r] = -g2 e^{-m r} (1 + m r)/r^2
                dvdr = -self.g2 * xp.exp(-self.yukawa_mass * r) * (1 + self.yukawa_mass * r) / r**2
                f = (dvdr / r)[..., None] * d
                pair[a] = pair[a] + f
                pair[b] = pair[b] - f
        return g + xp.stack(pair, axis=-2).reshape(x.shape)

    def min_separation(self, x) -> float:
        pos = np.asarray(x).reshape(-1, self.n_particles, self.space_dim)
        best = np.inf
        for a in range(self.n_particles):
            for b in range(a + 1, self.n_particles):
                best = min(best, float(np.min(np.linalg.norm(pos[:, a] - pos[:, b], axis=-1))))
        return best


@dataclass(frozen=True)
class TunnelSpec:
    """Metastable well at x=0 (locally x^2/2) and a deeper well near x=b."""

    a: float = 0.25
    b: float = 4.25
    mass: float = 1.0

    kind = "tunnel"
    n_dof = 1

    def __post_init__(self):
        if self.b <= 0:
            raise ValueError("b must be positive")

    def v(self, x):
        """Elementwise potential of scalar positions."""
        return x**2 * (x - self.b) ** 2 / (2 * self.b**2) - self.a / self.b**3 * x**3

    def dv(self, x):
        return x * (x - self.b) * (2 * x - self.b) / self.b**2 - 3 * self.a * x**2 / self.b**3

    def potential(self, x):
        return self.v(x[..., 0])

    def force_grad(self, x):
        return self.dv(x)

    def barrier_top(self) -> float:
        """Location of the local maximum between the wells."""
        # roots of 2b x^2 - (3b^2 + 3a) x + b^3 = 0
        qa, qb, qc = 2 * self.b, -(3 * self.b**2 + 3 * self.a), self.b**3
        return float((-qb - np.sqrt(qb * qb - 4 * qa * qc)) / (2 * qa))


HamiltonianSpec = Union[HarmonicSpec, TrapSpec, TunnelSpec]

SPEC_KINDS = {"harmonic": HarmonicSpec, "trap": TrapSpec, "tunnel": TunnelSpec}


def spec_to_dict(spec) -> dict:
    return {"kind": spec.kind, **asdict(spec)}


def spec_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    if kind not in SPEC_KINDS:
        raise ValueError(f"unknown hamiltonian kind {kind!r}")
    return SPEC_KINDS[kind](**d)


def trap_potential(spec: TrapSpec, x) -> PotentialValue:
    x = np.asarray(x, dtype=float)
    if spec.g2 != 0 and spec.min_separation(x) < COINCIDENCE_EPS:
        raise CoincidentParticles("two particles coincide; Yukawa term diverges")
    return PotentialValue(float(spec.potential(x)), spec.force_grad(x))


def tunnel_potential(spec: TunnelSpec, x: float) -> PotentialValue:
    x = float(x)
    return PotentialValue(float(spec.v(x)), np.array([spec.dv(x)]))


# --- wavefunction quantities ---------------------------------------------------


def _has_jet(flow: Flow) -> bool:
    return flow.n_dof == 1 and hasattr(flow.arch, "inverse_jet")


def _map_with_jacobian(flow: Flow, y):
    """x(y), log|psi|, phase and their y-derivatives in one forward-mode pass."""
    if _has_jet(flow):
        x, u, la, la1, ph, ph1 = flow.arch.forward_jet(flow.params, y)
        return x, la, ph, u.reshape(1, 1), jnp.stack([la1, ph1]).reshape(2, 1)

    def out(yy):
        x, la, ph, _ = flow.forward(yy)
        return jnp.concatenate([x, jnp.stack([la, ph])])

    jac = jax.jacfwd(out)(y)
    val = out(y)
    n = y.shape[0]
    return val[:n], val[n], val[n + 1], jac[:n], jac[n:]


def _grad_x_log_psi(flow: Flow, y):
    """Chain rule: (dx/dy)^T grad_x = grad_y, solved densely (N is small)."""
    x, la, ph, jmat, gy = _map_with_jacobian(flow, y)
    gx = jnp.linalg.solve(jmat.T, gy.T)  # (N, 2): columns d log|psi|, d phase
    return x, gx, jmat


def local_energy_terms(flow: Flow, ham, y):
    """(|grad psi|^2 / (2M |psi|^2), V(x)) at x = f(y). Traceable, single sample."""
    x, gx, _ = _grad_x_log_psi(flow, y)
    kinetic = 0.5 / ham.mass * jnp.sum(gx * gx)
    return kinetic, ham.potential(x)


def local_energy(flow: Flow, ham, y):
    """Complex (H psi)/psi at x = f(y), with the Laplacian taken through the forward map.

    grad_x log psi is a function of y; differentiating it once more in y and
    contracting with (dx/dy)^{-1} gives the Hessian in x.
    """

    def grad_x(yy):
        _, gx, jmat = _grad_x_log_psi(flow, yy)
        return gx, jmat

    gx, jmat = grad_x(y)
    dgx_dy = jax.jacfwd(lambda yy: grad_x(yy)[0])(y)  # (N, 2, N)
    jinv = jnp.linalg.inv(jmat)
    # Hessian_x[i, j] = sum_k dG_i/dy_k (J^-1)_kj ; Laplacian is its trace
    lap = jnp.einsum("ick,ki->c", dgx_dy, jinv)
    gc = gx[:, 0] + 1j * gx[:, 1]
    lap_c = lap[0] + 1j * lap[1]
    x = flow.forward(y)[0]
    return -0.5 / ham.mass * (lap_c + jnp.sum(gc * gc)) + ham.potential(x)


def log_psi_derivatives(flow: Flow, x, generic: bool = False):
    """Complex log psi, its gradient and Laplacian at x (through the inverse map).

    One-dimensional continuous flows use their sensitivity integration unless
    ``generic`` asks for nested autodiff.
    """
    if _has_jet(flow) and not generic:
        logc, d1, d2 = flow.arch.inverse_jet(flow.params, x)
        return logc, d1[None], d2

    def f(xx):
        v = jnp.stack(flow.log_psi(xx))
        return v, v

    def first(xx):
        jac, v = jax.jacfwd(f, has_aux=True)(xx)
        return jac, (jac, v)

    hess, (jac, val) = jax.jacfwd(first, has_aux=True)(x)
    g = jac[0] + 1j * jac[1]
    lap = jnp.trace(hess[0]) + 1j * jnp.trace(hess[1])
    return val[0] + 1j * val[1], g, lap


def local_energy_at(flow: Flow, ham, x, generic: bool = False):
    """Complex (H psi)/psi at a configuration x. Traceable, single sample."""
    _, g, lap = log_psi_derivatives(flow, x, generic)
    return -0.5 / ham.mass * (lap + jnp.sum(g * g)) + ham.potential(x)


def apply_H(flow: Flow, ham, x) -> complex:
    """(H psi)(x) as a complex number."""
    x = jnp.atleast_1d(jnp.asarray(x, dtype=jnp.float64))
    logc, _, _ = jax.jit(log_psi_derivatives)(flow, x)
    e = jax.jit(local_energy_at, static_argnums=1)(flow, ham, x)
    check_outputs(logc.real, e.real, e.imag)
    return complex(np.exp(complex(logc)) * complex(e))


def apply_H_fd(flow: Flow, ham, x, h: float = 1e-3) -> complex:
    """(H psi)(x) with a 5-point central-difference Laplacian of psi itself (cross-check)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lp = jax.jit(flow.log_psi)

    def psi(p):
        la, ph = lp(jnp.asarray(p))
        return np.exp(complex(la) + 1j * complex(ph))

    centre = psi(x)
    lap = 0.0
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        lap += (-psi(x + 2 * e) + 16 * psi(x + e) - 30 * centre + 16 * psi(x - e) - psi(x - 2 * e)) / (12 * h * h)
    return -0.5 / ham.mass * lap + float(ham.potential(x)) * centre
