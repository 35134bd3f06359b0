"""Architecture-independent pieces: the (architecture, parameters) bundle and batch records.

An architecture object (``QNVP`` or ``QCNF``) is a frozen, hashable description
of the network shapes. It provides

* ``forward(params, y) -> (x, log_abs_psi, phase, min_scale2)``
* ``inverse(params, x) -> (y, log_abs_psi, phase, min_scale2)``
* ``init_params(rng, scale)``

for a single configuration. :class:`Flow` pairs it with a parameter pytree and
is itself a pytree whose only leaves are the parameters, so it can be passed
straight through ``jax.jit`` and ``jax.grad``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import jax
import jax.numpy as jnp
import numpy as np

from nfqs.errors import NonFinite, ScalePinch

SCALE_EPS = 1e-12
NONFINITE_GUARD = 1e100


def base_log_abs(y):
    """log of (2 pi)^(-N/4) exp(-y.y/4): the square root of the standard normal density."""
    n = y.shape[-1]
    return -0.25 * n * jnp.log(2 * jnp.pi) - 0.25 * jnp.sum(y * y, axis=-1)


@jax.tree_util.register_pytree_node_class
@dataclass(frozen=True)
class Flow:
    arch: Any
    params: Any

    @property
    def n_dof(self) -> int:
        return self.arch.n_dof

    def forward(self, y):
        return self.arch.forward(self.params, y)

    def inverse(self, x):
        return self.arch.inverse(self.params, x)

    def log_psi(self, x):
        """(log|psi(x)|, phase(x)) at a configuration x."""
        _, la, ph, _ = self.arch.inverse(self.params, x)
        return la, ph

    def replace(self, params) -> "Flow":
        return Flow(self.arch, params)

    def tree_flatten(self):
        return (self.params,), self.arch

    @classmethod
    def tree_unflatten(cls, arch, children):
        return cls(arch, children[0])


@dataclass(frozen=True)
class PsiEval:
    x: np.ndarray
    log_abs_psi: float
    phase: float
    y: np.ndarray


@dataclass
class SampleBatch:
    x: np.ndarray
    y: np.ndarray
    log_abs_psi: np.ndarray
    phase: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.weights is None:
            self.weights = np.ones(len(self.x))

    def __len__(self):
        return len(self.x)


@jax.jit
def _forward_batch(flow: Flow, y):
    return jax.vmap(flow.forward)(y)


@jax.jit
def _inverse_batch(flow: Flow, x):
    return jax.vmap(flow.inverse)(x)


def check_outputs(*arrays, min_scale2=None):
    if min_scale2 is not None and np.min(min_scale2) <= SCALE_EPS:
        raise ScalePinch(f"coupling scale |s|^2 = {np.min(min_scale2):.3g} <= {SCALE_EPS}")
    for a in arrays:
        a = np.asarray(a)
        if not np.all(np.isfinite(a)) or np.max(np.abs(a), initial=0.0) > NONFINITE_GUARD:
            raise NonFinite("flow produced a non-finite or runaway value")


def evaluate(flow: Flow, y) -> PsiEval:
    """Map one base point y to x and the wavefunction there."""
    y = jnp.asarray(y, dtype=jnp.float64)
    if y.shape != (flow.n_dof,):
        raise ValueError(f"expected base point of shape ({flow.n_dof},), got {y.shape}")
    x, la, ph, s2 = jax.jit(flow.arch.forward)(flow.params, y)
    check_outputs(x, la, ph, min_scale2=s2)
    return PsiEval(np.asarray(x), float(la), float(ph), np.asarray(y))


def sample(flow: Flow, batch: int, rng: np.random.Generator) -> SampleBatch:
    """Exact i.i.d. draws from |psi|^2: push standard normals through the flow."""
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    y = rng.standard_normal((batch, flow.n_dof))
    x, la, ph, s2 = _forward_batch(flow, jnp.asarray(y))
    check_outputs(x, la, ph, min_scale2=s2)
    return SampleBatch(np.asarray(x), y, np.asarray(la), np.asarray(ph))


def log_psi_batch(flow: Flow, x):
    """(log|psi|, phase) at each row of x, via the inverse map."""
    _, la, ph, s2 = _inverse_batch(flow, jnp.asarray(x, dtype=jnp.float64))
    check_outputs(la, ph, min_scale2=s2)
    return np.asarray(la), np.asarray(ph)


def psi_on_grid(flow: Flow, xs) -> np.ndarray:
    """Complex psi on a 1-D grid (N = 1 flows only)."""
    if flow.n_dof != 1:
        raise ValueError("psi_on_grid needs a one-dimensional flow")
    la, ph = log_psi_batch(flow, np.asarray(xs).reshape(-1, 1))
    return np.exp(la + 1j * ph)
