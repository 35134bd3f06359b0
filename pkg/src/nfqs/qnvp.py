"""QuantumNVP: affine coupling layers with a complex scale.

Each layer leaves masked coordinates alone and updates the rest as

    x_i = y_i |s_i(y*m)|^2 + t_i(y*m)

with ``s`` complex. The Jacobian is triangular, so log det dx/dy is the sum of
log|s_i|^2 over updated coordinates, and the phase of psi is the sum of arg s_i.

The scale network emits 2N reals ``u``; coordinate j gets
``s_j = 1 + u[2j] + i u[2j+1]`` so that a freshly initialized (small-weight)
network starts near the identity map.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from nfqs.flow import Flow, base_log_abs, check_outputs
from nfqs.nn import MlpSpec, layout, mlp_apply, mlp_init, param_count


def make_masks(n_dof: int, depth: int) -> tuple[tuple[int, ...], ...]:
    """Even coordinates held fixed in layer 0, odd in layer 1, and so on.

    With a single degree of freedom there is nothing to condition on, so every
    layer updates the lone coordinate with input-independent s and t.
    """
    if n_dof == 1:
        return tuple((0,) for _ in range(depth))
    even = tuple(1 if i % 2 == 0 else 0 for i in range(n_dof))
    odd = tuple(1 - m for m in even)
    return tuple(even if k % 2 == 0 else odd for k in range(depth))


@dataclass(frozen=True)
class QNVP:
    n_dof: int
    depth: int
    hidden_widths: tuple[int, ...] = (32,)
    layer_norm: bool = True
    masks: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self):
        if self.n_dof < 1:
            raise ValueError("n_dof must be >= 1")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        object.__setattr__(self, "hidden_widths", tuple(self.hidden_widths))
        if not self.masks:
            object.__setattr__(self, "masks", make_masks(self.n_dof, self.depth))
        masks = tuple(tuple(int(v) for v in m) for m in self.masks)
        object.__setattr__(self, "masks", masks)
        if len(masks) != self.depth or any(len(m) != self.n_dof for m in masks):
            raise ValueError("need one mask of length n_dof per layer")
        if any(all(masks[k]) for k in range(self.depth)):
            raise ValueError("an all-ones mask leaves the layer with nothing to update")
        if self.n_dof > 1 and any(not any(m) for m in masks):
            raise ValueError("an all-zeros mask is only allowed for a single degree of freedom")

    @property
    def s_spec(self) -> MlpSpec:
        return MlpSpec(self.n_dof, 2 * self.n_dof, self.hidden_widths, "tanh", self.layer_norm)

    @property
    def t_spec(self) -> MlpSpec:
        return MlpSpec(self.n_dof, self.n_dof, (), "identity", False)

    def init_params(self, rng: np.random.Generator, scale: float | None = None) -> list[dict]:
        if scale is None:
            scale = 1.0 / (self.depth * self.n_dof)
        return [
            {"s": jnp.asarray(mlp_init(self.s_spec, scale, rng)), "t": jnp.asarray(mlp_init(self.t_spec, scale, rng))}
            for _ in range(self.depth)
        ]

    def init(self, rng: np.random.Generator, scale: float | None = None) -> Flow:
        return Flow(self, self.init_params(rng, scale))

    def _coupling(self, layer, mask, v):
        """Complex scale and shift for one layer, conditioned on the masked coordinates of v."""
        mv = v * mask
        u = mlp_apply(self.s_spec, layer["s"], mv)
        s = (1.0 + u[0::2]) + 1j * u[1::2]
        t = mlp_apply(self.t_spec, layer["t"], mv)
        return s, t

    def forward(self, params, y):
        x = y
        logdet = 0.0
        phase = 0.0
        min_s2 = jnp.inf
        for layer, m in zip(params, self.masks):
            mask = jnp.asarray(m, dtype=y.dtype)
            free = 1.0 - mask
            s, t = self._coupling(layer, mask, x)
            s2 = jnp.real(s * jnp.conj(s))
            x = mask * x + free * (x * s2 + t)
            logdet = logdet + jnp.sum(free * jnp.log(s2))
            phase = phase + jnp.sum(free * jnp.angle(s))
            min_s2 = jnp.minimum(min_s2, jnp.min(jnp.where(free > 0, s2, jnp.inf)))
        return x, base_log_abs(y) - 0.5 * logdet, phase, min_s2

    def inverse(self, params, x):
        y = x
        logdet = 0.0
        phase = 0.0
        min_s2 = jnp.inf
        for layer, m in zip(reversed(params), reversed(self.masks)):
            mask = jnp.asarray(m, dtype=x.dtype)
            free = 1.0 - mask
            s, t = self._coupling(layer, mask, y)
            s2 = jnp.real(s * jnp.conj(s))
            # masked coordinates of the layer input equal those of its output
            y = mask * y + free * (y - t) / jnp.where(free > 0, s2, 1.0)
            logdet = logdet + jnp.sum(free * jnp.log(s2))
            phase = phase + jnp.sum(free * jnp.angle(s))
            min_s2 = jnp.minimum(min_s2, jnp.min(jnp.where(free > 0, s2, jnp.inf)))
        return y, base_log_abs(y) - 0.5 * logdet, phase, min_s2

    def to_dict(self) -> dict:
        return {
            "n_dof": self.n_dof,
            "depth": self.depth,
            "hidden_widths": list(self.hidden_widths),
            "layer_norm": self.layer_norm,
            "masks": [list(m) for m in self.masks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QNVP":
        return cls(d["n_dof"], d["depth"], tuple(d["hidden_widths"]), d["layer_norm"], tuple(map(tuple, d["masks"])))


def constant_layer_params(arch: QNVP, scales, shifts=None) -> list[dict]:
    """Parameters making every layer an input-independent coupling.

    ``scales[k]`` is the complex s vector (length N) of layer k and ``shifts[k]``
    the real t vector; only unmasked entries matter.
    """
    params = []
    for k in range(arch.depth):
        s_par = np.zeros(param_count(arch.s_spec))
        t_par = np.zeros(param_count(arch.t_spec))
        s_k = np.broadcast_to(np.asarray(scales[k], dtype=complex), (arch.n_dof,))
        out_bias = np.empty(2 * arch.n_dof)
        out_bias[0::2] = s_k.real - 1.0
        out_bias[1::2] = s_k.imag
        if arch.layer_norm:
            for slot in layout(arch.s_spec):
                if slot.kind == "gain":
                    s_par[slot.offset : slot.offset + slot.size] = 1.0
        s_slot = [sl for sl in layout(arch.s_spec) if sl.kind == "b"][-1]
        s_par[s_slot.offset : s_slot.offset + s_slot.size] = out_bias
        if shifts is not None:
            t_slot = [sl for sl in layout(arch.t_spec) if sl.kind == "b"][-1]
            t_par[t_slot.offset : t_slot.offset + t_slot.size] = np.broadcast_to(shifts[k], (arch.n_dof,))
        params.append({"s": jnp.asarray(s_par), "t": jnp.asarray(t_par)})
    return params


def gaussian_flow(n_dof: int, width: float, depth: int = 2, hidden_widths=(32,), layer_norm=True) -> Flow:
    """QNVP whose |psi|^2 is N(0, width^2) in every coordinate, with zero phase.

    ``width = 1/sqrt(2 M omega)`` gives the harmonic-oscillator ground state.
    Each coordinate is rescaled by the layers that update it; the product of
    their |s|^2 equals ``width``.
    """
    arch = QNVP(n_dof, depth, tuple(hidden_widths), layer_norm)
    n_updates = np.array([sum(1 for m in arch.masks if m[i] == 0) for i in range(n_dof)])
    scales = []
    for k in range(depth):
        free = np.array([m == 0 for m in arch.masks[k]])
        per = np.where(free, width ** (1.0 / np.maximum(n_updates, 1)), 1.0)
        scales.append(np.sqrt(per) + 0j)
    return Flow(arch, constant_layer_params(arch, scales))


def logdet_check(flow: Flow, y, step: float = 1e-6) -> float:
    """|analytic log det - log det of a central-difference Jacobian| at y."""
    y = np.asarray(y, dtype=float)
    n = y.size
    if n > 8:
        raise ValueError("dense Jacobian check is limited to n_dof <= 8")
    fwd = jax.jit(flow.arch.forward)
    x0, la, _, s2 = fwd(flow.params, jnp.asarray(y))
    check_outputs(x0, la, min_scale2=s2)
    jac = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        xp = np.asarray(fwd(flow.params, jnp.asarray(y + e))[0])
        xm = np.asarray(fwd(flow.params, jnp.asarray(y - e))[0])
        jac[:, j] = (xp - xm) / (2 * step)
    _, fd_logdet = np.linalg.slogdet(jac)
    analytic = -2.0 * (float(la) - float(base_log_abs(jnp.asarray(y))))
    return abs(analytic - fd_logdet)
