"""Small dense networks with a fixed flat parameter layout.

Parameters of one MLP live in a single 1-D float64 array. The layout is a pure
function of the :class:`MlpSpec`, so a checkpoint only needs the MlpSpec and the
array. Derivatives come from JAX; everything here is traceable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

LN_EPS = 1e-6

ACTIVATIONS: dict[str, Callable] = {
    "tanh": jnp.tanh,
    "identity": lambda h: h,
}


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    out_dim: int
    hidden_widths: tuple[int, ...] = (32,)
    activation: str = "tanh"
    layer_norm: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"MLP dimensions must be positive, got {self.in_dim}->{self.out_dim}")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError(f"hidden widths must be positive, got {self.hidden_widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.in_dim, *self.hidden_widths, self.out_dim)

    def to_dict(self) -> dict:
        return {
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "hidden_widths": list(self.hidden_widths),
            "activation": self.activation,
            "layer_norm": self.layer_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(
            in_dim=d["in_dim"],
            out_dim=d["out_dim"],
            hidden_widths=tuple(d["hidden_widths"]),
            activation=d["activation"],
            layer_norm=d["layer_norm"],
        )


class Slot(NamedTuple):
    layer: int
    kind: str  # "W", "b", "gain" or "offset"
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


def layout(spec: MlpSpec) -> list[Slot]:
    """Flat-array layout: per layer W (row-major, out x in), b, then LN gain/offset on hidden layers."""
    slots = []
    off = 0
    widths = spec.widths
    n_layers = len(widths) - 1
    for k in range(n_layers):
        fan_in, fan_out = widths[k], widths[k + 1]
        for kind, shape in (("W", (fan_out, fan_in)), ("b", (fan_out,))):
            slots.append(Slot(k, kind, shape, off))
            off += int(np.prod(shape))
        if spec.layer_norm and k < n_layers - 1:
            for kind in ("gain", "offset"):
                slots.append(Slot(k, kind, (fan_out,), off))
                off += fan_out
    return slots


def param_count(spec: MlpSpec) -> int:
    last = layout(spec)[-1]
    return last.offset + last.size


def mlp_init(spec: MlpSpec, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Weights and biases i.i.d. Uniform[-scale, scale]; layer-norm gain 1, offset 0."""
    if not scale > 0:
        raise ValueError(f"init scale must be positive, got {scale}")
    params = np.empty(param_count(spec))
    for slot in layout(spec):
        sl = slice(slot.offset, slot.offset + slot.size)
        if slot.kind in ("W", "b"):
            params[sl] = rng.uniform(-scale, scale, size=slot.size)
        elif slot.kind == "gain":
            params[sl] = 1.0
        else:
            params[sl] = 0.0
    return params


def unflatten(spec: MlpSpec, params) -> list[dict]:
    layers: list[dict] = [dict() for _ in range(len(spec.widths) - 1)]
    for slot in layout(spec):
        layers[slot.layer][slot.kind] = params[slot.offset : slot.offset + slot.size].reshape(slot.shape)
    return layers


def normalize(h):
    """Zero-mean, unit-variance across the last axis. LN_EPS floors the variance."""
    mu = jnp.mean(h, axis=-1, keepdims=True)
    var = jnp.mean((h - mu) ** 2, axis=-1, keepdims=True)
    return (h - mu) / jnp.sqrt(jnp.maximum(var, LN_EPS))


def mlp_apply(spec: MlpSpec, params, z):
    """Evaluate the network on a single input vector (vmap for batches)."""
    if z.shape[-1] != spec.in_dim:
        raise ValueError(f"input has dimension {z.shape[-1]}, network expects {spec.in_dim}")
    act = ACTIVATIONS[spec.activation]
    layers = unflatten(spec, params)
    h = z
    for k, layer in enumerate(layers):
        h = layer["W"] @ h + layer["b"]
        if k < len(layers) - 1:
            if spec.layer_norm:
                h = normalize(h) * layer["gain"] + layer["offset"]
            h = act(h)
    return h


# Differentiation contract. Thin names over JAX so callers never import it for this.

def grad(f: Callable, x):
    return jax.grad(f)(x)


def jacobian(f: Callable, x):
    return jax.jacfwd(f)(x)


def hessian(f: Callable, x):
    return jax.hessian(f)(x)


def laplacian(f: Callable, x):
    """Trace of the Hessian of a scalar function of one coordinate vector."""
    x = jnp.asarray(x)
    if x.ndim == 0:
        return jax.grad(jax.grad(f))(x)
    return jnp.trace(jax.hessian(f)(x))
