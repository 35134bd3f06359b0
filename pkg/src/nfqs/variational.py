"""Ground-state search: stochastic <H> and Adam over flow parameters."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from nfqs.errors import NonFinite
from nfqs.flow import Flow, SampleBatch, check_outputs
from nfqs.hamiltonian import local_energy, local_energy_terms
from nfqs.optim import adam_init, adam_update

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 2**10
    steps: int = 30_000
    learning_rate: float = 3e-4
    eval_samples: int = 2**15
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    record_every: int = 10

    def __post_init__(self):
        if self.batch < 2:
            raise ValueError("batch must be >= 2")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")


class EnergyEstimate(NamedTuple):
    mean: float
    std_error: float
    n_samples: int


def _batch_loss(flow: Flow, ham, y):
    kin, pot = jax.vmap(lambda yy: local_energy_terms(flow, ham, yy))(y)
    return jnp.mean(kin + pot)


def loss_ground(flow: Flow, ham, batch: SampleBatch | np.ndarray) -> float:
    """Batch mean of |grad psi|^2/(2M|psi|^2) + V over samples drawn from the flow itself.

    Accepts a SampleBatch or the raw base points y.
    """
    y = batch.y if isinstance(batch, SampleBatch) else batch
    return float(jax.jit(_batch_loss, static_argnums=1)(flow, ham, jnp.asarray(y)))


def make_train_step(ham, lr, b1, b2, eps):
    @jax.jit
    def step(flow, opt, y):
        loss, g = jax.value_and_grad(_batch_loss)(flow, ham, y)
        params, opt = adam_update(flow.params, g.params, opt, lr, b1, b2, eps)
        return flow.replace(params), opt, loss

    return step


def train_ground(flow: Flow, ham, cfg: TrainConfig, rng: np.random.Generator | None = None):
    """Adam on fresh batches. Returns (trained flow, [(step, loss), ...]) decimated by cfg.record_every."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    step = make_train_step(ham, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    opt = adam_init(flow.params)
    curve = []
    for k in range(cfg.steps):
        y = jnp.asarray(rng.standard_normal((cfg.batch, flow.n_dof)))
        flow, opt, loss = step(flow, opt, y)
        if k % cfg.record_every == 0 or k == cfg.steps - 1:
            loss = float(loss)
            if not np.isfinite(loss):
                raise NonFinite(f"loss became non-finite at step {k}")
            curve.append((k, loss))
            if k % 1000 == 0:
                log.info("step %d loss %.6f", k, loss)
    return flow, curve


@jax.jit
def _local_energies(flow, ham, y):
    return jax.vmap(lambda yy: local_energy(flow, ham, yy))(y)


def local_energies(flow: Flow, ham, y, chunk: int = 4096) -> np.ndarray:
    """Complex (H psi)/psi at x = f(y) for each row of y."""
    f = jax.jit(_local_energies.__wrapped__, static_argnums=1)
    out = [np.asarray(f(flow, ham, jnp.asarray(y[i : i + chunk]))) for i in range(0, len(y), chunk)]
    return np.concatenate(out)


def evaluate_energy(flow: Flow, ham, n: int, rng: np.random.Generator) -> EnergyEstimate:
    """Mean of Re[(H psi)/psi] over n independent flow samples, with its standard error."""
    if n < 2:
        raise ValueError("need at least two samples")
    y = rng.standard_normal((n, flow.n_dof))
    e = local_energies(flow, ham, y).real
    check_outputs(e)
    return EnergyEstimate(float(np.mean(e)), float(np.std(e, ddof=1) / np.sqrt(n)), n)
