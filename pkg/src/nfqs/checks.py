"""Oracle-equivalence and invariant suite behind ``nfqs check``.

Every check returns a :class:`CheckResult` holding the measured value and its
tolerance; a check passes when ``value <= tolerance``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np
from jax.flatten_util import ravel_pytree

from nfqs.evolution import EvolveConfig, _loss_from_terms, _old_terms, evolve, loss_evolution
from nfqs.flow import Flow, psi_on_grid, sample
from nfqs.grid import Grid1D, energy, evolve_to, grid_ground_state, state_from_function, trapezoid
from nfqs.hamiltonian import HarmonicSpec, TrapSpec, TunnelSpec, apply_H, apply_H_fd
from nfqs.pimc import PimcConfig, harmonic_primitive_energy, pimc_energy
from nfqs.qcnf import QCNF, jacobian_ode_logdet, linear_field_params
from nfqs.qnvp import QNVP, logdet_check
from nfqs.variational import _batch_loss

log = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    seconds: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def _result(name: str, value: float, tol: float) -> CheckResult:
    return CheckResult(name, float(value), float(tol), bool(np.isfinite(value) and value <= tol))


def _rel(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def _fd_grad(fn: Callable[[np.ndarray], float], theta: np.ndarray, idx, h: float) -> np.ndarray:
    out = []
    for i in idx:
        e = np.zeros_like(theta)
        e[i] = h
        out.append((fn(theta + e) - fn(theta - e)) / (2 * h))
    return np.array(out)


def _param_grad_error(flow: Flow, scalar, rng: np.random.Generator, n_coords: int = 24, h: float = 1e-5) -> float:
    """Normwise relative error of d scalar/d params against central differences on a random subset."""
    flat, unravel = ravel_pytree(flow.params)
    f = jax.jit(lambda th: scalar(flow.replace(unravel(th))))
    g = np.asarray(jax.jit(jax.grad(lambda th: scalar(flow.replace(unravel(th)))))(flat))
    idx = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
    theta = np.asarray(flat)
    fd = _fd_grad(lambda th: float(f(jnp.asarray(th))), theta, idx, h)
    return _rel(g[idx], fd)


# --- individual suites -----------------------------------------------------------


def check_qnvp_logdet(seed: int = 0, n_models: int = 50) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_models):
        n = int(rng.integers(1, 9))
        depth = int(rng.integers(1, 5))
        flow = QNVP(n, depth, (16,)).init(rng, scale=0.5)
        y = rng.standard_normal(n)
        err = logdet_check(flow, y)
        _, la, _, _ = flow.forward(jnp.asarray(y))
        scale = max(1.0, abs(2.0 * float(la)))
        worst = max(worst, err / scale)
    return _result("qnvp_logdet_vs_fd_jacobian", worst, 1e-6)


def check_qcnf_logdet(seed: int = 0, n_models: int = 4) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_models):
        n = int(rng.integers(1, 7))
        flow = QCNF(n, (16,)).init(rng, scale=1.0)
        full, traced = jacobian_ode_logdet(flow, rng.standard_normal(n), n_steps=256)
        worst = max(worst, abs(full - traced))
    return _result("qcnf_trace_logdet_vs_jacobian_ode", worst, 1e-5)


def check_gradients(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []

    qn = QNVP(3, 2, (8,)).init(rng, scale=0.5)
    y3 = jnp.asarray(rng.standard_normal(3))
    out.append(_result("grad_qnvp_log_psi_params", _param_grad_error(qn, lambda f: sum(f.forward(y3)[1:3]), rng), 1e-4))

    qc = QCNF(2, (8,)).init(rng, scale=0.5)
    y2 = jnp.asarray(rng.standard_normal(2))
    out.append(_result("grad_qcnf_log_psi_params", _param_grad_error(qc, lambda f: sum(f.forward(y2)[1:3]), rng), 1e-4))

    ham = HarmonicSpec(2)
    tiny = QNVP(2, 1, (8,)).init(rng, scale=0.5)
    yb = jnp.asarray(rng.standard_normal((64, 2)))
    out.append(_result("grad_loss_ground_params", _param_grad_error(tiny, lambda f: _batch_loss(f, ham, yb), rng), 1e-4))

    tun = TunnelSpec()
    old = QCNF(1, (8,)).init(rng, scale=0.5)
    flat, unravel = ravel_pytree(old.params)
    new = old.replace(unravel(flat + 0.01 * rng.standard_normal(flat.size)))
    xs = jnp.asarray(sample(old, 32, rng).x)
    lo, eo = _old_terms(old, tun, xs)
    out.append(
        _result("grad_loss_evolution_params", _param_grad_error(new, lambda f: _loss_from_terms(f, tun, 0.1, xs, lo, eo), rng), 1e-4)
    )

    trap = TrapSpec(g2=4.0)
    x = rng.standard_normal(9)
    fd = _fd_grad(lambda v: float(trap.potential(v)), x, range(9), 1e-6)
    out.append(_result("grad_trap_potential", _rel(trap.force_grad(x), fd), 1e-4))

    x1 = rng.standard_normal(1)
    fd = _fd_grad(lambda v: float(tun.potential(v)), x1, range(1), 1e-6)
    out.append(_result("grad_tunnel_potential", _rel(tun.force_grad(x1), fd), 1e-4))

    flow1 = QCNF(1, (8,)).init(rng, scale=0.5)
    xq = rng.standard_normal(1)
    out.append(_result("apply_H_vs_finite_difference", _rel(apply_H(flow1, tun, xq), apply_H_fd(flow1, tun, xq)), 1e-4))
    return out


def check_normalization(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    grid = Grid1D(-12.0, 12.0, 4097)
    out = []
    for name, flow in [
        ("norm_qnvp_1d", QNVP(1, 3, (8,)).init(rng, scale=0.15)),
        ("norm_qcnf_1d", QCNF(1, (16,)).init(rng, scale=1.0)),
    ]:
        z = trapezoid(np.abs(psi_on_grid(flow, grid.x)) ** 2, grid.dx)
        out.append(_result(name, abs(z - 1.0), 1e-3))
    return out


def harmonic_eigenflow(n_steps: int = 16) -> Flow:
    """QCNF whose state is exactly the M = omega = 1 oscillator ground state.

    The field -(ln 2 / 2) z contracts the standard normal to variance 1/2.
    """
    arch = QCNF(1, (), n_steps)
    return Flow(arch, linear_field_params(arch, -np.log(2.0) / 2))


def check_eigenstate_stationarity(seed: int = 0) -> CheckResult:
    cfg = EvolveConfig(n_steps=1, batch=512, max_inner_iters=500, seed=seed, eval_samples=256)
    flow = harmonic_eigenflow()
    trace = evolve(flow, HarmonicSpec(1), cfg, observables={})
    grid = Grid1D(-10.0, 10.0, 2048)
    a = psi_on_grid(flow, grid.x)
    b = psi_on_grid(trace.steps[-1].flow, grid.x)
    drift = 1.0 - abs(trapezoid(np.conj(b) * a, grid.dx))
    return _result("eigenstate_stationarity", drift, 10 * cfg.loss_threshold * cfg.dt**2)


def check_grid_oracle() -> list[CheckResult]:
    ham = HarmonicSpec(1)
    grid = Grid1D(-10.0, 10.0, 2048)
    e0, _ = grid_ground_state(ham, grid)
    out = [_result("grid_harmonic_ground_energy", abs(e0 - 0.5), 1e-6)]
    st = state_from_function(grid, lambda x: np.exp(-0.5 * (x - 1.0) ** 2))
    worst = 0.0
    for t in np.linspace(0.5, 2 * np.pi, 8):
        st = evolve_to(st, ham, t)
        mean_x = trapezoid(grid.x * st.density(), grid.dx)
        worst = max(worst, abs(mean_x - np.cos(t)))
    out.append(_result("grid_coherent_state_mean_x", worst, 1e-4))
    out.append(_result("grid_energy_conservation", abs(energy(ham, st) - 1.0), 1e-6))
    return out


def check_exact_loss_identities(seed: int = 0) -> list[CheckResult]:
    e0, dt = 0.5, 0.1
    arch = QCNF(1, ())
    ham = HarmonicSpec(1)
    contract = -np.log(2.0) / 2
    base = Flow(arch, linear_field_params(arch, contract))
    delta = 2 * np.arctan(-0.5 * e0 * dt)
    cayley = Flow(arch, linear_field_params(arch, contract, phase_rate=delta))
    exact = Flow(arch, linear_field_params(arch, contract, phase_rate=-e0 * dt))
    x = sample(base, 4096, np.random.default_rng(seed)).x
    series = e0**6 * dt**4 / 144
    return [
        _result("loss_cayley_eigenstate", loss_evolution(cayley, base, ham, dt, x), 1e-10),
        _result("loss_exact_phase_vs_series", abs(loss_evolution(exact, base, ham, dt, x) / series - 1), 0.05),
    ]


def check_pimc_harmonic(seed: int = 0) -> CheckResult:
    cfg = PimcConfig(beta=10.0, dtau=0.1, n_sweeps=1500, n_therm=300, seed=seed, n_chains=32)
    res = pimc_energy(HarmonicSpec(1), cfg)
    exact = harmonic_primitive_energy(cfg.beta, cfg.n_slices)
    return _result("pimc_harmonic_sigma", abs(res.energy.mean - exact) / res.energy.std_error, 3.0)


SUITES: dict[str, Callable[[int], CheckResult | list[CheckResult]]] = {
    "qnvp_logdet": check_qnvp_logdet,
    "qcnf_logdet": check_qcnf_logdet,
    "gradients": check_gradients,
    "normalization": check_normalization,
    "eigenstate": check_eigenstate_stationarity,
    "grid": lambda seed: check_grid_oracle(),
    "loss_identities": check_exact_loss_identities,
    "pimc_harmonic": check_pimc_harmonic,
}


def run_checks(seed: int = 0, only: list[str] | None = None) -> list[CheckResult]:
    names = only or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValueError(f"unknown check suites: {unknown}")
    results = []
    for name in names:
        t = time.perf_counter()
        got = SUITES[name](seed)
        got = got if isinstance(got, list) else [got]
        for r in got:
            r.seconds = (time.perf_counter() - t) / len(got)
            log.info("%-40s %s value=%.3g tol=%.3g", r.name, "PASS" if r.passed else "FAIL", r.value, r.tolerance)
        results.extend(got)
    return results
