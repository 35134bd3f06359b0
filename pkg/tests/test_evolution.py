import csv

import numpy as np
import pytest

from nfqs import InitialStateNotReached, QCNF, Flow
from nfqs.checks import harmonic_eigenflow
from nfqs.evolution import (
    EvolveConfig,
    StepNotConverged,
    evolve,
    initial_fidelity,
    loss_evolution,
    loss_quadrature,
    prepare_initial_tunneling,
    shift_global_phase,
)
from nfqs.flow import evaluate, sample
from nfqs.grid import Grid1D
from nfqs.hamiltonian import HarmonicSpec, TunnelSpec
from nfqs.qcnf import linear_field_params
from nfqs.variational import TrainConfig, evaluate_energy

HO = HarmonicSpec(1)
E0, DT = 0.5, 0.1


def phased_eigenflow(delta):
    arch = QCNF(1, ())
    return Flow(arch, linear_field_params(arch, -np.log(2) / 2, phase_rate=delta))


@pytest.fixture(scope="module")
def xs():
    return sample(harmonic_eigenflow(), 4096, np.random.default_rng(0)).x


def test_unchanged_eigenstate_loss_is_energy_squared(xs):
    psi = harmonic_eigenflow()
    assert loss_evolution(psi, psi, HO, DT, xs) == pytest.approx(E0**2, rel=1e-8)


def test_cayley_step_has_zero_loss(xs):
    delta = 2 * np.arctan(-0.5 * E0 * DT)
    assert loss_evolution(phased_eigenflow(delta), harmonic_eigenflow(), HO, DT, xs) < 1e-10


def test_exact_phase_step_matches_series(xs):
    loss = loss_evolution(phased_eigenflow(-E0 * DT), harmonic_eigenflow(), HO, DT, xs)
    assert loss == pytest.approx(E0**6 * DT**4 / 144, rel=0.05)


def test_quadrature_and_sample_losses_agree(xs):
    old = harmonic_eigenflow()
    new = phased_eigenflow(-0.3)
    a = loss_evolution(new, old, HO, DT, xs)
    b = loss_quadrature(new, old, HO, DT, Grid1D(-10, 10, 2001))
    # an eigenstate has constant residual, so both are exact
    assert a == pytest.approx(b, rel=1e-6)


def test_global_phase_shift():
    f = QCNF(1, (8,)).init(np.random.default_rng(0))
    g = shift_global_phase(f, 0.4)
    y = np.array([0.7])
    assert evaluate(g, y).phase - evaluate(f, y).phase == pytest.approx(0.4)
    assert evaluate(g, y).log_abs_psi == evaluate(f, y).log_abs_psi


def test_zero_steps_gives_initial_record_only(tmp_path):
    cfg = EvolveConfig(n_steps=0, eval_samples=256)
    tr = evolve(harmonic_eigenflow(), HO, cfg)
    assert len(tr.steps) == 1 and len(tr.rows()) == 1
    assert tr.rows()[0]["bound_rigorous"] == 0.0
    tr.to_csv(tmp_path / "t.csv")
    with open(tmp_path / "t.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 1


def test_eigenstate_stays_stationary():
    cfg = EvolveConfig(n_steps=3, batch=512, max_inner_iters=300, eval_samples=2**14, seed=1)
    flow = harmonic_eigenflow()
    obs = {
        "mean_x": lambda f, rng: float(np.mean(sample(f, 2**14, rng).x)),
        "energy": lambda f, rng: evaluate_energy(f, HO, 2**12, rng).mean,
    }
    tr = evolve(flow, HO, cfg, observables=obs)
    rows = tr.rows()
    assert len(rows) == 4
    for r in rows:
        assert abs(r["mean_x"]) < 0.02
        assert abs(r["energy"] - 0.5) < 0.005
    led = tr.ledger.cumulative_bound
    assert all(b2 >= b1 for b1, b2 in zip(led, led[1:]))
    # the warm-started Cayley phase is already a zero of the loss
    assert all(s.converged for s in tr.steps)


def test_unconverged_steps_are_flagged():
    cfg = EvolveConfig(n_steps=1, batch=64, max_inner_iters=1, eval_samples=256, loss_threshold=1e-12, phase_warm_start=False)
    flow = QCNF(1, (4,)).init(np.random.default_rng(0))
    with pytest.warns(StepNotConverged):
        tr = evolve(flow, TunnelSpec(), cfg, observables={})
    assert not tr.steps[1].converged
    assert tr.rows()[1]["converged"] == 0


def test_initial_state_gate():
    flow = QCNF(1, (8,)).init(np.random.default_rng(0))
    with pytest.raises(InitialStateNotReached):
        prepare_initial_tunneling(flow, TrainConfig(batch=16, steps=1, learning_rate=1e-6))


def test_exact_initial_state_fidelity():
    fid, e0 = initial_fidelity(harmonic_eigenflow(), Grid1D())
    assert fid == pytest.approx(1.0, abs=1e-8)
    assert e0 == pytest.approx(0.0, abs=1e-8)


@pytest.mark.parametrize("kwargs", [dict(dt=0.0), dict(n_steps=-1), dict(batch=1), dict(ledger_loss="exact"), dict(loss_threshold=0.0)])
def test_invalid_config(kwargs):
    with pytest.raises(ValueError):
        EvolveConfig(**kwargs)
