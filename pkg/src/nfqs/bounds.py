"""A-posteriori error accounting for real-time evolution.

With E = 1 - Re<psi_approx|psi_true> and |e> = |psi_true> - |psi_approx>,
|e| = sqrt(2E). Each accepted step contributes dt * sqrt(L) to the bound on E,
where L is the final discretized-Schrodinger residual of that step. For an
operator with finite norm, the expectation-value error is at most
||O|| (2|e| + |e|^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from nfqs.flow import Flow, psi_on_grid, sample
from nfqs.grid import Grid1D, trapezoid

RANDOM_WALK_NOTE = "heuristic scaling quoted for incoherent error growth: |e| ~ (dt) L_th T^(-1/2)"


@dataclass
class ErrorLedger:
    """Running sums of per-step residuals.

    ``initial_error`` is the measured overlap deficit of the prepared initial
    state; it is added to every rigorous bound.
    """

    initial_error: float = 0.0
    times: list[float] = field(default_factory=list)
    sqrt_loss: list[float] = field(default_factory=list)
    cumulative_bound: list[float] = field(default_factory=list)
    random_walk: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.initial_error < 0:
            raise ValueError("initial_error must be non-negative")

    def accumulate(self, dt: float, final_loss: float, t: float | None = None) -> "ErrorLedger":
        if final_loss < 0 or not np.isfinite(final_loss):
            raise ValueError(f"loss must be finite and non-negative, got {final_loss}")
        if dt <= 0:
            raise ValueError("dt must be positive")
        r = float(np.sqrt(final_loss))
        prev = self.cumulative_bound[-1] if self.cumulative_bound else 0.0
        prev_t = self.times[-1] if self.times else 0.0
        self.sqrt_loss.append(r)
        self.cumulative_bound.append(prev + dt * r)
        rw_prev = self.random_walk[-1] if self.random_walk else 0.0
        self.random_walk.append(float(np.sqrt(rw_prev**2 + (dt * r) ** 2)))
        self.times.append(prev_t + dt if t is None else float(t))
        return self

    @property
    def bound(self) -> float:
        """Current rigorous bound on E, including the initial-state deficit."""
        return self.initial_error + (self.cumulative_bound[-1] if self.cumulative_bound else 0.0)

    @property
    def e_norm(self) -> float:
        return state_error_norm(self.bound)

    def observable_bound(self, op_norm: float = 1.0) -> float:
        return observable_bound(op_norm, self.e_norm)

    @property
    def random_walk_e_norm(self) -> float:
        """Non-rigorous incoherent-sum estimate of |e| (diagnostic only)."""
        return self.random_walk[-1] if self.random_walk else 0.0


def state_error_norm(e_bound: float) -> float:
    """|e| = sqrt(2E), capped at 2 (the largest distance between unit vectors)."""
    if e_bound < 0:
        raise ValueError("error functional must be non-negative")
    return float(min(np.sqrt(2.0 * e_bound), 2.0))


def observable_bound(op_norm: float, e_norm: float) -> float:
    if op_norm < 0 or e_norm < 0:
        raise ValueError("norms must be non-negative")
    return float(op_norm * (2.0 * e_norm + e_norm**2))


class ThetaEstimate(NamedTuple):
    mean: float
    std_error: float
    n_samples: int


def theta_expectation(flow: Flow, x0: float, n: int, rng: np.random.Generator) -> ThetaEstimate:
    """Fraction of flow samples with x > x0, with its binomial standard error."""
    if flow.n_dof != 1:
        raise ValueError("theta_expectation is defined for one-dimensional flows")
    xs = sample(flow, n, rng).x[:, 0]
    p = float(np.mean(xs > x0))
    return ThetaEstimate(p, float(np.sqrt(p * (1 - p) / n)), n)


def overlap(grid: Grid1D, psi_a: np.ndarray, psi_b: np.ndarray) -> complex:
    """<a|b> by the trapezoid rule."""
    return complex(trapezoid(np.conj(psi_a) * psi_b, grid.dx))


def overlap_error(grid: Grid1D, psi_approx: np.ndarray, psi_exact: np.ndarray) -> float:
    """1 - Re<approx|exact>, phase-sensitive (no global-phase alignment)."""
    if grid.dx > 0.02:
        raise ValueError(f"grid spacing {grid.dx:.3g} is too coarse for overlap quadrature (max 0.02)")
    return 1.0 - overlap(grid, psi_approx, psi_exact).real


def overlap_error_vs_oracle(flow: Flow, grid: Grid1D, psi_oracle: np.ndarray) -> float:
    return overlap_error(grid, psi_on_grid(flow, grid.x), psi_oracle)
