"""Path-integral Monte Carlo for distinguishable particles (primitive action).

Many independent chains are advanced together as one (chains, slices, dof)
array. A sweep is a checkerboard of single-bead moves (even slices, then odd,
one particle at a time; beads of equal parity do not interact through the
kinetic term), staging moves that redraw whole segments of a worldline from the
free-particle bridge between fixed endpoints, and a rigid shift of each
particle's whole worldline.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from nfqs.variational import EnergyEstimate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PimcConfig:
    beta: float = 10.0
    dtau: float = 0.1
    n_sweeps: int = 20_000
    n_therm: int = 2_000
    seed: int = 0
    move_width: float = 0.0  # 0 picks sqrt(dtau / M) and tunes it during thermalization
    n_chains: int = 32
    com_width: float = 0.3
    staging_length: int = 10
    measure_every: int = 1

    @property
    def n_slices(self) -> int:
        return int(round(self.beta / self.dtau))

    def __post_init__(self):
        p = self.n_slices
        if abs(p * self.dtau - self.beta) > 1e-9 * self.beta:
            raise ValueError(f"beta / dtau = {self.beta / self.dtau} is not an integer")
        if p < 2 or p % 2:
            raise ValueError(f"need an even number of slices >= 2, got {p}")
        if self.staging_length and (self.staging_length < 2 or p % self.staging_length):
            raise ValueError("staging_length must be >= 2 and divide the number of slices (or be 0)")
        if self.n_sweeps < 1 or self.n_therm < 0 or self.n_chains < 1:
            raise ValueError("n_sweeps, n_chains must be positive and n_therm non-negative")


class PimcResult(NamedTuple):
    energy: EnergyEstimate  # centroid-virial estimator
    thermodynamic: EnergyEstimate
    acceptance: float
    com_acceptance: float
    staging_acceptance: float
    move_width: float


def _groups(spec) -> tuple[int, int]:
    n_particles = getattr(spec, "n_particles", 1)
    space_dim = getattr(spec, "space_dim", spec.n_dof)
    return n_particles, space_dim


def primitive_action(spec, path, dtau: float):
    """S = sum_k [ M |x_{k+1} - x_k|^2 / (2 dtau) + dtau V(x_k) ] for paths (..., P, N), periodic."""
    diff = np.roll(path, -1, axis=-2) - path
    kin = 0.5 * spec.mass / dtau * np.sum(diff * diff, axis=(-1, -2))
    return kin + dtau * np.sum(spec.potential(path), axis=-1)


def acceptance_probability(spec, old, new, dtau: float):
    return np.minimum(1.0, np.exp(-(primitive_action(spec, new, dtau) - primitive_action(spec, old, dtau))))


def estimators(spec, path, dtau: float):
    """(centroid virial, thermodynamic) energy of each path in a (..., P, N) array."""
    p, n = path.shape[-2:]
    beta = p * dtau
    v = spec.potential(path)
    grad = spec.force_grad(path)
    centroid = np.mean(path, axis=-2, keepdims=True)
    virial = n / (2 * beta) + np.mean(v + 0.5 * np.sum((path - centroid) * grad, axis=-1), axis=-1)
    diff = np.roll(path, -1, axis=-2) - path
    spring = 0.5 * spec.mass / (dtau * dtau * p) * np.sum(diff * diff, axis=(-1, -2))
    thermo = n / (2 * dtau) - spring + np.mean(v, axis=-1)
    return virial, thermo


class PathSampler:
    def __init__(self, spec, cfg: PimcConfig):
        self.spec = spec
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.n_particles, self.space_dim = _groups(spec)
        p, n = cfg.n_slices, spec.n_dof
        # start every bead near the classical minimum, slightly spread to avoid coincident particles
        self.path = 0.5 * self.rng.standard_normal((cfg.n_chains, p, n))
        self.width = cfg.move_width or np.sqrt(cfg.dtau / spec.mass)
        self.tries = 0
        self.accepts = 0
        self.com_tries = 0
        self.com_accepts = 0
        self.stage_tries = 0
        self.stage_accepts = 0

    def _bead_moves(self, parity: int, particle: int):
        cfg, spec = self.cfg, self.spec
        sl = slice(particle * self.space_dim, (particle + 1) * self.space_dim)
        k = np.arange(parity, cfg.n_slices, 2)
        prev = self.path[:, (k - 1) % cfg.n_slices]
        nxt = self.path[:, (k + 1) % cfg.n_slices]
        old = self.path[:, k]
        new = old.copy()
        new[..., sl] += self.width * self.rng.standard_normal(new[..., sl].shape)
        c = 0.5 * spec.mass / cfg.dtau

        def local(x):
            d1 = nxt[..., sl] - x[..., sl]
            d0 = x[..., sl] - prev[..., sl]
            return c * (np.sum(d1 * d1, -1) + np.sum(d0 * d0, -1)) + cfg.dtau * spec.potential(x)

        ds = local(new) - local(old)
        ok = self.rng.random(ds.shape) < np.exp(-np.maximum(ds, 0.0))
        self.path[:, k] = np.where(ok[..., None], new, old)
        self.tries += ok.size
        self.accepts += int(ok.sum())

    def _com_moves(self, particle: int):
        cfg, spec = self.cfg, self.spec
        sl = slice(particle * self.space_dim, (particle + 1) * self.space_dim)
        shift = cfg.com_width * self.rng.standard_normal((cfg.n_chains, 1, self.space_dim))
        new = self.path.copy()
        new[..., sl] += shift
        ds = cfg.dtau * (np.sum(spec.potential(new), -1) - np.sum(spec.potential(self.path), -1))
        ok = self.rng.random(ds.shape) < np.exp(-np.maximum(ds, 0.0))
        self.path = np.where(ok[:, None, None], new, self.path)
        self.com_tries += ok.size
        self.com_accepts += int(ok.sum())

    def _staging_moves(self, particle: int):
        """Redraw the interior of every length-l segment (random global offset) from the free bridge."""
        cfg, spec = self.cfg, self.spec
        l = cfg.staging_length
        p = cfg.n_slices
        sl = slice(particle * self.space_dim, (particle + 1) * self.space_dim)
        offset = int(self.rng.integers(l))
        path = np.roll(self.path, -offset, axis=1)
        n_seg = p // l
        seg = path.reshape(cfg.n_chains, n_seg, l, -1)
        end = np.roll(path, -l, axis=1).reshape(cfg.n_chains, n_seg, l, -1)[:, :, 0]
        new = seg.copy()
        var0 = cfg.dtau / spec.mass
        for j in range(1, l):
            rest = l - j  # remaining intervals to the fixed end after bead j
            mean = (rest * new[:, :, j - 1, sl] + end[..., sl]) / (rest + 1)
            sd = np.sqrt(var0 * rest / (rest + 1))
            new[:, :, j, sl] = mean + sd * self.rng.standard_normal(mean.shape)
        ds = cfg.dtau * np.sum(spec.potential(new[:, :, 1:]) - spec.potential(seg[:, :, 1:]), axis=-1)
        ok = self.rng.random(ds.shape) < np.exp(-np.maximum(ds, 0.0))
        seg = np.where(ok[..., None, None], new, seg)
        self.path = np.roll(seg.reshape(cfg.n_chains, p, -1), offset, axis=1)
        self.stage_tries += ok.size
        self.stage_accepts += int(ok.sum())

    def sweep(self):
        for parity in (0, 1):
            for particle in range(self.n_particles):
                self._bead_moves(parity, particle)
        if self.cfg.staging_length:
            for particle in range(self.n_particles):
                self._staging_moves(particle)
        for particle in range(self.n_particles):
            self._com_moves(particle)

    def acceptance(self) -> float:
        return self.accepts / max(self.tries, 1)

    def reset_counters(self):
        self.tries = self.accepts = self.com_tries = self.com_accepts = 0
        self.stage_tries = self.stage_accepts = 0


def blocking_error(series) -> tuple[float, list[float]]:
    """Standard error of the mean of a correlated series by repeated pair-averaging.

    Returns the plateau estimate and the error at every level. The plateau is
    the first level whose error agrees with the next one within the next one's
    own statistical uncertainty; failing that, the largest error with at least
    16 blocks.
    """
    x = np.asarray(series, dtype=float)
    errs: list[float] = []
    sigmas: list[float] = []
    while len(x) >= 16:
        n = len(x)
        e = np.std(x, ddof=1) / np.sqrt(n)
        errs.append(float(e))
        sigmas.append(float(e / np.sqrt(2 * (n - 1))))
        x = 0.5 * (x[: n // 2 * 2 : 2] + x[1 : n // 2 * 2 : 2])
    if not errs:
        raise ValueError("series too short for blocking")
    for k in range(len(errs) - 1):
        if errs[k + 1] >= errs[k] and errs[k + 1] - errs[k] < sigmas[k + 1]:
            return errs[k + 1], errs
    return max(errs), errs


def pimc_energy(spec, cfg: PimcConfig) -> PimcResult:
    """Ground-state energy estimate of spec at inverse temperature cfg.beta."""
    if getattr(spec, "g2", 0.0) < 0:
        raise ValueError("attractive couplings are not supported")
    sampler = PathSampler(spec, cfg)
    target = 0.5
    for k in range(cfg.n_therm):
        sampler.sweep()
        if cfg.move_width == 0 and (k + 1) % 50 == 0:
            sampler.width *= np.exp(sampler.acceptance() - target)
            sampler.reset_counters()
    sampler.reset_counters()
    virial, thermo = [], []
    for k in range(cfg.n_sweeps):
        sampler.sweep()
        if k % cfg.measure_every == 0:
            v, t = estimators(spec, sampler.path, cfg.dtau)
            virial.append(v.mean())
            thermo.append(t.mean())
    acc = sampler.acceptance()
    if not 0.2 <= acc <= 0.8:
        warnings.warn(f"bead acceptance {acc:.2f} outside [0.2, 0.8]; consider another move_width", stacklevel=2)
    n = len(virial) * cfg.n_chains
    ev = EnergyEstimate(float(np.mean(virial)), blocking_error(virial)[0], n)
    et = EnergyEstimate(float(np.mean(thermo)), blocking_error(thermo)[0], n)
    return PimcResult(
        ev,
        et,
        acc,
        sampler.com_accepts / max(sampler.com_tries, 1),
        sampler.stage_accepts / max(sampler.stage_tries, 1),
        float(sampler.width),
    )


def harmonic_primitive_energy(beta: float, n_slices: int, omega: float = 1.0, mass: float = 1.0, n_dof: int = 1) -> float:
    """Exact energy -d ln Z_P / d beta of the P-slice primitive-action harmonic oscillator.

    The discretized action is a circulant quadratic form with eigenvalues
    lam_j = (M/dtau)(2 - 2 cos(2 pi j / P)) + dtau M omega^2.
    """
    p = n_slices
    dtau = beta / p
    c = 2 - 2 * np.cos(2 * np.pi * np.arange(p) / p)
    lam = mass / dtau * c + dtau * mass * omega**2
    dlam = (-mass / dtau**2 * c + mass * omega**2) / p
    per_dof = 1 / (2 * dtau) + np.sum(dlam / (2 * lam))
    return float(n_dof * per_dof)
