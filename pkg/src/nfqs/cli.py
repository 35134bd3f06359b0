"""Command-line experiment runner.

    nfqs ground|evolve|pimc|exact|check [--config FILE] [--seed N] [--out DIR] [--preset quick|paper]

Settings are merged in the order preset defaults, config file, command-line
flags. Config files are YAML mappings with optional sections ``hamiltonian``,
``model``, ``train``, ``evolve``, ``prepare``, ``pimc``, ``grid``, ``sweep``
and ``check``; every section is validated before any computation starts.

Exit codes: 0 success, 1 failed check or runtime error, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
import time
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

import nfqs
from nfqs.errors import ConfigError, NfqsError

log = logging.getLogger("nfqs")

EXPERIMENTS = ("ground", "evolve", "pimc", "exact", "check")
DENSITY_COLUMNS = ["x", "density", "re_psi", "im_psi"]

PRESETS: dict[str, dict[str, dict]] = {
    "quick": {
        "ground": {
            "hamiltonian": {"kind": "trap", "g2": 0.0},
            "model": {"depth": 2},
            "train": {"batch": 2**8, "steps": 5000, "learning_rate": 3e-4, "eval_samples": 2**15},
        },
        "evolve": {
            "architecture": "qcnf",
            "hamiltonian": {"kind": "tunnel"},
            "prepare": {"batch": 2**8, "steps": 2000, "learning_rate": 3e-3},
            "evolve": {
                "batch": 2**8,
                "resample_every": 1,
                "max_inner_iters": 100,
                "eval_samples": 2**12,
                "ledger_loss": "quadrature",
            },
        },
        "pimc": {"hamiltonian": {"kind": "trap", "g2": 0.0}, "pimc": {"n_sweeps": 2000, "n_therm": 500}},
        "exact": {"hamiltonian": {"kind": "tunnel"}},
        "check": {},
    },
    "paper": {
        "ground": {
            "hamiltonian": {"kind": "trap", "g2": 0.0},
            "model": {"depth": 2},
            "train": {"batch": 2**10, "steps": 30_000, "learning_rate": 3e-4, "eval_samples": 2**15},
        },
        "evolve": {
            "architecture": "qcnf",
            "hamiltonian": {"kind": "tunnel"},
            "prepare": {"batch": 2**10, "steps": 10_000, "learning_rate": 1e-3},
            "evolve": {},
        },
        "pimc": {"hamiltonian": {"kind": "trap", "g2": 0.0}, "pimc": {}},
        "exact": {"hamiltonian": {"kind": "tunnel"}},
        "check": {},
    },
}


@dataclass
class ModelConfig:
    depth: int = 2
    hidden_widths: tuple[int, ...] = (32,)
    layer_norm: bool | None = None  # None: on for QNVP, off for QCNF
    n_steps: int = 16
    init_scale: float | None = None


@dataclass
class GridConfig:
    x_min: float = -8.0
    x_max: float = 12.0
    n_points: int = 2048
    dt_grid: float = 5e-4
    snapshot_times: tuple[float, ...] = (1.0, 3.0, 5.0)
    compare_exact: bool = True


@dataclass
class ExperimentConfig:
    experiment: str
    architecture: str = "qnvp"
    seed: int = 0
    out: str = "runs"
    restarts: int = 1
    hamiltonian: Any = None
    model: ModelConfig = field(default_factory=ModelConfig)
    train: Any = None
    prepare: Any = None
    evolve: Any = None
    pimc: Any = None
    grid: GridConfig = field(default_factory=GridConfig)
    sweep: dict | None = None
    check: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


# --- configuration -----------------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _build(cls, section: dict | None, name: str):
    section = dict(section or {})
    known = {f.name for f in fields(cls)}
    extra = set(section) - known
    if extra:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
    for f in fields(cls):
        if f.name in section and isinstance(section[f.name], list):
            section[f.name] = tuple(section[f.name])
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{name}] section: {exc}") from exc


def build_config(experiment: str, preset: str = "quick", path: str | None = None, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    """Merge preset, file and flags into a validated ExperimentConfig."""
    from nfqs.evolution import EvolveConfig
    from nfqs.hamiltonian import spec_from_dict
    from nfqs.pimc import PimcConfig
    from nfqs.variational import TrainConfig

    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    raw = copy.deepcopy(PRESETS[preset][experiment])
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a mapping")
        if loaded.get("experiment", experiment) != experiment:
            raise ConfigError(f"config is for {loaded['experiment']!r}, not {experiment!r}")
        loaded.pop("experiment", None)
        raw = _merge(raw, loaded)
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["out"] = out
    raw.setdefault("out", f"runs/{experiment}")

    allowed = {f.name for f in fields(ExperimentConfig)} - {"experiment", "raw"}
    extra = set(raw) - allowed
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")

    cfg = ExperimentConfig(experiment, raw=raw)
    cfg.architecture = raw.get("architecture", "qnvp")
    if cfg.architecture not in ("qnvp", "qcnf"):
        raise ConfigError(f"architecture must be qnvp or qcnf, got {cfg.architecture!r}")
    cfg.seed = int(raw.get("seed", 0))
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")
    cfg.out = str(raw["out"])
    cfg.restarts = int(raw.get("restarts", 1))
    if cfg.restarts < 1:
        raise ConfigError("restarts must be >= 1")
    if "hamiltonian" in raw:
        try:
            cfg.hamiltonian = spec_from_dict(raw["hamiltonian"])
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid [hamiltonian] section: {exc}") from exc
    cfg.model = _build(ModelConfig, raw.get("model"), "model")
    if cfg.model.depth < 1:
        raise ConfigError(f"model depth must be >= 1, got {cfg.model.depth}")
    if cfg.model.n_steps < 1:
        raise ConfigError("model n_steps must be >= 1")
    cfg.grid = _build(GridConfig, raw.get("grid"), "grid")
    seeded = {"seed": cfg.seed}
    cfg.train = _build(TrainConfig, _merge(raw.get("train", {}), seeded), "train")
    cfg.prepare = _build(TrainConfig, _merge(raw.get("prepare", {}), seeded), "prepare")
    cfg.evolve = _build(EvolveConfig, _merge(raw.get("evolve", {}), seeded), "evolve")
    cfg.pimc = _build(PimcConfig, _merge(raw.get("pimc", {}), seeded), "pimc")
    cfg.sweep = raw.get("sweep")
    if cfg.sweep is not None:
        if not isinstance(cfg.sweep, dict) or set(cfg.sweep) - {"g2", "depth"}:
            raise ConfigError("sweep takes lists under 'g2' and 'depth'")
        for d in cfg.sweep.get("depth", []):
            if int(d) < 1:
                raise ConfigError(f"sweep depth must be >= 1, got {d}")
    cfg.check = dict(raw.get("check") or {})
    if experiment in ("ground", "pimc") and cfg.hamiltonian is None:
        raise ConfigError(f"{experiment} needs a [hamiltonian] section")
    if experiment in ("evolve", "exact") and (cfg.hamiltonian is None or cfg.hamiltonian.n_dof != 1):
        raise ConfigError(f"{experiment} needs a one-dimensional hamiltonian")
    return cfg


# --- output helpers ----------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def write_manifest(out: Path, cfg: ExperimentConfig, started: float, extra: dict | None = None) -> None:
    data = {
        "experiment": cfg.experiment,
        "config": cfg.raw,
        "seed": cfg.seed,
        "version": nfqs.__version__,
        "wall_time_s": time.time() - started,
        "argv": sys.argv[1:],
    }
    data.update(extra or {})
    write_json(out / "manifest.json", data)


# --- experiments -------------------------------------------------------------------


def make_flow(cfg: ExperimentConfig, n_dof: int, depth: int | None = None, seed: int | None = None):
    from nfqs.qcnf import QCNF
    from nfqs.qnvp import QNVP

    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    m = cfg.model
    if cfg.architecture == "qnvp":
        depth = depth or m.depth
        arch = QNVP(n_dof, depth, m.hidden_widths, True if m.layer_norm is None else m.layer_norm)
    else:
        arch = QCNF(n_dof, m.hidden_widths, m.n_steps, bool(m.layer_norm))
    return arch.init(rng, m.init_scale)


def _ground_point(cfg: ExperimentConfig, ham, depth: int, out: Path) -> dict:
    from nfqs.checkpoint import save_flow
    from nfqs.variational import evaluate_energy, train_ground

    best = None
    for r in range(cfg.restarts):
        seed = cfg.seed + r
        flow = make_flow(cfg, ham.n_dof, depth, seed)
        tc = replace(cfg.train, seed=seed)
        flow, curve = train_ground(flow, ham, tc)
        est = evaluate_energy(flow, ham, tc.eval_samples, np.random.default_rng(seed + 10_000))
        log.info("depth %d seed %d: E = %.5f +- %.5f", depth, seed, est.mean, est.std_error)
        if best is None or est.mean < best[0].mean:
            best = (est, flow, curve, seed)
    est, flow, curve, seed = best
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "training.csv", ["step", "loss"], curve)
    save_flow(flow, out / "model.npz")
    rec = {"g2": getattr(ham, "g2", 0.0), "depth": depth, "energy": est.mean, "std_error": est.std_error, "seed": seed}
    write_json(out / "energy.json", rec)
    return rec


def run_ground(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    ham = cfg.hamiltonian
    if cfg.sweep:
        g2s = cfg.sweep.get("g2", [getattr(ham, "g2", 0.0)])
        depths = cfg.sweep.get("depth", [cfg.model.depth])
        rows = []
        for g2 in g2s:
            for d in depths:
                h = replace(ham, g2=float(g2))
                rec = _ground_point(cfg, h, int(d), out / f"g2_{float(g2):g}_d{int(d)}")
                rows.append([rec["g2"], rec["depth"], rec["energy"], rec["std_error"]])
        write_csv(out / "sweep.csv", ["g2", "depth", "energy", "std_error"], rows)
    else:
        _ground_point(cfg, ham, cfg.model.depth, out)
    write_manifest(out, cfg, started)
    return 0


def run_evolve(cfg: ExperimentConfig) -> int:
    from nfqs.bounds import overlap_error
    from nfqs.checkpoint import save_flow
    from nfqs.evolution import evolve, prepare_initial_tunneling
    from nfqs.flow import psi_on_grid
    from nfqs.grid import Grid1D, evolve_to, theta_probability, unstable_state

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    g = cfg.grid
    grid = Grid1D(g.x_min, g.x_max, g.n_points)
    flow = make_flow(cfg, 1)
    flow, e0 = prepare_initial_tunneling(flow, cfg.prepare, grid)
    save_flow(flow, out / "initial.npz")
    trace = evolve(flow, cfg.hamiltonian, cfg.evolve, initial_error=e0, grid=grid)
    rows = trace.rows()

    if g.compare_exact:
        state = unstable_state(grid)
        for s, row in zip(trace.steps, rows):
            state = evolve_to(state, cfg.hamiltonian, s.t, g.dt_grid)
            row["theta_exact"] = theta_probability(state, cfg.evolve.x0)
            row["overlap_error"] = overlap_error(grid, psi_on_grid(s.flow, grid.x), state.psi)
    write_csv(out / "trace.csv", list(rows[0]), [list(r.values()) for r in rows])

    exact = unstable_state(grid)
    for t in g.snapshot_times:
        match = [s for s in trace.steps if abs(s.t - t) < 1e-9]
        if not match:
            continue
        exact = evolve_to(exact, cfg.hamiltonian, t, g.dt_grid)
        psi = psi_on_grid(match[0].flow, grid.x)
        cols = zip(grid.x, np.abs(psi) ** 2, psi.real, psi.imag, exact.density())
        write_csv(out / f"density_T{t:g}.csv", DENSITY_COLUMNS + ["density_exact"], cols)
    save_flow(trace.steps[-1].flow, out / "final.npz")
    write_manifest(out, cfg, started, {"initial_error": e0, "metadata": trace.metadata})
    return 0


def run_pimc(cfg: ExperimentConfig) -> int:
    from nfqs.pimc import pimc_energy

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    res = pimc_energy(cfg.hamiltonian, cfg.pimc)
    p = cfg.pimc
    rec = {
        "g2": getattr(cfg.hamiltonian, "g2", 0.0),
        "beta": p.beta,
        "dtau": p.dtau,
        "energy": res.energy.mean,
        "std_error": res.energy.std_error,
        "n_sweeps": p.n_sweeps,
        "acceptance": res.acceptance,
        "energy_thermodynamic": res.thermodynamic.mean,
        "std_error_thermodynamic": res.thermodynamic.std_error,
    }
    write_json(out / "pimc.json", rec)
    write_manifest(out, cfg, started)
    log.info("PIMC E = %.5f +- %.5f", res.energy.mean, res.energy.std_error)
    return 0


def run_exact(cfg: ExperimentConfig) -> int:
    from nfqs.grid import Grid1D, density_table, energy, evolve_to, grid_ground_state, theta_probability, unstable_state

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    g = cfg.grid
    grid = Grid1D(g.x_min, g.x_max, g.n_points)
    ham = cfg.hamiltonian
    state = unstable_state(grid)
    rows = []
    ev = cfg.evolve
    for n in range(ev.n_steps + 1):
        state = evolve_to(state, ham, n * ev.dt, g.dt_grid)
        rows.append([n, state.t, theta_probability(state, ev.x0), energy(ham, state), state.norm()])
        if any(abs(state.t - t) < 1e-9 for t in g.snapshot_times):
            write_csv(out / f"density_T{state.t:g}.csv", DENSITY_COLUMNS, density_table(state))
    write_csv(out / "exact.csv", ["step", "t", "theta", "energy", "norm"], rows)
    e_false, _ = grid_ground_state(ham, grid)
    write_manifest(out, cfg, started, {"grid_ground_energy": e_false})
    return 0


def run_check(cfg: ExperimentConfig) -> int:
    from nfqs.checks import run_checks

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    results = run_checks(cfg.seed, cfg.check.get("only"))
    report = {"passed": all(r.passed for r in results), "checks": [r.as_dict() for r in results]}
    write_json(out / "check_report.json", report)
    write_manifest(out, cfg, started)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.value:.3g} (tol {r.tolerance:.3g})")
    return 0 if report["passed"] else 1


RUNNERS = {"ground": run_ground, "evolve": run_evolve, "pimc": run_pimc, "exact": run_exact, "check": run_check}


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nfqs", description="Normalizing-flow quantum states: experiments and checks.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--preset", choices=tuple(PRESETS), default="quick")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = build_config(args.experiment, args.preset, args.config, args.seed, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return RUNNERS[cfg.experiment](cfg)
    except NfqsError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
