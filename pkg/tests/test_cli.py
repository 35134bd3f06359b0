import csv
import json

import numpy as np
import pytest
import yaml

from nfqs.cli import build_config, main
from nfqs.errors import ConfigError
from nfqs.grid import trapezoid


def _write(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_depth_zero_is_a_config_error(tmp_path, capsys):
    cfg = _write(tmp_path, {"model": {"depth": 0}})
    assert main(["ground", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "depth" in capsys.readouterr().err


@pytest.mark.parametrize(
    "data",
    [
        {"bogus": 1},
        {"model": {"width": 3}},
        {"hamiltonian": {"kind": "trap", "g2": 1.0, "spin": 2}},
        {"train": {"batch": 1}},
        {"architecture": "maf"},
        {"sweep": {"depth": [0]}},
        {"experiment": "pimc"},
    ],
)
def test_invalid_configs(tmp_path, data):
    with pytest.raises(ConfigError):
        build_config("ground", "quick", _write(tmp_path, data))


def test_merge_order(tmp_path):
    cfg = build_config("ground", "quick", _write(tmp_path, {"seed": 3, "train": {"steps": 7}}), seed=11)
    assert cfg.seed == 11 and cfg.train.seed == 11
    assert cfg.train.steps == 7
    assert cfg.train.batch == 2**8  # preset value survives
    assert build_config("ground", "paper").train.steps == 30_000


def test_ground_sweep_outputs(tmp_path):
    data = {
        "train": {"steps": 5, "batch": 16, "eval_samples": 64},
        "model": {"hidden_widths": [4]},
        "sweep": {"g2": [0.0, 1.0], "depth": [1]},
    }
    out = tmp_path / "g"
    assert main(["ground", "--config", _write(tmp_path, data), "--out", str(out)]) == 0
    rows = _read_csv(out / "sweep.csv")
    assert list(rows[0]) == ["g2", "depth", "energy", "std_error"]
    assert [float(r["g2"]) for r in rows] == [0.0, 1.0]
    man = json.loads((out / "manifest.json").read_text())
    assert man["experiment"] == "ground" and man["seed"] == 0
    for sub in ("g2_0_d1", "g2_1_d1"):
        assert (out / sub / "model.npz").exists()
        assert json.loads((out / sub / "energy.json").read_text())["depth"] == 1


def _evolve_config(n_steps, snapshots):
    return {
        "model": {"hidden_widths": []},
        "prepare": {"steps": 400, "batch": 64, "learning_rate": 2e-2},
        "evolve": {"n_steps": n_steps, "max_inner_iters": 3, "batch": 32, "eval_samples": 256},
        "grid": {"n_points": 1024, "snapshot_times": snapshots},
    }


def test_evolve_zero_steps(tmp_path):
    out = tmp_path / "e"
    assert main(["evolve", "--config", _write(tmp_path, _evolve_config(0, [])), "--out", str(out)]) == 0
    rows = _read_csv(out / "trace.csv")
    assert len(rows) == 1
    for col in ("bound_rigorous", "theta_bound", "theta", "theta_exact", "overlap_error"):
        assert col in rows[0]
    assert (out / "initial.npz").exists() and (out / "manifest.json").exists()


def test_evolve_snapshots(tmp_path):
    out = tmp_path / "e"
    cfg = _write(tmp_path, _evolve_config(2, [0.1, 0.2]))
    assert main(["evolve", "--config", cfg, "--out", str(out)]) == 0
    assert len(_read_csv(out / "trace.csv")) == 3
    for t in ("0.1", "0.2"):
        rows = _read_csv(out / f"density_T{t}.csv")
        assert list(rows[0]) == ["x", "density", "re_psi", "im_psi", "density_exact"]
        x = np.array([float(r["x"]) for r in rows])
        for col in ("density", "density_exact"):
            rho = np.array([float(r[col]) for r in rows])
            assert trapezoid(rho, x[1] - x[0]) == pytest.approx(1.0, abs=1e-3)


def test_exact_outputs(tmp_path):
    out = tmp_path / "x"
    data = {"evolve": {"n_steps": 10}, "grid": {"snapshot_times": [0.5, 1.0]}}
    assert main(["exact", "--config", _write(tmp_path, data), "--out", str(out)]) == 0
    rows = _read_csv(out / "exact.csv")
    assert len(rows) == 11
    assert float(rows[0]["theta"]) == pytest.approx(0.00234, abs=1e-5)
    assert all(abs(float(r["norm"]) - 1) < 1e-9 for r in rows)
    for t in ("0.5", "1"):
        assert list(_read_csv(out / f"density_T{t}.csv")[0]) == ["x", "density", "re_psi", "im_psi"]
    assert "grid_ground_energy" in json.loads((out / "manifest.json").read_text())


def test_pimc_outputs(tmp_path):
    out = tmp_path / "p"
    data = {"pimc": {"n_sweeps": 40, "n_therm": 10, "n_chains": 4}}
    assert main(["pimc", "--config", _write(tmp_path, data), "--out", str(out)]) == 0
    rec = json.loads((out / "pimc.json").read_text())
    for key in ("energy", "std_error", "beta", "dtau", "acceptance"):
        assert key in rec


def test_runtime_error_exit_code(tmp_path):
    # a hopelessly short preparation cannot reach the fidelity gate
    data = _evolve_config(1, [])
    data["prepare"] = {"steps": 1, "batch": 8, "learning_rate": 1e-9}
    assert main(["evolve", "--config", _write(tmp_path, data), "--out", str(tmp_path / "e")]) == 1
