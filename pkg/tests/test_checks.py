import json

import jax.numpy as jnp
import pytest
import yaml

from nfqs import checks
from nfqs.cli import main
from nfqs.flow import base_log_abs
from nfqs.qnvp import QNVP


def test_qnvp_logdet_suite_passes():
    r = checks.check_qnvp_logdet(seed=0, n_models=10)
    assert r.passed, r


def test_loss_identity_suite_passes():
    assert all(r.passed for r in checks.check_exact_loss_identities())


def test_grid_suite_passes():
    assert all(r.passed for r in checks.check_grid_oracle())


def test_unknown_suite():
    with pytest.raises(ValueError):
        checks.run_checks(only=["nope"])


def _write(tmp_path, data):
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(data))
    return str(p)


def test_injected_logdet_sign_error_fails_the_check(tmp_path, monkeypatch, capsys):
    original = QNVP.forward

    def broken(self, params, y):
        x, la, ph, s2 = original(self, params, y)
        # flip the sign of the accumulated log det
        return x, 2 * base_log_abs(y) - la, ph, s2

    monkeypatch.setattr(QNVP, "forward", broken)
    cfg = _write(tmp_path, {"check": {"only": ["qnvp_logdet"]}})
    code = main(["check", "--config", cfg, "--out", str(tmp_path / "out")])
    assert code == 1
    report = json.loads((tmp_path / "out" / "check_report.json").read_text())
    assert report["passed"] is False
    assert "FAIL" in capsys.readouterr().out


def test_cli_check_passes_on_clean_code(tmp_path):
    cfg = _write(tmp_path, {"check": {"only": ["qnvp_logdet", "grid"]}})
    assert main(["check", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
