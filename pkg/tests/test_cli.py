import json

import numpy as np
import pytest

from bilift.cli import main
from bilift.model import load_config, save_config


@pytest.fixture
def config_path(tmp_path, small_config):
    path = tmp_path / "cfg.json"
    save_config(small_config, path)
    return str(path)


def test_make_ensemble_unit_sphere(tmp_path):
    out = tmp_path / "ens.json"
    code = main([
        "make-ensemble", "--kind", "random-unit-sphere", "--l", "3", "--n", "4",
        "--m", "2", "--seed", "5", "--out", str(out), "--quiet",
    ])
    assert code == 0
    cfg = load_config(out)
    assert cfg.ensemble.l == 3 and cfg.ensemble.n == 4 and cfg.ensemble.m == 2
    assert cfg.ensemble.is_unit_norm(tol=1e-12)


def test_make_ensemble_symmetric(tmp_path):
    out = tmp_path / "sym.json"
    assert main(["make-ensemble", "--kind", "symmetric", "--l", "3", "--out",
                 str(out), "--quiet"]) == 0
    cfg = load_config(out)
    assert np.allclose(cfg.ensemble.xs, cfg.ensemble.xs[0])
    assert np.allclose(cfg.ensemble.ys, cfg.ensemble.ys[0])


def test_psi_command(config_path, tmp_path, capsys):
    out = tmp_path / "psi.json"
    code = main([
        "psi", "--config", config_path, "--t", "0.5", "--seed", "3",
        "--plan", "40,16", "--out", str(out), "--quiet",
    ])
    assert code == 0
    payload = json.loads(out.read_text())
    assert set(payload) == {"value", "std_error", "plan", "seed"}
    # bitwise reproducibility through the CLI
    out2 = tmp_path / "psi2.json"
    main(["psi", "--config", config_path, "--t", "0.5", "--seed", "3",
          "--plan", "40,16", "--out", str(out2), "--quiet"])
    assert out.read_text() == out2.read_text()


def test_overlap_command(config_path, tmp_path):
    out = tmp_path / "ov.json"
    code = main([
        "overlap", "--config", config_path, "--measure", "g21", "--functional",
        "xy", "--t", "0.5", "--plan", "30,12", "--out", str(out), "--quiet",
    ])
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["measure"] == "g21"


def test_check_command_exit_codes(config_path, tmp_path):
    out = tmp_path / "check.json"
    code = main([
        "check", "--config", config_path, "--which", "dp:1", "--t", "0.45",
        "--plan", "200,100", "--out", str(out), "--quiet",
    ])
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload[0]["pass"] is True


def test_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json}")
    assert main(["psi", "--config", str(bad), "--quiet"]) == 2


def test_oracle_command(config_path, tmp_path, l1_config):
    l1_path = tmp_path / "l1.json"
    save_config(l1_config, l1_path)
    out = tmp_path / "oracle.json"
    code = main([
        "oracle", "--config", str(l1_path), "--method", "l1", "--t", "0.4",
        "--out", str(out), "--quiet",
    ])
    assert code == 0
    assert json.loads(out.read_text())["method"] == "closed-form-l1"


def test_ibp_command(tmp_path):
    out = tmp_path / "ibp.json"
    assert main(["ibp", "--n", "20000", "--out", str(out), "--quiet"]) == 0
    report = json.loads(out.read_text())
    assert all(entry["pass"] for entry in report)


def test_suite_config_echo_round_trips():
    """Rerunning from a report's echoed config reproduces values bitwise."""
    from bilift.battery import battery
    from bilift.model import config_from_dict
    from bilift.nested import SamplePlan, estimate_psi

    ent = battery()["B6"]
    echo = ent.config.to_dict()
    rebuilt = config_from_dict(echo)
    plan = SamplePlan((30, 12))
    a = estimate_psi(ent.config, ent.t, plan, seed=5)
    b = estimate_psi(rebuilt, ent.t, plan, seed=5)
    assert a.value == b.value and a.std_error == b.std_error
