import json

import pytest

from membrane_pinning.cli import main
from membrane_pinning.config import ConfigError, ExperimentConfig


def run(tmp_path, *args, config=None, env=None, monkeypatch=None):
    argv = list(args) + ["--out", str(tmp_path / "out")]
    if config is not None:
        path = tmp_path / "run.cfg"
        path.write_text(config)
        argv += ["--config", str(path)]
    return main(argv)


def test_config_parsing_and_env_override():
    cfg = ExperimentConfig.loads("# comment\nd = 4\nepsilons = 0.01, 0.001 1e-4\n\nname = x # trailing\n")
    assert cfg.get_int("d") == 4
    assert cfg.get_floats("epsilons") == [0.01, 0.001, 1e-4]
    assert cfg.get_str("name") == "x"
    cfg.apply_env({"MEMBRANE_D": "5", "OTHER": "1"})
    assert cfg.get_int("d") == 5 and not cfg.has("other")


@pytest.mark.parametrize("text", ["d 4\n", "d = 1\nd = 2\n", "a b = 1\n"])
def test_config_rejects_malformed_lines(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.loads(text)


def test_config_typed_errors():
    cfg = ExperimentConfig.loads("side = abc\nepsilon = -1\n")
    with pytest.raises(ConfigError):
        cfg.get_int("side")
    with pytest.raises(ConfigError):
        cfg.get_float("epsilon", positive=True)
    with pytest.raises(ConfigError):
        cfg.get_int("missing")


def test_fkg_report(tmp_path, capsys):
    assert run(tmp_path, "fkg") == 0
    assert "0 violations / 65536 pairs" in capsys.readouterr().out
    summary = json.loads((tmp_path / "out" / "fkg" / "summary.json").read_text())
    assert summary["violations"] == 0 and summary["pairs"] == 65536


def test_tailbound_default_grid(tmp_path):
    assert run(tmp_path, "tailbound") == 0
    lines = (tmp_path / "out" / "tailbound" / "tailbound.csv").read_text().splitlines()
    assert lines[0].startswith("# membrane-pinning ") and "config=" in lines[0]
    assert lines[1] == "N,p,r,lhs,rhs,ok"
    assert all(line.endswith(",1") for line in lines[2:])


def test_variance_sweep_needs_three_epsilons(tmp_path):
    assert run(tmp_path, "variance-sweep", config="epsilons = 0.01\n") == 1


def test_bad_value_is_config_error(tmp_path):
    assert run(tmp_path, "zeta", config="epsilon = -2\n") == 1


def test_numerical_failure_exit_code(tmp_path):
    # 30 sites exceed exact enumeration
    assert run(tmp_path, "zeta", config="side = 30\n") == 2


def test_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("MEMBRANE_EPSILON", "10")
    assert run(tmp_path, "zeta") == 0
    summary = json.loads((tmp_path / "out" / "zeta" / "summary.json").read_text())
    assert summary["epsilon"] == 10.0


def test_outputs_are_byte_identical(tmp_path):
    cfg = "d = 2\nside = 4\nepsilon = 0.5\nsweeps = 60\nburn_in = 20\nthin = 4\nbatches = 10\nk_max = 2\n"
    outputs = []
    for k in range(2):
        sub = tmp_path / str(k)
        sub.mkdir()
        assert run(sub, "covariance-decay", "--seed", "3", config=cfg) == 0
        outputs.append((sub / "out" / "covariance-decay" / "covariance.csv").read_bytes())
    assert outputs[0] == outputs[1]
    other = tmp_path / "other"
    other.mkdir()
    run(other, "covariance-decay", "--seed", "4", config=cfg)
    assert (other / "out" / "covariance-decay" / "covariance.csv").read_bytes() != outputs[0]


@pytest.mark.parametrize("cmd", ["green", "zeta", "domination", "counterexample", "holefiller", "interpolation"])
def test_subcommands_succeed(tmp_path, cmd):
    cfg = "instances = 3\n" if cmd in ("holefiller", "interpolation") else None
    assert run(tmp_path, cmd, config=cfg) == 0
    assert (tmp_path / "out" / cmd / "summary.json").exists()


def test_hardy_rellich_small(tmp_path):
    assert run(tmp_path, "hardy-rellich", config="d = 2\nside = 6\ninstances = 3\nradii = 2 4\n") == 0


def test_acceptance_subset(tmp_path, capsys):
    assert run(tmp_path, "acceptance", config="criteria = 3 9\n") == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 2


D1_CUTOFF = "d = 1\nM = 101\nlambda_mic = 5\nlambda_mac = 1355\nepsilon = 100\nprobes = 200\n"


def test_hierarchy_and_cutoff_d1(tmp_path):
    assert run(tmp_path, "hierarchy", config=D1_CUTOFF) == 0
    assert run(tmp_path, "cutoff", config=D1_CUTOFF) == 0
    summary = json.loads((tmp_path / "out" / "cutoff" / "summary.json").read_text())
    assert summary["ok"] is True
