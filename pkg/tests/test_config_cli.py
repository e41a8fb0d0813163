import json
import os

import pytest

from kpplab import cli, experiments
from kpplab.config import dump_config, load_config, parse_config
from kpplab.errors import BudgetExhausted, ConfigError, NumericalInstability

MINIMAL = """experiment = "vlin"

[vlin]
delta = 0.25
t_end = 5.0
"""


def test_minimal_config_fills_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.experiment == "vlin"
    assert cfg["vlin"]["delta"] == 0.25
    assert cfg["vlin"]["variant"] == "sup"
    assert cfg.threads == 1


def test_misspelled_key_reports_line():
    with pytest.raises(ConfigError) as exc:
        parse_config(MINIMAL.replace("delta", "detla"))
    assert exc.value.line == 4
    assert "detla" in str(exc.value) and str(exc.value).startswith("line 4:")


@pytest.mark.parametrize("text,line", [
    ('experiment = "vlin"\n[vlin]\ndelta = "big"\n', 3),
    ('experiment = "vlin"\n[vlin]\ndelta = 0.75\n', 3),
    ('experiment = "vlin"\n\n[bogus]\nx = 1\n', 3),
    ('experiment = "nope"\n', 1),
    ('experiment = "vlin"\n[vlin\n', 2),
])
def test_errors_carry_lines(text, line):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.line == line


def test_experiment_mismatch():
    with pytest.raises(ConfigError):
        parse_config(MINIMAL, "solve")


def test_round_trip(configs_dir):
    for name in sorted(os.listdir(configs_dir)):
        cfg = load_config(os.path.join(configs_dir, name))
        back = parse_config(dump_config(cfg))
        assert back.experiment == cfg.experiment
        assert back.sections == cfg.sections


def _write(tmp_path, text=MINIMAL):
    path = tmp_path / "c.toml"
    path.write_text(text)
    return str(path)


def test_exit_code_config_error(tmp_path, capsys):
    code = cli.main(["vlin", "--config", _write(tmp_path, MINIMAL.replace("delta", "detla")),
                     "--out", str(tmp_path / "o")])
    assert code == 2
    assert "line 4" in capsys.readouterr().err


def test_exit_code_missing_file(tmp_path):
    assert cli.main(["vlin", "--config", str(tmp_path / "absent.toml")]) == 2


def test_exit_code_numerical(tmp_path, monkeypatch):
    def boom(cfg):
        raise NumericalInstability("non-finite values")

    monkeypatch.setitem(experiments.DRIVERS, "vlin", boom)
    assert cli.main(["vlin", "--config", _write(tmp_path), "--out", str(tmp_path / "o")]) == 3


def test_exit_code_budget_writes_artifacts(tmp_path, monkeypatch):
    def partial(cfg):
        out = experiments.Outcome()
        out.artifacts["partial.csv"] = "t,x\n0,1\n"
        out.budget_exhausted = True
        return out

    monkeypatch.setitem(experiments.DRIVERS, "vlin", partial)
    out = tmp_path / "o"
    assert cli.main(["vlin", "--config", _write(tmp_path), "--out", str(out)]) == 4
    assert (out / "partial.csv").read_text() == "t,x\n0,1\n"
    man = json.loads((out / "manifest.json").read_text())
    assert man["budget_exhausted"] is True


def test_output_directory_from_environment(tmp_path, monkeypatch):
    def tiny(cfg):
        out = experiments.Outcome()
        out.artifacts["a.csv"] = "x\n1\n"
        return out

    monkeypatch.setitem(experiments.DRIVERS, "vlin", tiny)
    monkeypatch.setenv("KPPLAB_OUT", str(tmp_path / "env_out"))
    assert cli.main(["vlin", "--config", _write(tmp_path)]) == 0
    assert (tmp_path / "env_out" / "a.csv").exists()
    # --out wins over the environment
    assert cli.main(["vlin", "--config", _write(tmp_path), "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "a.csv").exists()


def test_bad_threads_and_seeds(tmp_path):
    assert cli.main(["vlin", "--config", _write(tmp_path), "--threads", "0"]) == 2
    with pytest.raises(SystemExit):
        cli.main(["vlin", "--config", _write(tmp_path), "--seeds", "a,b"])


def test_budget_error_type():
    assert issubclass(BudgetExhausted, RuntimeError)
