import subprocess
import sys

import pytest

from hmfstrata import cli
from hmfstrata.errors import NumericGuardError


def test_report_empty_exit_3(tmp_path, capsys):
    assert cli.main(["report", "--out", str(tmp_path)]) == 3
    assert "producer: densities" in capsys.readouterr().err


def test_unknown_key_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[grid]\nnodez = 3\n")
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "grid.nodez" in capsys.readouterr().err


def test_parse_error_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[grid]\nnodes = \n")
    assert cli.main(["analyze", "--config", str(cfg)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_bad_stage_list_exit_2(tmp_path):
    assert cli.main(["all", "--stages", "simulate,bogus", "--out", str(tmp_path)]) == 2


def test_numeric_guard_exit_4(tmp_path, monkeypatch):
    def boom(self):
        raise NumericGuardError("tripped")
    monkeypatch.setattr(cli.Pipeline, "stage_densities", boom)
    assert cli.main(["analyze", "--out", str(tmp_path)]) == 4


def test_seed_argument(tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["simulate", "--seed", "-3", "--out", str(tmp_path)])
    args = cli.build_parser().parse_args(["simulate", "--seed", "0x10", "-v"])
    assert args.seed == 16 and args.verbose == 1


def test_analyze_analytic_ok(tmp_path, capsys):
    cfg = tmp_path / "hh.toml"
    cfg.write_text("[grid]\nnodes = 16\n[densities]\nradii = [0.1]\nrichardson_nodes = 32\n")
    assert cli.main(["analyze", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    root = capsys.readouterr().out.strip()
    assert (tmp_path / root.split("/")[-1] / "densities.csv").exists()


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "hmfstrata", "report", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 3
