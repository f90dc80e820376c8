import json
import subprocess
import sys

import pytest

from rekit import cli, harness, ksat


def test_parse_seeds():
    assert cli.parse_seeds("0-3") == [0, 1, 2, 3]
    assert cli.parse_seeds("1,4, 7") == [1, 4, 7]
    assert cli.parse_seeds("0-1,10") == [0, 1, 10]
    for bad in ("", "3-1", "x"):
        with pytest.raises(ValueError):
            cli.parse_seeds(bad)


def test_parse_values():
    assert cli.parse_assignments(["y=3", "gamma0=0.5", "stop_when_solved=false", "gammas=[0.1, 0.2]",
                                  "mode=rbp"]) == dict(y=3, gamma0=0.5, stop_when_solved=False,
                                                      gammas=[0.1, 0.2], mode="rbp")
    with pytest.raises(ValueError):
        cli.parse_assignments(["novalue"])


RSA = ["rsa", "--N", "51", "--alpha", "0.2", "-p", "y=3", "-p", "gamma0=0.1", "-p", "betaf=0.01",
       "-p", "gammaf=0.01"]


def test_exit_codes(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(harness.OUTPUT_ENV, str(tmp_path))
    assert cli.main(RSA + ["--seeds", "0-1"]) == 0
    assert "seed 1: solved" in capsys.readouterr().out
    assert cli.main(RSA + ["--seeds", "0", "-p", "max_iters=1", "--name", "short"]) == 1
    assert cli.main(["rsa", "--N", "50", "--alpha", "0.2"]) == 2
    assert "N/K must be odd" in capsys.readouterr().err
    (tmp_path / "empty").mkdir()
    assert cli.main(["emit", str(tmp_path / "empty"), "--kind", "rsa", "--out", str(tmp_path / "x.csv")]) == 0
    assert (tmp_path / "x.csv").read_text().count("\n") == 1
    assert cli.main(["emit", str(tmp_path / "nope"), "--kind", "rsa", "--out", str(tmp_path / "y.csv")]) == 2
    assert cli.main(["fit", str(tmp_path)]) == 2


def test_config_file_with_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv(harness.OUTPUT_ENV, str(tmp_path / "runs"))
    conf = tmp_path / "e.toml"
    conf.write_text('algorithm = "fbp"\nseeds = [0]\nname = "from-file"\n'
                    "[model]\nN = 101\nalpha = 0.3\n"
                    "[params]\ny = 5\ndamping = 0.5\ngamma_step = 0.25\n")
    assert cli.main(["fbp", "--config", str(conf), "--seeds", "1", "-p", "y=3"]) == 0
    rec = harness.load_record(tmp_path / "runs" / "from-file" / "seed-00001.json")
    assert rec.config["y"] == 3 and rec.config["damping"] == 0.5
    assert cli.main(["rsa", "--config", str(conf)]) == 2


def test_ksat_cnf_prints_solution(tmp_path, capsys):
    inst = ksat.generate_ksat(100, 3.0, 3, 4)
    cnf = tmp_path / "i.cnf"
    cnf.write_text(ksat.serialize_cnf(inst))
    assert cli.main(["ksat", "--cnf", str(cnf), "-p", "sweeps_per_step=300", "--output", str(tmp_path),
                     "--print-solution"]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("v ")]
    lits = [int(x) for l in lines for x in l.split()[1:]]
    assert lits[-1] == 0
    sigma = [1 if v > 0 else -1 for v in sorted(lits[:-1], key=abs)]
    assert ksat.count_violated(inst, sigma) == 0


def test_grid_emit_and_fit_commands(tmp_path, capsys):
    conf = tmp_path / "g.toml"
    conf.write_text('algorithm = "rsa"\nseeds = [0, 1, 2]\nname = "g"\n'
                    "[model]\nN = 51\nalpha = 0.2\n"
                    "[params]\ny = 3\ngamma0 = 0.1\nbetaf = 0.01\ngammaf = 0.01\n"
                    "[grid]\nmax_iters = [1, 10000000]\n")
    assert cli.main(["grid", "--config", str(conf), "--output", str(tmp_path)]) == 0
    assert 'best: {"max_iters": 10000000}' in capsys.readouterr().out
    for N in (51, 101, 151):
        assert cli.main(RSA[:2] + [str(N)] + RSA[3:] + ["--seeds", "0-2", "--output", str(tmp_path),
                                                        "--name", f"fit/N{N}"]) == 0
    capsys.readouterr()
    assert cli.main(["fit", str(tmp_path / "fit")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["form"] == "power" and out["n_points"] == 9
    csv = tmp_path / "c.csv"
    assert cli.main(["emit", str(tmp_path / "fit"), "--kind", "rsa", "--out", str(csv)]) == 0
    assert len(csv.read_text().splitlines()) == 10


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "rekit.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("rsa", "rsgd", "fbp", "ksat", "fit", "emit", "grid"):
        assert cmd in out.stdout
    bad = subprocess.run([sys.executable, "-m", "rekit.cli", "bogus"], capture_output=True, text=True)
    assert bad.returncode == 2
