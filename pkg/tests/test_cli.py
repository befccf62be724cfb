import csv
import json

import pytest

from kummer_gluing import cli


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# ")
    return list(csv.DictReader(lines[1:]))


@pytest.fixture(autouse=True)
def no_env(monkeypatch):
    monkeypatch.delenv(cli.OUT_ENV, raising=False)


def test_eh_check_passes(tmp_path):
    assert cli.main(["eh-check", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "eh_identity.csv")
    assert len(rows) == 1000 and all(r["ok"] == "true" for r in rows)
    tail = read_csv(tmp_path / "eh_tail.csv")
    assert float(tail[0]["fitted"]) == pytest.approx(-0.5, abs=1e-8)
    ann = read_csv(tmp_path / "eh_annulus.csv")
    assert [float(r["R"]) for r in ann] == [16, 32, 64, 128]


def test_eh_check_detects_fault(tmp_path, capsys):
    assert cli.main(["eh-check", "--out", str(tmp_path), "--set", "eh_check.fault_scale=1.001"]) == 1
    assert "failing rows" in capsys.readouterr().err


def test_empty_R_list_is_config_error(tmp_path, capsys):
    assert cli.main(["eh-check", "--out", str(tmp_path), "--set", "eh_check.R=[]"]) == 3
    assert "configuration error" in capsys.readouterr().err


def test_bad_override_syntax(tmp_path):
    assert cli.main(["eh-check", "--out", str(tmp_path), "--set", "nonsense"]) == 3


def test_output_dir_precedence(tmp_path, monkeypatch):
    env_dir, flag_dir = tmp_path / "env", tmp_path / "flag"
    monkeypatch.setenv(cli.OUT_ENV, str(env_dir))
    assert cli.resolve_config("spectrum").output_dir == env_dir
    assert cli.resolve_config("spectrum", flags={"out": str(flag_dir)}).output_dir == flag_dir
    monkeypatch.delenv(cli.OUT_ENV)
    assert str(cli.resolve_config("spectrum").output_dir) == "kummer-out"


def test_config_file_and_flags(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('seed = 7\n[sweep]\nR = [16, 32]\nworkers = 2\n')
    c = cli.resolve_config("sweep", str(cfg), ["sweep.dx=0.1"], {"T": [4.0]})
    assert c.seed == 7 and c.section["R"] == [16, 32] and c.section["T"] == [4.0]
    assert c.section["dx"] == 0.1 and c.section["workers"] == 2
    assert cli.resolve_config("sweep", str(cfg), flags={"seed": 3}).seed == 3
    assert cli.resolve_config("solve", flags={"R": [32.0]}).section["R"] == 32.0


@pytest.mark.parametrize("kind", ["circle", "sphere3", "sphere3-mod-involution"])
def test_spectrum(tmp_path, kind):
    code = cli.main(["spectrum", "--out", str(tmp_path), "--set", f'spectrum.kind="{kind}"',
                     "--set", "spectrum.max_degree=4", "--set", "spectrum.radius=2.0"])
    assert code == 0
    rows = read_csv(tmp_path / "spectrum.csv")
    assert float(rows[0]["eigenvalue"]) == 0.0
    assert max(float(r["abs_error"]) for r in rows) <= 1e-8


def test_solve_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["solve", "--out", str(a)]) == 0
    assert cli.main(["solve", "--out", str(b)]) == 0
    for name in ("solve_report.json", "solve_iterations.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rep = json.loads((a / "solve_report.json").read_text())
    assert rep["converged"] and rep["R"] == 64.0


def test_solve_below_threshold(tmp_path, capsys):
    assert cli.main(["solve", "--out", str(tmp_path), "--R", "8"]) == 2
    rep = json.loads((tmp_path / "solve_report.json").read_text())
    assert rep["error"] == "RTooSmallError" and not rep["converged"]
    assert "RTooSmallError" in capsys.readouterr().err


def test_solve_rejects_unknown_key(tmp_path):
    assert cli.main(["solve", "--out", str(tmp_path), "--set", "solve.omega=1"]) == 3


def test_small_sweep(tmp_path):
    assert cli.main(["sweep", "--out", str(tmp_path), "--R", "16", "32", "--T", "4", "8"]) == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert list(rows[0]) == ["kind", "R", "T", "sup_eta", "eta_l2k", "lambda_minus_1",
                             "defect_norm", "P_norm", "error"]
    assert [r["kind"] for r in rows] == ["R", "R", "T", "T", "slope", "slope_ci_low", "slope_ci_high"]
    summary = json.loads((tmp_path / "sweep_summary.json").read_text())
    assert summary["schema"] == "kummer-gluing/sweep-summary/1" and summary["failures"] == []
    assert -4.4 <= summary["fits"]["lambda_minus_1"]["slope"] <= -3.6


def test_sweep_records_failures(tmp_path):
    assert cli.main(["sweep", "--out", str(tmp_path), "--R", "8", "16", "32", "--T", "4"]) == 1
    rows = read_csv(tmp_path / "sweep.csv")
    assert rows[0]["error"] == "RTooSmallError"
