import csv
import json

import pytest

from vpflux import cli, mms
from vpflux.linsolve import ConvergenceError


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_single_case(tmp_path, capsys):
    code = cli.main(["run", "--case", "1d-same-flux", "--n", "256", "--indicator", "sharp",
                     "--out", str(tmp_path)])
    assert code == 0
    r = rows(tmp_path / "1d-same-flux_run.csv")
    assert len(r) == 1 and r[0]["N"] == "256" and r[0]["indicator"] == "sharp"
    assert list(r[0]) == cli.CSV_COLUMNS
    assert float(r[0]["E1"]) <= float(r[0]["Einf"])
    data = json.loads((tmp_path / "1d-same-flux_run.json").read_text())
    assert data[0]["reports"][0]["N"] == 256
    assert "1d-same-flux,sharp,256" in capsys.readouterr().out


def test_run_emits_fields(tmp_path):
    assert cli.main(["run", "--case", "2d-annulus", "--n", "64", "--indicator", "smoothed",
                     "--emit-fields", "--out", str(tmp_path)]) == 0
    f = rows(tmp_path / "2d-annulus_smoothed_N64_fields.csv")
    assert len(f) == 64 * 64
    assert list(f[0]) == ["x", "y", "q", "q_exact", "chi"]
    # row-major with x fastest
    assert float(f[1]["x"]) > float(f[0]["x"]) and f[1]["y"] == f[0]["y"]


def test_unknown_case_exit_code(tmp_path, capsys):
    assert cli.main(["run", "--case", "nope", "--out", str(tmp_path)]) == 2
    assert "unknown case" in capsys.readouterr().err
    assert cli.main(["converge", "--case", "nope", "--out", str(tmp_path)]) == 2
    assert cli.main(["validate", "--case", "nope"]) == 2


def test_bad_arguments_exit_code(tmp_path):
    assert cli.main(["run", "--case", "hexagram", "--eta", "-1", "--out", str(tmp_path)]) == 2
    assert cli.main(["converge", "--case", "hexagram", "--n", "32",
                     "--out", str(tmp_path)]) == 2
    assert cli.main(["run", "--out", str(tmp_path)]) == 2


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise ConvergenceError("no luck", 1.0)
    monkeypatch.setattr(mms, "run_case", boom)
    assert cli.main(["run", "--case", "hexagram", "--n", "32", "--out", str(tmp_path)]) == 3


def test_converge_aligned_both_indicators(tmp_path, capsys):
    assert cli.main(["converge", "--case", "1d-same-flux", "--family", "aligned",
                     "--indicators", "both", "--out", str(tmp_path)]) == 0
    r = rows(tmp_path / "1d-same-flux_convergence.csv")
    assert len(r) == 12
    assert {x["indicator"] for x in r} == {"sharp", "smoothed"}
    assert r[0]["order_E1"] == "" and abs(float(r[-1]["order_E1"]) - 2.0) < 0.1
    for name in ("1d-same-flux_sharp.dat", "1d-same-flux_smoothed.dat",
                 "1d-same-flux_convergence.png", "1d-same-flux_convergence.json"):
        assert (tmp_path / name).stat().st_size > 0
    assert "order E1" in capsys.readouterr().out


def test_converge_non_aligned_first_order(tmp_path):
    assert cli.main(["converge", "--case", "1d-diff-flux", "--family", "non-aligned",
                     "--out", str(tmp_path)]) == 0
    r = rows(tmp_path / "1d-diff-flux_convergence.csv")
    orders = [float(x["order_Einf"]) for x in r[1:]]
    assert all(0.8 <= o <= 1.3 for o in orders)


def test_converge_transport_grids(tmp_path):
    assert cli.main(["converge", "--case", "transport", "--grids", "32,64", "--jobs", "2",
                     "--out", str(tmp_path)]) == 0
    r = rows(tmp_path / "transport_convergence.csv")
    assert [x["N"] for x in r] == ["32", "64"] and int(r[0]["solver_iters"]) > 1000


def test_validate(capsys):
    assert cli.main(["validate"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") >= len(mms.CASES) * 2 and "FAIL" not in out
    assert cli.main(["validate", "--case", "hexagram", "--corrupt-beta", "0.1"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("VP_OUT_DIR", str(tmp_path / "env"))
    assert cli.main(["run", "--case", "1d-same-flux", "--n", "64"]) == 0
    assert (tmp_path / "env" / "1d-same-flux_run.csv").exists()


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('case = "1d-diff-flux"\nn = 64\nindicator = "sharp"\n'
                   f'out = "{tmp_path / "cfg"}"\n')
    assert cli.main(["run", "--config", str(cfg), "--n", "128"]) == 0
    r = rows(tmp_path / "cfg" / "1d-diff-flux_run.csv")
    assert r[0]["N"] == "128" and r[0]["indicator"] == "sharp"


def test_csv_is_deterministic(tmp_path):
    args = ["converge", "--case", "hexagram", "--grids", "32,64", "--indicator", "both"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b"), "--jobs", "2"]) == 0
    a = (tmp_path / "a" / "hexagram_convergence.csv").read_bytes()
    b = (tmp_path / "b" / "hexagram_convergence.csv").read_bytes()
    assert a == b


def test_timing_column_opt_in(tmp_path):
    assert cli.main(["run", "--case", "1d-same-flux", "--n", "64", "--timing",
                     "--out", str(tmp_path)]) == 0
    assert float(rows(tmp_path / "1d-same-flux_run.csv")[0]["wall_ms"]) > 0


def test_module_entry_point():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-m", "vpflux", "--help"], capture_output=True,
                         text=True)
    assert out.returncode == 0 and "converge" in out.stdout
