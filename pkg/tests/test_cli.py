from __future__ import annotations

import csv
import json

import pytest

from fbm_schemes.cli import main
from fbm_schemes.grid_fbm import read_path_binary, read_path_csv

SMALL = """
sigma = sin-offset(offset=2)
b = logistic
scheme = {scheme}
h = {h}
m_levels = 3..5
m_ref = 9
n_paths = 6
batch_size = 4
seed = 3
"""


def _cfg(tmp_path, scheme="milstein:2", h=0.35, extra=""):
    f = tmp_path / "run.cfg"
    f.write_text(SMALL.format(scheme=scheme, h=h) + extra + f"output_dir = {tmp_path / 'out'}\n")
    return f


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(line for line in fh if not line.startswith("#")))


def test_classify(capsys):
    assert main(["classify", "--scheme", "milstein:2", "--h", "0.2,0.3"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0].startswith("scheme,H")
    assert out[1].split(",")[5] == "divergent"
    assert out[2].split(",")[5] == "almost_sure_drift_integral"


def test_classify_bad_h(capsys):
    assert main(["classify", "--scheme", "cn", "--h", "1.2"]) == 2


def test_constants(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["constants", "--h", "0.5", "--l", "2,3,4", "--output", str(out), "--reproducible"]) == 0
    rows = _rows(out)
    assert rows[0] == ["name", "H", "value", "truncation_terms", "bound", "kappa_l"]
    by_name = {r[0]: r for r in rows[1:]}
    assert float(by_name["C_(2)"][2]) == pytest.approx(2**0.5, abs=1e-12)
    assert float(by_name["C_(3)"][5]) == 3.0 and float(by_name["C_(4)"][5]) == 3.0
    assert "C_10*" in by_name


def test_constants_stdout(capsys):
    assert main(["constants", "--h", "0.3", "--l", "2"]) == 0
    assert "C_(2),0.3,1.50013" in capsys.readouterr().out


def test_error_table_outputs_and_determinism(tmp_path):
    cfg = _cfg(tmp_path)
    assert main(["error-table", str(cfg), "--reproducible"]) == 0
    out = tmp_path / "out"
    first = {p.name: p.read_bytes() for p in out.iterdir() if p.suffix in (".csv", ".json")}
    assert {"error_table.csv", "error_summary.csv", "error_table.json"} <= set(first)
    assert (out / "error_rates.png").stat().st_size > 0
    text = first["error_table.csv"].decode()
    assert text.startswith("# regime: condition=")
    rows = _rows(out / "error_table.csv")
    assert rows[0][:5] == ["m", "path", "error_T", "max_abs_error", "normalized_error"]
    assert len(rows) == 1 + 3 * 6
    meta = json.loads(first["error_table.json"])
    assert "slope" in meta and "generated" not in meta
    # rerun with a different worker layout: byte-identical tables
    assert main(["error-table", str(cfg), "--reproducible", "--workers", "2"]) == 0
    second = {p.name: p.read_bytes() for p in out.iterdir() if p.suffix in (".csv", ".json")}
    assert first == second


def test_timestamp_without_reproducible(tmp_path):
    assert main(["error-table", str(_cfg(tmp_path)), "--no-figures"]) == 0
    assert (tmp_path / "out" / "error_table.csv").read_text().startswith("# generated ")


def test_verify_limit_as(tmp_path):
    assert main(["verify-limit", str(_cfg(tmp_path)), "--reproducible"]) == 0
    out = tmp_path / "out"
    assert (out / "limit_ratios.png").exists()
    rows = _rows(out / "limit_summary.csv")
    assert rows[0][0] == "m" and len(rows) == 4
    assert "passed" in json.loads((out / "limit_check.json").read_text())


def test_verify_limit_mixed_normal(tmp_path):
    assert main(["verify-limit", str(_cfg(tmp_path, "cn", 0.3)), "--reproducible"]) == 0
    out = tmp_path / "out"
    assert (out / "limit_standardized.png").exists()
    assert _rows(out / "limit_summary.csv")[0][3] == "ks_stat"


def test_verify_limit_undetermined_exits_2(tmp_path, capsys):
    assert main(["verify-limit", str(_cfg(tmp_path, "cn", 0.2))]) == 2
    assert "open" in capsys.readouterr().err


def test_config_error_exits_2(tmp_path, capsys):
    f = tmp_path / "bad.cfg"
    f.write_text("sigma = zero\ncolour = red\n")
    assert main(["error-table", str(f)]) == 2
    assert "colour" in capsys.readouterr().err


def test_numerical_failure_exits_3(tmp_path, capsys):
    cfg = _cfg(tmp_path, "cn", 0.3, extra="cn_max_iter = 1\ncn_tol = 1e-16\n")
    assert main(["error-table", str(cfg), "--no-figures"]) == 3
    assert "numerical failure" in capsys.readouterr().err


@pytest.mark.parametrize("fmt", ["csv", "binary"])
def test_sample_fbm(tmp_path, fmt):
    cfg = _cfg(tmp_path, extra=f"path_format = {fmt}\n")
    assert main(["sample-fbm", str(cfg), "--reproducible"]) == 0
    out = tmp_path / "out"
    files = sorted(out.glob("fbm_*.csv" if fmt == "csv" else "fbm_*.bin"))
    assert len(files) == 6
    p = read_path_csv(files[2]) if fmt == "csv" else read_path_binary(files[2])
    assert p.grid.m == 9 and p.seeds[0].stream_index == 2


def test_solve(tmp_path):
    assert main(["solve", str(_cfg(tmp_path)), "--reproducible"]) == 0
    rows = _rows(tmp_path / "out" / "solve_00000.csv")
    assert rows[0] == ["t", "B", "Y_hat", "Y_ref", "J"]
    assert len(rows) == 1 + 2**5 + 1


def test_help_lists_config_keys(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    for key in ("sigma", "m_levels", "cn_tol", "se_factor"):
        assert key in out
