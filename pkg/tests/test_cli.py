import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from curvdim.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, EXIT_RESOURCE, main, run_config, sweep_config
from curvdim.scenarios import ConfigError, builtin_configs

GOLDEN = Path(__file__).with_name("golden")

SMALL = """\
[[scenario]]
name = "first"
space = { kind = "euclidean", dim = 1 }
box = [[-0.5, 3.5]]
h = 0.1
sets = { A = [[0, 1]], B = [[2, 3]] }

[[scenario.checks]]
condition = "SBM"
K = 0
N = 1
sets = ["A", "B"]

[[scenario]]
name = "second"
space = { kind = "euclidean", dim = 2 }
box = [[-0.5, 3.5], [-0.5, 1.5]]
h = 0.1
sets = { A = [[0, 1], [0, 1]], B = [[2, 3], [0, 1]] }

[[scenario.checks]]
condition = "BM"
K = 0
N = 2
sets = ["A", "B"]

[[scenario]]
name = "third"
space = { kind = "euclidean", dim = 1 }
box = [[-0.5, 3.5]]
h = 0.05
sets = { A = [[0, 1]], B = [[2, 3]] }

[[scenario.checks]]
condition = "CD"
K = 0
N = 1
sets = ["A", "B"]
"""


@pytest.fixture
def small(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text(SMALL)
    return p


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def same_number(a, b):
    if a == b:
        return True
    x, y = float(a), float(b)
    return math.isclose(x, y, rel_tol=1e-9, abs_tol=1e-12)


class TestExitCodes:
    def test_pass(self, small, tmp_path):
        assert main(["run", str(small), "--out", str(tmp_path / "o")]) == EXIT_PASS

    def test_fail(self, tmp_path):
        assert main(["run", "falsify_positive_k", "--out", str(tmp_path / "o")]) == EXIT_FAIL

    def test_config_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text(SMALL.replace('condition = "CD"', 'condition = "CD"\nwhat = 1'))
        assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
        assert "bad.toml:36" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["run", str(tmp_path / "none.toml")]) == EXIT_CONFIG

    def test_resource_cap(self, tmp_path, capsys):
        capped = tmp_path / "capped.toml"
        capped.write_text(SMALL.replace('name = "first"', 'name = "first"\nmax_cells = 10'))
        assert main(["run", str(capped), "--out", str(tmp_path / "o")]) == EXIT_RESOURCE
        assert "resource" in capsys.readouterr().err

    def test_console_script(self, small, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "curvdim.cli", "run", str(small), "--out", str(tmp_path / "o")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "first: PASS" in proc.stdout


class TestOutputs:
    def test_files(self, small, tmp_path):
        out = tmp_path / "o"
        run_config(small, out=out)
        rows = read_rows(out / "results.csv")
        assert rows[0] == ["scenario", "condition", "K", "N", "t", "Nprime", "lhs", "rhs", "margin", "pass", "label", "tol"]
        assert {r[0] for r in rows[1:]} == {"first", "second", "third"}
        report = json.loads((out / "report.json").read_text())
        assert report["verdict"] is True
        assert [s["name"] for s in report["scenarios"]] == ["first", "second", "third"]
        raster = (out / "rasters" / "second" / "A.txt").read_text().splitlines()
        assert len(raster) == 100 and len(raster[0].split()) == 3

    def test_jobs_preserve_order_and_bytes(self, small, tmp_path):
        run_config(small, jobs=1, out=tmp_path / "a")
        run_config(small, jobs=2, out=tmp_path / "b")
        for name in ("results.csv", "report.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_runs_are_byte_identical(self, tmp_path):
        for k in range(2):
            run_config("euclidean_translates", out=tmp_path / str(k))
        for name in ("results.csv", "report.json", "rasters/plane-translate/A.txt"):
            assert (tmp_path / "0" / name).read_bytes() == (tmp_path / "1" / name).read_bytes()

    def test_h_override(self, small, tmp_path):
        _, results = run_config(small, h_override=0.05)
        assert all(r.grid["h"] == 0.05 for r in results)


@pytest.mark.parametrize("name", sorted(builtin_configs()))
def test_matches_golden_csv(name, tmp_path):
    """Frozen results of the bundled configs; numbers compared to 1e-9 relative."""
    code, _ = run_config(name, out=tmp_path)
    got, want = read_rows(tmp_path / "results.csv"), read_rows(GOLDEN / f"{name}.csv")
    assert code == (EXIT_FAIL if name == "falsify_positive_k" else EXIT_PASS)
    assert len(got) == len(want)
    assert got[0] == want[0]
    for g, w in zip(got[1:], want[1:]):
        assert g[:2] == w[:2] and g[9:11] == w[9:11], (g, w)
        for i in (2, 3, 4, 5, 6, 7, 8, 11):
            assert same_number(g[i], w[i]), (i, g, w)


class TestSweep:
    def test_positive_curvature_threshold(self):
        value, log = sweep_config("falsify_positive_k", "K", -1.0, 1.0, 21)
        assert value == pytest.approx(0.0, abs=1e-12)
        passed = sorted(v for v, ok in log.items() if ok)
        failed = sorted(v for v, ok in log.items() if not ok)
        assert passed[-1] == pytest.approx(0.0, abs=1e-12) and failed[0] == pytest.approx(0.1)
        # bisection touches far fewer than all 21 grid values
        assert len(log) <= 7

    def test_all_fail(self):
        value, log = sweep_config("falsify_positive_k", "K", 1.0, 2.0, 3)
        assert value is None and list(log) == [1.0]

    def test_bad_parameter(self):
        with pytest.raises(ConfigError):
            sweep_config("falsify_positive_k", "t", 0, 1, 3)

    def test_cli(self, capsys):
        assert main(["sweep", "falsify_positive_k", "--from", "-1", "--to", "1", "--steps", "5"]) == EXIT_PASS
        assert "largest passing K: 0" in capsys.readouterr().out


def test_figure1_command(tmp_path, capsys):
    out = tmp_path / "fig"
    # at h = 0.05 every split image lands on whole cells
    assert main(["figure1", "--h", "0.05", "--out", str(out)]) == EXIT_PASS
    data = json.loads((out / "figure1.json").read_text())
    assert data["m_midpoint_half"] == pytest.approx(3.0) and data["m_support_half"] == pytest.approx(2.0)
    for name in ("A", "B", "M_half", "D_half"):
        assert (out / f"{name}.txt").exists()
    assert (out / "mu_half_density.txt").exists()
    assert "m(M_1/2) = 3" in capsys.readouterr().out
