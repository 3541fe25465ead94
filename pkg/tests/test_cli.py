import subprocess
import sys

import pytest

from decoupled_feec.cli import EXIT_INVARIANT, EXIT_OK, EXIT_SOLVER, main
from decoupled_feec.harness import CSV_HEADER, read_csv
from decoupled_feec.mesh import SimplicialMesh


def test_solve_writes_csv_and_mesh(tmp_path, capsys):
    out, dump = tmp_path / "r.csv", tmp_path / "mesh.txt"
    code = main(["solve", "--problem", "biharmonic", "--dim", "2", "--levels", "2,4",
                 "--out", str(out), "--mesh-dump", str(dump)])
    assert code == EXIT_OK
    assert out.read_text().splitlines()[0] == ",".join(CSV_HEADER)
    assert [r["n"] for r in read_csv(out)] == [2, 4]
    assert SimplicialMesh.load(dump).num_cells == 2 * 16
    assert "| h |" in capsys.readouterr().out


def test_deep_appends_a_level(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["solve", "--dim", "2", "--levels", "2", "--deep", "--out", str(out)]) == EXIT_OK
    assert [r["n"] for r in read_csv(out)] == [2, 4]


def test_no_eliminate_path(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["solve", "--dim", "2", "--levels", "2,4", "--no-eliminate", "--out", str(out)]) == EXIT_OK


def test_audit_flag(capsys):
    assert main(["solve", "--dim", "2", "--levels", "2", "--audit"]) == EXIT_OK
    assert "audits: all passed" in capsys.readouterr().out


def test_invalid_problem_dimension_is_a_failure(capsys):
    assert main(["solve", "--problem", "quadcurl", "--dim", "2", "--levels", "2"]) == EXIT_SOLVER


def test_multiplier_violation_exit_code(monkeypatch):
    from decoupled_feec import cli
    monkeypatch.setattr(cli, "SolverConfig", lambda **kw: _Strict(**kw))
    assert main(["solve", "--dim", "2", "--levels", "2"]) == EXIT_INVARIANT


class _Strict:
    def __new__(cls, **kw):
        from decoupled_feec.system import SolverConfig
        cfg = SolverConfig(**kw)
        cfg.tol_mult = -1.0
        return cfg


@pytest.mark.parametrize("levels", ["8,4", "0", "a,b", ""])
def test_bad_levels_rejected(levels):
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--levels", levels])
    assert exc.value.code == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "decoupled_feec", "solve", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert "--no-eliminate" in res.stdout
