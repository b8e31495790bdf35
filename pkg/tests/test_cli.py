import csv
import gzip
import io
import json
from pathlib import Path

import pytest

from edgesched.cli import main, parse_p_grid, parse_slice

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
PAIR = str(CONFIGS / "scalar_pair.yaml")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def solved_pair(tmp_path_factory):
    path = tmp_path_factory.mktemp("art") / "pair.json"
    assert main(["solve", PAIR, "-o", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def solved_14(tmp_path_factory):
    path = tmp_path_factory.mktemp("art") / "p14.json.gz"
    assert main(["solve", str(CONFIGS / "procs_14.yaml"), "-o", str(path)]) == 0
    return path


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_solve_prints_theta(capsys, tmp_path):
    code, out, _ = run(capsys, "solve", PAIR, "-o", tmp_path / "a.json")
    assert code == 0
    theta = float(out.split()[1])
    assert theta == pytest.approx(7.86567995, abs=1e-6)
    assert "iterations" in out and "states" in out
    data = json.loads((tmp_path / "a.json").read_text())
    assert data["schema"] == "edgesched-solved/1"


def test_idle_slice_of_14_is_uniform(capsys, solved_14):
    code, out, _ = run(capsys, "policy-map", solved_14)
    rows = _rows(out)
    assert code == 0 and rows
    assert {(r["a1"], r["a2"]) for r in rows} == {("1", "2")}


def test_slice_filters(capsys, solved_pair):
    _, all_idle, _ = run(capsys, "policy-map", solved_pair)
    _, diag, _ = run(capsys, "policy-map", solved_pair, "--slice", "sum=8")
    assert 0 < len(_rows(diag)) < len(_rows(all_idle))
    assert all(int(r["tau_1"]) + int(r["tau_2"]) == 8 for r in _rows(diag))
    _, pinned, _ = run(capsys, "policy-map", solved_pair, "--slice", "remote=any,edge=1:1")
    assert _rows(pinned)


def test_empty_slice_is_header_only(capsys, solved_pair):
    code, out, _ = run(capsys, "policy-map", solved_pair, "--slice", "sum=1000")
    assert code == 0
    assert len(out.strip().splitlines()) == 1


def test_unknown_slice_field(capsys, solved_pair):
    code, _, err = run(capsys, "policy-map", solved_pair, "--slice", "colour=red")
    assert code == 2 and "unknown slice field" in err


def test_check_passes_on_solved(capsys, solved_14):
    code, out, _ = run(capsys, "check", solved_14)
    assert code == 0 and "monotonicity: PASS" in out and "threshold_shift: PASS" in out


def test_check_planted_defect(capsys, solved_pair, tmp_path):
    data = json.loads(Path(solved_pair).read_text())
    # the state two steps up in tau_1 from the origin of pipeline 0
    from edgesched.configio import config_from_dict
    from edgesched.sched import SchedModel
    model = SchedModel(config_from_dict(data["config"]))
    s = model.state_of(0)
    i = model.index_of(s._replace(aoi=(s.aoi[0] + 2, s.aoi[1])))
    j = model.index_of(s._replace(aoi=(s.aoi[0] + 1, s.aoi[1])))
    data["value"][i] = data["value"][j] - 5.0
    bad = tmp_path / "bad.json.gz"
    with gzip.open(bad, "wt") as fh:
        json.dump(data, fh)
    code, out, _ = run(capsys, "check", bad, "--checks", "monotonicity", "--json")
    report = json.loads(out)
    assert code == 1 and report["violations"] >= 1 and report["witnesses"]


def test_check_model_mismatch(capsys, solved_pair):
    code, _, err = run(capsys, "check", solved_pair, "--checks", "consistency")
    assert code == 2 and "preempt" in err


def test_bad_artifact(capsys, tmp_path):
    path = tmp_path / "x.json"
    path.write_text("{}")
    assert run(capsys, "check", path)[0] == 2
    assert run(capsys, "check", tmp_path / "missing.json")[0] == 2


def test_malformed_matrix_exit_2(capsys, tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("processes:\n  - dynamics: [[1.02, 1], [0]]\n")
    code, _, err = run(capsys, "solve", cfg, "-o", tmp_path / "o.json")
    assert code == 2 and "bad.yaml:2" in err


def test_budget_exit_3(capsys, tmp_path):
    code, _, err = run(capsys, "solve", CONFIGS / "procs_12.yaml", "-o", tmp_path / "o.json",
                       "--max-states", "1000")
    assert code == 3 and "149240 states" in err


def test_solver_limit_exit_4(capsys, tmp_path):
    code, _, _ = run(capsys, "solve", PAIR, "-o", tmp_path / "o.json", "--max-sweeps", "3")
    assert code == 4


def test_preempt_solve_and_map(capsys, tmp_path):
    art = tmp_path / "pre.json"
    code, out, _ = run(capsys, "solve", CONFIGS / "procs_12.yaml", "--model", "preempt",
                       "--tau-cap", "12", "-o", art)
    assert code == 0
    code, out, _ = run(capsys, "policy-map", art, "--slice", "running=1:2,arrivals=01")
    rows = _rows(out)
    assert code == 0 and rows and {r["arrivals"] for r in rows} == {"0 1"}
    assert run(capsys, "check", art, "--checks", "threshold")[0] == 2


def test_sweep_determinism_and_rows(capsys, tmp_path):
    args = ["sweep", PAIR, "--policies", "greedy,static", "--p", "0.9",
            "--horizon", "2000", "--replications", "2", "--seed", "3"]
    code, out1, err = run(capsys, *args)
    assert code == 0 and "p=0.9:" in err
    _, out2, _ = run(capsys, *args)
    assert out1 == out2
    assert len(_rows(out1)) == 2


def test_sweep_single_policy_single_p(capsys, tmp_path):
    out = tmp_path / "s.csv"
    code, stdout, _ = run(capsys, "sweep", PAIR, "--policies", "subopt", "--p", "1.0",
                          "--horizon", "1000", "--replications", "1", "-o", out)
    assert code == 0 and "p=1:" in stdout
    assert len(_rows(out.read_text())) == 1


def test_sweep_rejects_bad_inputs(capsys):
    assert run(capsys, "sweep", PAIR, "--p", "0", "--horizon", "100")[0] == 2
    assert run(capsys, "sweep", PAIR, "--policies", "coinflip")[0] == 2
    assert run(capsys, "sweep", PAIR, "--policies", "greedy,preempt")[0] == 2


def test_parsers():
    assert parse_p_grid("0.8:0.05:1.0") == [0.8, 0.85, 0.9, 0.95, 1.0]
    assert parse_p_grid("0.8,1") == [0.8, 1.0]
    assert parse_slice("remote=1:4, edge=idle") == {"remote": "1:4", "edge": "idle"}
    with pytest.raises(ValueError):
        parse_p_grid("a:b:c")
    with pytest.raises(ValueError):
        parse_slice("remote")
