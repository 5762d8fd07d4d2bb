import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from modnash import bundled_game, bundled_games, solve
from modnash.cli import ProblemFile, ProblemFileError, load_problem, main, parse_problem_file

QUAD2 = bundled_game("quad2")


def problem_text(**overrides):
    doc = json.loads(open(QUAD2).read())
    doc.update(overrides)
    return json.dumps(doc)


def test_minimal_file_parses():
    problem, config = parse_problem_file(
        '{"version": 1, "players": [{"dim": 1, "phi": {"name": "quadratic", "weight": 1, "center": [0]}}],'
        ' "coupling": {"kind": "none"}}'
    )
    assert problem.num_players == 1 and problem.num_couplings == 0
    sol = solve(problem, config)
    assert sol.status == "converged" and abs(sol.x[0]) <= 1e-8


def test_quad2_file_solves_to_closed_form():
    problem, config = load_problem(QUAD2)
    sol = solve(problem, config)
    assert np.linalg.norm(sol.x - 2.0 / 3.0) <= 1e-6


def test_every_bundled_file_parses(bundled):
    name, problem, config = bundled
    assert problem.name == name


def test_syntax_error_has_position():
    with pytest.raises(ProblemFileError) as info:
        parse_problem_file('{\n  "version": 1,\n  "players": [\n}')
    assert info.value.code == "PARSE_SYNTAX"
    assert info.value.line == 4 and info.value.column == 1


def test_unknown_registry_name():
    text = problem_text(players=[{"dim": 1, "phi": {"name": "huber"}}, {"dim": 1}])
    with pytest.raises(ProblemFileError) as info:
        parse_problem_file(text)
    assert info.value.code == "UNKNOWN_REGISTRY_NAME"
    with pytest.raises(ProblemFileError) as info:
        parse_problem_file(problem_text(coupling={"kind": "cubic"}))
    assert info.value.code == "UNKNOWN_REGISTRY_NAME"


def test_monotonicity_failure_reports_witness():
    coupling = {"kind": "quadratic", "kappas": [[1.0], [1.0]], "weights": [[[0.0, 5.0]], [[0.5, 0.0]]]}
    with pytest.raises(ProblemFileError) as info:
        parse_problem_file(problem_text(coupling=coupling))
    assert info.value.code == "MODEL_MONOTONICITY"
    x, y = info.value.witness
    assert len(x) == len(y) == 2


@pytest.mark.parametrize(
    "overrides,code",
    [
        (dict(players=[]), "PARSE_SCHEMA"),
        (dict(version=7), "PARSE_SCHEMA"),
        (dict(colour="red"), "PARSE_SCHEMA"),
        (dict(solver={"speed": 3}), "PARSE_SCHEMA"),
        (dict(coupling={"kind": "quadratic", "kappas": [[1.0], [1.0]]}), "PARSE_SCHEMA"),
        (dict(players=[{"dim": 1}, {"dim": 2}]), "MODEL_DIMENSION"),
        (dict(solver={"relaxation": 2.5}), "CONFIG_INVALID"),
        (dict(players=[{"dim": 1, "phi": {"name": "box", "lo": [1], "hi": [0]}}, {"dim": 1}]), "MODEL_INVALID"),
    ],
)
def test_error_codes(overrides, code):
    with pytest.raises(ProblemFileError) as info:
        parse_problem_file(problem_text(**overrides))
    assert info.value.code == code


def test_round_trip_is_identity():
    for name in bundled_games():
        text = open(bundled_game(name)).read()
        first = ProblemFile.loads(text)
        second = ProblemFile.loads(first.dumps())
        assert first == second
        assert second.dumps() == first.dumps()


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_solve_command_writes_trace_and_solution(tmp_path, capsys):
    trace, solution = tmp_path / "t.csv", tmp_path / "s.json"
    code, out, _ = run(["solve", QUAD2, "--tol", "1e-8", "--trace", str(trace), "--solution", str(solution)], capsys)
    assert code == 0 and "status: converged" in out
    rows = list(csv.reader(open(trace)))
    assert rows[0] == ["n", "pi", "alpha", "residual", "wall_time_ns"]
    ns = [int(r[0]) for r in rows[1:]]
    assert ns == list(range(len(ns)))
    doc = json.load(open(solution))
    assert doc["status"] == "converged" and doc["residual"] <= 1e-8
    assert np.allclose(doc["x"], 2.0 / 3.0, atol=1e-6) and doc["v_star"] == []
    assert doc["gap"] <= 1e-6
    assert doc["config"]["stop_tolerance"] == 1e-8 and doc["config"]["schedule"] == "full"


def test_solve_exit_codes(tmp_path, capsys):
    assert run(["solve", QUAD2, "--max-iter", "1"], capsys)[0] == 2
    code, _, err = run(["solve", str(tmp_path / "missing.game")], capsys)
    assert code == 1 and "missing.game" in err
    bad = tmp_path / "bad.game"
    bad.write_text("{")
    assert run(["solve", str(bad)], capsys)[0] == 1
    assert run(["solve", QUAD2, "--schedule", "spiral:2"], capsys)[0] == 1


def test_diverged_exit_code(tmp_path, capsys):
    # a huge start makes the squared norms overflow
    path = tmp_path / "huge.game"
    doc = json.loads(open(QUAD2).read())
    doc["solver"] = {"x0": [1e300, -1e300]}
    path.write_text(json.dumps(doc))
    assert run(["solve", str(path)], capsys)[0] == 3


def test_trace_is_byte_identical_and_seed_env_overrides(tmp_path, capsys, monkeypatch):
    args = ["solve", QUAD2, "--seed", "42", "--schedule", "rand:2", "--delay", "rand:5", "--trace"]
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    run(args + [str(a)], capsys)
    run(args + [str(b)], capsys)
    assert a.read_bytes() == b.read_bytes()
    monkeypatch.setenv("NASH_SEED", "7")
    run(args + [str(c)], capsys)
    assert c.read_bytes() != a.read_bytes()
    run(["solve", QUAD2, "--seed", "7", "--schedule", "rand:2", "--delay", "rand:5", "--trace", str(b)], capsys)
    assert c.read_bytes() == b.read_bytes()


def test_record_time_fills_wall_clock(tmp_path, capsys):
    t = tmp_path / "t.csv"
    run(["solve", QUAD2, "--trace", str(t), "--record-time"], capsys)
    rows = list(csv.reader(open(t)))[1:]
    assert all(int(r[4]) > 0 for r in rows)


def test_check_command(tmp_path, capsys):
    solution = tmp_path / "s.json"
    run(["solve", QUAD2, "--solution", str(solution)], capsys)
    code, out, _ = run(["check", QUAD2, str(solution)], capsys)
    assert code == 0 and "certificate: pass" in out

    solution.write_text(json.dumps({"x": [0.0, 0.0], "v_star": []}))
    code, out, _ = run(["check", QUAD2, str(solution)], capsys)
    assert code == 4
    gap = float(next(line for line in out.splitlines() if line.startswith("nash_gap")).split()[1])
    assert gap > 0.1

    solution.write_text(json.dumps({"x": [0.0, 0.0, 0.0]}))
    assert run(["check", QUAD2, str(solution)], capsys)[0] == 1
    solution.write_text("not json")
    assert run(["check", QUAD2, str(solution)], capsys)[0] == 1


def test_check_trivial_instance_accepts_any_point(tmp_path, capsys):
    game = tmp_path / "trivial.game"
    game.write_text(json.dumps({"version": 1, "players": [{"dim": 2}], "coupling": {"kind": "none"}}))
    solution = tmp_path / "s.json"
    solution.write_text(json.dumps({"x": [3.5, -1.25]}))
    assert run(["check", str(game), str(solution)], capsys)[0] == 0


def test_bundled_solutions_pass_check(tmp_path, capsys):
    for name in bundled_games():
        solution = tmp_path / f"{name}.json"
        assert run(["solve", bundled_game(name), "--solution", str(solution)], capsys)[0] == 0, name
        assert run(["check", bundled_game(name), str(solution)], capsys)[0] == 0, name


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "modnash", "solve", QUAD2], capture_output=True, text=True)
    assert proc.returncode == 0 and "status: converged" in proc.stdout


def test_missing_path_falls_back_to_bundled_game(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    problem, _ = load_problem("examples/quad2.game")
    assert problem.num_players == 2
    with pytest.raises(FileNotFoundError):
        load_problem("examples/nonexistent.game")
