import copy
import csv
import json

import pytest

from glevy.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main, run
from glevy.config import JUMP, TWO_MEASURE


def write(tmp_path, cfg, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture
def small_two(tmp_path):
    cfg = copy.deepcopy(TWO_MEASURE)
    cfg["mc"] = {"n_paths": 4096, "mesh_dt": 0.05}
    cfg["cylinder"] = {"times": [0.1, 0.2], "lattice": {"radius": 3.0, "nx": 41},
                       "payoff": {"clip": {"lin": [[1.0, {"var": 0}], [1.0, {"var": 1}]]},
                                  "lo": -1.0, "hi": 1.0}}
    return write(tmp_path, cfg)


def test_validate(small_two):
    code, rep = run(["validate", "--config", small_two, "--no-timing"])
    assert code == EXIT_OK
    assert rep["results"]["c_lower"] == 0.5
    assert "wall_clock_s" not in rep
    assert {c["name"] for c in rep["checks"]} >= {"density_ratio", "ellipticity"}


def test_solve_writes_csv(tmp_path, small_two):
    out = tmp_path / "solve.json"
    code, rep = run(["solve", "--config", small_two, "--out", str(out), "--every", "50"])
    assert code == EXIT_OK
    saved = json.loads(out.read_text())
    assert set(saved["results"]) >= {"u00", "scheme_tol", "cfl"}
    assert saved["wall_clock_s"] >= 0
    with open(tmp_path / "solve.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x", "u", "Du", "D2u"]
    assert float(rows[1][0]) == 0.0


def test_expect(small_two):
    code, rep = run(["expect", "--config", small_two, "--no-timing"])
    assert code == EXIT_OK
    assert rep["results"]["n"] == 2
    assert rep["results"]["interpolation_tol"] >= 0


def test_simulate_dumps_paths(tmp_path, small_two):
    out = tmp_path / "sim.json"
    code, rep = run(["simulate", "--config", small_two, "--out", str(out), "--dump-paths", "2"])
    assert code == EXIT_OK
    assert len(rep["results"]["estimates"]) == 4
    with open(tmp_path / "sim_paths.csv") as fh:
        assert next(csv.reader(fh)) == ["path", "t", "X"]


def test_duality_is_reproducible(tmp_path):
    cfg = copy.deepcopy(JUMP)
    cfg["mc"] = {"n_paths": 4096, "mesh_dt": 0.05}
    path = write(tmp_path, cfg)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["duality", "--config", path, "--out", str(a), "--no-timing"]) == EXIT_OK
    assert main(["duality", "--config", path, "--out", str(b), "--no-timing", "--threads", "3"]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.json"
    main(["duality", "--config", path, "--out", str(c), "--no-timing", "--seed", "1"])
    assert c.read_bytes() != a.read_bytes()


def test_decompose_exports(tmp_path):
    cfg = copy.deepcopy(JUMP)
    cfg["mc"] = {"n_paths": 1024, "mesh_dt": 0.05}
    out = tmp_path / "dec.json"
    code, rep = run(["decompose", "--config", write(tmp_path, cfg), "--out", str(out)])
    assert code == EXIT_OK
    with open(tmp_path / "dec_jumps.csv") as fh:
        assert next(csv.reader(fh)) == ["t", "x", "z", "Kd"]


@pytest.mark.parametrize("what", ["compensator", "apriori", "stability", "embedding"])
def test_verify_targets(small_two, what):
    code, rep = run(["verify", what, "--config", small_two, "--no-timing"])
    assert rep["command"] == f"verify {what}"
    assert code == (EXIT_OK if rep["passed"] else EXIT_CHECK)
    assert code == EXIT_OK


def test_failed_check_exit_code(tmp_path):
    cfg = copy.deepcopy(JUMP)
    cfg["mc"] = {"n_paths": 512, "mesh_dt": 0.05}
    cfg["checks"] = {"residual_rms": -1.0}
    code, rep = run(["decompose", "--config", write(tmp_path, cfg), "--no-timing"])
    assert code == EXIT_CHECK
    assert not rep["passed"]


@pytest.mark.parametrize("argv", [
    ["solve"],
    ["solve", "--config", "/does/not/exist.json"],
    ["solve", "--config", "builtin:nope"],
    ["expect", "--config", "builtin:quadratic"],
])
def test_config_errors(argv):
    assert main(argv) == EXIT_CONFIG


def test_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_CONFIG


def test_numeric_failure(tmp_path):
    cfg = copy.deepcopy(JUMP)
    cfg["grid"]["nt"] = 1
    cfg["grid"].pop("dt_max")
    cfg["model"]["vols"] = [2.0]
    assert main(["solve", "--config", write(tmp_path, cfg)]) == EXIT_NUMERIC


def test_duality_on_builtin_quadratic():
    code, rep = run(["duality", "--config", "builtin:quadratic", "--no-timing"])
    assert code == EXIT_OK
    assert all(p["violation"] <= 0 for p in rep["results"]["policies"])
