import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from cutplane.cli import EXIT_ERROR, EXIT_OK, EXIT_TARGET, main
from cutplane.config import ConfigError, integer, number, parse_config
from cutplane.vaidya import TraceRow

INSTANCES = {
    "feasibility": {"schema_version": "1", "kind": "feasibility", "R": 1, "eps": "0.001",
                    "oracle": {"type": "ball", "center": ["0.3", "-0.2", "0.1"], "radius": "0.05"}},
    "convex": {"schema_version": "1", "kind": "convex", "alpha": 0.01,
               "objective": {"type": "quadratic", "center": [0.5, -0.25, 0.1]},
               "domain": {"type": "box", "half_width": 1}},
    "saddle": {"schema_version": "1", "kind": "saddle", "eps": 0.05,
               "game": {"type": "bilinear", "C": [[1, 0.5], [-0.5, 1]], "d": [0.2, -0.1], "e": [0.3, 0.1]}},
    "market-ad": {"schema_version": "1", "kind": "market_ad", "u": [["0", "1"], ["1", "0"]], "eps_eq": "0.001"},
    "market-fisher": {"schema_version": "1", "kind": "market_fisher", "budgets": [1, 0.5], "n_goods": 1,
                      "segments": [{"buyer": 0, "good": 0, "rate": 1, "cap": 2},
                                   {"buyer": 1, "good": 0, "rate": 3, "cap": 2}]},
}

# Each of these misses its target: starved budgets or an unreachable tolerance.
FAILING = {
    "feasibility": (INSTANCES["feasibility"] | {"oracle": {"type": "empty", "n": 2}, "eps": 0.1}, None),
    "convex": (INSTANCES["convex"], {"schema_version": "1", "vaidya": {"C_iter": 0.05}}),
    "saddle": (INSTANCES["saddle"], {"schema_version": "1", "vaidya": {"C_iter": 0.05}}),
    "market-ad": ({"schema_version": "1", "kind": "market_ad", "u": [[4, 3, 5], [3, 3, 5], [4, 3, 3]]},
                  {"schema_version": "1", "eps_eq": 1e-300}),
    "market-fisher": ({"schema_version": "1", "kind": "market_fisher", "budgets": [1, 1], "n_goods": 2,
                       "segments": [{"buyer": 0, "good": 0, "rate": 3, "cap": 0.6}, {"buyer": 0, "good": 1, "rate": 1, "cap": 2},
                                    {"buyer": 1, "good": 0, "rate": 1, "cap": 2}, {"buyer": 1, "good": 1, "rate": 2, "cap": 0.7}]},
                      {"schema_version": "1", "eps_eq": 1e-300, "vaidya": {"C_iter": 0.02}}),
}


def write(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def run(tmp_path, command, instance, config=None, seed=7, out="out", extra=()):
    args = [command, "--seed", str(seed), "--out", str(tmp_path / out), *extra]
    if instance is not None:
        args += ["--instance", write(tmp_path / f"{out}-inst.json", instance)]
    if config is not None:
        args += ["--config", write(tmp_path / f"{out}-cfg.json", config)]
    return main(args)


def result(tmp_path, out="out"):
    return json.loads((tmp_path / out / "result.json").read_text())


def trace(tmp_path, out="out"):
    with open(tmp_path / out / "trace.csv", newline="") as fh:
        return list(csv.reader(fh))


class TestParsing:
    def test_decimal_strings(self):
        assert number("0.1") == 0.1 and number(3) == 3.0
        assert integer("12") == 12 and integer(4.0) == 4

    @pytest.mark.parametrize("bad", ["1.5", "x", 2.5, True, None])
    def test_integer_errors(self, bad):
        with pytest.raises(ConfigError):
            integer(bad)

    def test_number_errors(self):
        for bad in ("abc", True, [1]):
            with pytest.raises(ConfigError):
                number(bad)

    def test_config_defaults(self):
        cfg = parse_config(None)
        assert cfg.saddle_eps == 0.05 and cfg.timing and cfg.eps_eq is None

    def test_config_values(self):
        cfg = parse_config({"schema_version": "1", "vaidya": {"C_iter": "20", "max_newton": 50, "exact_leverage": 1},
                            "layers": {"T_inn": 4, "eps_inn": "0.01"}, "timing": False})
        p = cfg.params(4, seed=3)
        assert p.C_iter == 20.0 and p.max_newton == 50 and p.exact_leverage
        assert p.layers.T_inn == 4 and p.layers.eps_inn == 0.01 and p.layers.seed == 3
        assert not cfg.timing

    @pytest.mark.parametrize("doc", [
        {"bogus": 1},
        {"vaidya": {"c9": 1}},
        {"vaidya": {"c1": 2}},
        {"vaidya": {"damping": 0}},
        {"vaidya": {"max_newton": -1}},
        {"layers": {"T_mid": 0}},
        {"layers": {"nope": 1}},
        {"saddle_eps": 0.9},
        {"eps_eq": 0},
    ])
    def test_config_errors(self, doc):
        with pytest.raises(ConfigError):
            parse_config(doc)


class TestCommands:
    @pytest.mark.parametrize("command", sorted(INSTANCES))
    def test_happy_path(self, tmp_path, command):
        assert run(tmp_path, command, INSTANCES[command]) == EXIT_OK
        res = result(tmp_path)
        assert res["command"] == command and res["seed"] == 7 and res["schema_version"] == "1"
        assert res["status"] in ("ok", "found_point")
        rows = trace(tmp_path)
        assert tuple(rows[0]) == TraceRow.FIELDS
        assert [int(r[0]) for r in rows[1:]] == list(range(1, len(rows)))

    @pytest.mark.parametrize("command", sorted(FAILING))
    def test_target_missed(self, tmp_path, command):
        inst, cfg = FAILING[command]
        assert run(tmp_path, command, inst, cfg) == EXIT_TARGET
        assert result(tmp_path)["status"] in ("no_ball", "target_missed")

    @pytest.mark.parametrize("command", sorted(INSTANCES))
    def test_parse_error(self, tmp_path, command, capsys):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert main([command, "--seed", "1", "--out", str(tmp_path / "o"), "--instance", str(path)]) == EXIT_ERROR
        assert "error" in capsys.readouterr().err

    @pytest.mark.parametrize("command", sorted(INSTANCES))
    def test_wrong_kind(self, tmp_path, command):
        other = "convex" if command != "convex" else "saddle"
        assert run(tmp_path, command, INSTANCES[other]) == EXIT_ERROR

    def test_schema_version(self, tmp_path):
        doc = INSTANCES["convex"] | {"schema_version": "2"}
        assert run(tmp_path, "convex", doc) == EXIT_ERROR

    def test_starved_saddle_reports_error(self, tmp_path, capsys):
        # No feasible query point means no certificate: an error, not a missed target.
        inst = FAILING["market-ad"][0]
        assert run(tmp_path, "market-ad", inst, {"schema_version": "1", "vaidya": {"C_iter": 0.02}}) == EXIT_ERROR
        assert "CertificateError" in capsys.readouterr().err

    def test_market_assumption_error(self, tmp_path, capsys):
        doc = {"schema_version": "1", "kind": "market_ad", "u": [[0, 1], [0, 1]]}
        assert run(tmp_path, "market-ad", doc) == EXIT_ERROR
        assert "valued by nobody" in capsys.readouterr().err

    def test_fractional_utility(self, tmp_path):
        doc = {"schema_version": "1", "kind": "market_ad", "u": [["0", "1.5"], ["1", "0"]]}
        assert run(tmp_path, "market-ad", doc) == EXIT_ERROR

    def test_seed_range(self, tmp_path):
        assert run(tmp_path, "convex", INSTANCES["convex"], seed=-1) == EXIT_ERROR
        assert run(tmp_path, "convex", INSTANCES["convex"], seed=2**64) == EXIT_ERROR
        assert run(tmp_path, "feasibility", INSTANCES["feasibility"], seed=2**64 - 1) == EXIT_OK

    def test_missing_seed(self, tmp_path):
        inst = write(tmp_path / "i.json", INSTANCES["convex"])
        assert main(["convex", "--instance", inst, "--out", str(tmp_path / "o")]) == EXIT_ERROR

    def test_feasibility_trace_matches_result(self, tmp_path):
        assert run(tmp_path, "feasibility", INSTANCES["feasibility"]) == EXIT_OK
        res, rows = result(tmp_path), trace(tmp_path)
        assert len(rows) - 1 == res["iterations"]
        assert int(rows[-1][1]) == res["oracle_calls"]
        c = np.array(INSTANCES["feasibility"]["oracle"]["center"], dtype=float)
        assert np.linalg.norm(np.array(res["x"]) - c) <= 0.05

    def test_no_timing_zeroes_wall_time(self, tmp_path):
        run(tmp_path, "feasibility", INSTANCES["feasibility"], extra=["--no-timing"])
        col = TraceRow.FIELDS.index("wall_time")
        assert {r[col] for r in trace(tmp_path)[1:]} == {"0.0"}


class TestBench:
    def test_header_only(self, tmp_path):
        assert run(tmp_path, "bench-leverage", {"K": 0}) == EXIT_OK
        text = (tmp_path / "out" / "bench.csv").read_text()
        assert text == "step,drift_simple,drift_layered,time_exact,time_simple,time_layered\n"
        assert result(tmp_path)["rows"] == 0

    def test_reproducible(self, tmp_path):
        for out in ("a", "b"):
            assert run(tmp_path, "bench-leverage", {"K": 20}, out=out, extra=["--no-timing"]) == EXIT_OK
        for name in ("bench.csv", "result.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_changes_stream(self, tmp_path):
        run(tmp_path, "bench-leverage", {"K": 5}, seed=1, out="a", extra=["--no-timing"])
        run(tmp_path, "bench-leverage", {"K": 5}, seed=2, out="b", extra=["--no-timing"])
        assert (tmp_path / "a" / "bench.csv").read_bytes() != (tmp_path / "b" / "bench.csv").read_bytes()

    def test_layered_not_worse_than_simple(self, tmp_path):
        assert run(tmp_path, "bench-leverage", None, extra=["--no-timing"]) == EXIT_OK
        with open(tmp_path / "out" / "bench.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 100
        simple = np.array([float(r["drift_simple"]) for r in rows])
        layered = np.array([float(r["drift_layered"]) for r in rows])
        assert np.all(layered <= simple + 1e-12)

    @pytest.mark.parametrize("doc", [{"K": -1}, {"step": 0.5}, {"n": 8, "m": 4}, {"n": "x"}])
    def test_bad_stream(self, tmp_path, doc):
        assert run(tmp_path, "bench-leverage", doc) == EXIT_ERROR


@pytest.mark.parametrize("command", ["market-fisher", "saddle"])
def test_byte_identical_runs(tmp_path, command):
    for out in ("a", "b"):
        run(tmp_path, command, INSTANCES[command], out=out, extra=["--no-timing"])
    for name in ("trace.csv", "result.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_console_script(tmp_path):
    out = subprocess.run([sys.executable, "-m", "cutplane.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for command in ("feasibility", "convex", "saddle", "market-ad", "market-fisher", "bench-leverage"):
        assert command in out.stdout
