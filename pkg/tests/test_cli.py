import csv
import json
import os

import pytest

from popscale.cli import EXIT_CAP, EXIT_PARSE, ParseError, dumps, load_problem, main, parse_builtin_spec, write_atomic


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def report(capsys, *argv):
    code, out, _ = run(capsys, *argv)
    assert code == 0
    return json.loads(out)


def write_json(tmp_path, doc, name="inst.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


TABULAR = {
    "schema_version": 1,
    "kind": "tabular",
    "tabular": {
        "states": ["x0", "x1", "x2", "x3", "x4"],
        "fitness": [5, 4, 3, 2, 1],
        "mutation": [[1, 0, 0, 0, 0], [1, 0, 0, 0, 0], [0, 1, 0, 0, 0],
                     [1, 0, 0, 0, 0], [0, 0, 0.5, 0.5, 0]],
    },
}


def test_parse_builtin_spec():
    assert parse_builtin_spec("paper-table12:eps=0.01") == ("paper-table12", {"eps": 0.01})
    assert parse_builtin_spec("deceptive-knapsack:n=5") == ("deceptive-knapsack", {"n": 5})
    with pytest.raises(ParseError):
        parse_builtin_spec("paper-table12:eps")


def test_analyze_mu1(capsys):
    doc = report(capsys, "analyze", "builtin:paper-table12", "--mu", "1")
    spec = doc["spectral"]["1"]
    assert spec["norm_inf"] == 2.5
    assert spec["x_rho"] == "x1"


def test_analyze_mu2(capsys):
    doc = report(capsys, "analyze", "builtin:paper-table12", "--mu", "2", "--selection", "replicate_best")
    assert doc["spectral"]["2"]["norm_inf"] == pytest.approx(2.75, abs=1e-12)


def test_tabular_file_matches_builtin(tmp_path, capsys):
    path = write_json(tmp_path, TABULAR)
    a = report(capsys, "analyze", path, "--mu", "1")
    b = report(capsys, "analyze", "builtin:paper-table12", "--mu", "1")
    assert a["spectral"] == b["spectral"]


def test_builtin_and_knapsack_documents(tmp_path, capsys):
    path = write_json(tmp_path, {"schema_version": 1, "kind": "builtin",
                                 "builtin": {"name": "onemax-knapsack", "params": {"n": 4}}})
    assert report(capsys, "landscape", path)["bridge"]["landscape"] == "non_bridgeable"
    path = write_json(tmp_path, {"schema_version": 1, "kind": "knapsack",
                                 "knapsack": {"n": 3, "values": [1, 1, 1], "weights": [1, 1, 1], "capacity": 3}})
    doc = report(capsys, "analyze", path, "--mu", "1")
    assert doc["inputs"]["params"]["flip_prob"] == pytest.approx(1 / 3)


def test_global_mix(tmp_path, capsys):
    path = write_json(tmp_path, {**TABULAR, "global_mix": 0.01})
    doc = report(capsys, "analyze", path, "--mu", "1")
    assert doc["inputs"]["params"]["global_mix"] == 0.01
    assert doc["spectral"]["1"]["rho_Q"] > 0


@pytest.mark.parametrize("mutate, needle", [
    (lambda d: d["tabular"]["mutation"].__setitem__(2, [0, 0.5, 0, 0.4, 0]), "row 2"),
    (lambda d: d.__setitem__("schema_version", 2), "schema_version"),
    (lambda d: d.__setitem__("kind", "graph"), "kind"),
    (lambda d: d.__setitem__("knapsack", {}), "exactly"),
    (lambda d: d["tabular"].pop("mutation"), "mutation"),
])
def test_parse_errors(tmp_path, capsys, mutate, needle):
    doc = json.loads(json.dumps(TABULAR))
    mutate(doc)
    code, _, err = run(capsys, "analyze", write_json(tmp_path, doc), "--mu", "1")
    assert code == EXIT_PARSE
    assert needle in err


def test_malformed_json(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"schema_version": 1,\n "kind": }')
    code, _, err = run(capsys, "analyze", str(path))
    assert code == EXIT_PARSE and "line 2" in err


def test_missing_file_and_unknown_builtin(tmp_path, capsys):
    assert run(capsys, "analyze", str(tmp_path / "nope.json"))[0] == EXIT_PARSE
    assert run(capsys, "analyze", "builtin:nothing")[0] == EXIT_PARSE


def test_bad_flag_exits_two(capsys):
    with pytest.raises(SystemExit) as info:
        main(["analyze", "builtin:paper-table12", "--mu", "0"])
    assert info.value.code == 2


def test_cap_exit_code(capsys, monkeypatch):
    monkeypatch.setenv("POPSCALE_STATE_CAP", "10")
    code, _, err = run(capsys, "analyze", "builtin:deceptive-knapsack:n=4", "--mu", "3",
                       "--selection", "elitist_proportional")
    assert code == EXIT_CAP and "10" in err


def test_scale_table12(tmp_path, capsys):
    csv_path = tmp_path / "sweep.csv"
    doc = report(capsys, "scale", "builtin:paper-table12", "--mu-max", "4", "--csv", str(csv_path))
    inf = [row["inf_scal"] for row in doc["scalability"]]
    want = [2.5 / (2 * 0.5 ** mu + 3 * (1 - 0.5 ** mu)) for mu in (2, 3, 4)]
    assert inf == pytest.approx(want, abs=1e-12)
    assert inf[0] > inf[1] > inf[2]
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["mu"]) for r in rows] == [2, 3, 4]
    assert float(rows[0]["inf_scal"]) == inf[0]


def test_scale_deceptive_superlinear(capsys):
    doc = report(capsys, "scale", "builtin:deceptive-knapsack:n=4", "--mu-max", "3",
                 "--selection", "elitist_proportional", "--check-conditions")
    assert doc["superlinear_mu"] == [2, 3]
    assert all(doc["checks"][mu]["holds"] for mu in ("2", "3"))


def test_scale_onemax_no_superlinear(capsys):
    doc = report(capsys, "scale", "builtin:onemax-knapsack:n=4", "--mu-max", "3")
    assert doc["superlinear_mu"] == []


def test_scale_mu_max_too_small(capsys):
    assert run(capsys, "scale", "builtin:paper-table12", "--mu-max", "1")[0] == EXIT_PARSE


def test_landscape_prints_class(capsys):
    code, out, err = run(capsys, "landscape", "builtin:onemax-knapsack:n=4")
    assert code == 0 and err.strip() == "non_bridgeable"
    assert json.loads(out)["bridge"]["landscape"] == "non_bridgeable"


def test_roads(capsys):
    doc = report(capsys, "roads", "builtin:deceptive-knapsack:n=4", "--mu", "2",
                 "--selection", "elitist_proportional")
    assert doc["checks"]["theorem2"]["verdict"] == "superlinear"
    assert doc["checks"]["theorem4"]["verdict"] == "inconclusive"
    doc = report(capsys, "roads", "builtin:deceptive-knapsack:n=4", "--mu", "2")
    assert doc["checks"]["theorem4"]["verdict"] == "no-superlinear-possible"


def test_simulate(capsys):
    doc = report(capsys, "simulate", "builtin:paper-table12", "--mu", "2", "--runs", "20000", "--seed", "7",
                 "--start", "x4")
    sim = doc["simulation"]
    assert abs(sim["mean_hitting"] - 2.75) <= 3 * sim["std_error"]
    assert doc["inputs"]["start"] == ["x4", "x4"]


def test_simulate_default_start_is_lowest(capsys):
    doc = report(capsys, "simulate", "builtin:paper-table12", "--runs", "10")
    assert doc["inputs"]["start"] == ["x4"]


def test_out_file_round_trip(tmp_path, capsys):
    out = tmp_path / "rep.json"
    code, stdout, _ = run(capsys, "analyze", "builtin:deceptive-knapsack:n=4", "--mu", "2",
                          "--selection", "elitist_proportional", "--out", str(out))
    assert code == 0 and stdout == ""
    doc = json.loads(out.read_text())
    assert dumps(doc) == out.read_text()
    assert not [p for p in os.listdir(tmp_path) if p.endswith(".tmp")]


def test_float_round_trip():
    values = [0.1, 1 / 3, 2.96875, 1e-300, 0.9999999999999998]
    assert json.loads(dumps({"v": values}))["v"] == values


def test_write_atomic_replaces(tmp_path):
    target = tmp_path / "f.txt"
    target.write_text("old")
    write_atomic(target, "new")
    assert target.read_text() == "new"
    assert os.listdir(tmp_path) == ["f.txt"]


def test_load_problem_aliases():
    p = load_problem("builtin:paper-table12:epsilon=0.01")
    assert p.kernel.label_probs[4, 0] == pytest.approx(0.01)


def test_verify_quick(capsys):
    code, out, err = run(capsys, "verify", "--quick")
    doc = json.loads(out)
    assert code == 0 and doc["failed"] == 0
    assert any(c["known_discrepancy"] for c in doc["checks"])
    assert "PASS" in err
