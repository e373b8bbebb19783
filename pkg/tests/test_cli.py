import csv
import io
import json

import pytest

from darnet.cli import main, read_config


def _run(tmp_path, name, *args):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def _table(path):
    text = path.read_text()
    body = "".join(l + "\n" for l in text.splitlines() if not l.startswith("#"))
    return list(csv.DictReader(io.StringIO(body)))


def _strip_created(text):
    return "\n".join(l for l in text.splitlines() if "created" not in l)


def test_thresholds_table(tmp_path):
    code, out = _run(tmp_path, "t.csv", "thresholds", "--rho-max", "4")
    assert code == 0
    rows = _table(out)
    assert [int(r["rho"]) for r in rows] == [1, 2, 3, 4]
    ac = [float(r["alpha_c"]) for r in rows]
    assert ac[0] == pytest.approx(0.937129, abs=1e-6)
    assert ac[1] == pytest.approx(0.8662, abs=5e-4)
    assert all(a > b for a, b in zip(ac, ac[1:]))
    text = out.read_text()
    assert "\r" not in text and text.splitlines()[0].startswith("# config: ")


def test_rho_max_limit(tmp_path):
    code, _ = _run(tmp_path, "t.csv", "thresholds", "--rho-max", "11")
    assert code == 2


def test_invalid_parameters_exit_2(tmp_path):
    assert _run(tmp_path, "a.csv", "fixed-points", "--alpha", "-1")[0] == 2
    assert _run(tmp_path, "b.csv", "simulate", "--n", "1", "--horizon", "5", "--burn-in", "0")[0] == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2


def test_event_cap_exit_3(tmp_path):
    code, _ = _run(tmp_path, "s.csv", "simulate", "--K", "10", "--n", "20", "--horizon", "50",
                   "--burn-in", "0", "--replicas", "1", "--event-cap", "100")
    assert code == 3


def test_config_reproduces_output(tmp_path):
    code, first = _run(tmp_path, "a.csv", "simulate", "--alpha", "0.9", "--K", "8", "--n", "20",
                       "--horizon", "20", "--burn-in", "2", "--replicas", "1", "--seed", "5")
    assert code == 0
    code, second = _run(tmp_path, "b.csv", "simulate", "--config", str(first))
    assert code == 0
    assert _strip_created(first.read_text()) == _strip_created(second.read_text())
    cfg = read_config(str(first))
    assert cfg["schema"] == 1 and cfg["seed"] == 5 and cfg["alpha"] == 0.9


def test_flags_override_config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"schema": 1, "alpha": 0.7, "K": 10}))
    code, out = _run(tmp_path, "f.csv", "fixed-points", "--config", str(path), "--K", "12")
    assert code == 0
    cfg = read_config(str(out))
    assert cfg["alpha"] == 0.7 and cfg["K"] == 12
    path.write_text(json.dumps({"schema": 2}))
    assert main(["fixed-points", "--config", str(path)]) == 2


def test_json_format_and_replay(tmp_path):
    args = ["coalesce", "--n-grid", "10,20", "--replicas", "3", "--format", "json"]
    code, first = _run(tmp_path, "c.json", *args)
    assert code == 0
    doc = json.loads(first.read_text())
    assert doc["schema"] == 1 and doc["config"]["command"] == "coalesce"
    assert [r["n"] for r in doc["result"]["rows"]] == [10, 20]
    code, second = _run(tmp_path, "d.json", "coalesce", "--config", str(first))
    again = json.loads(second.read_text())
    assert again["result"] == doc["result"] and again["config"] == doc["config"]


def test_gamma_json_keys(tmp_path):
    code, out = _run(tmp_path, "g.json", "gamma", "--regime", "high", "--alpha", "1.3", "--K", "20",
                     "--n", "60", "--replicas", "8", "--burn-in", "5", "--format", "json")
    assert code == 0
    res = json.loads(out.read_text())["result"]
    assert set(res) >= {"gamma0_hat", "ci_low", "ci_high", "W", "tau_q50", "tau_q95", "replicas"}
    assert res["W"] == 1 and res["replicas"] == 8


def test_hysteresis_and_hitting_small(tmp_path):
    code, out = _run(tmp_path, "h.csv", "hysteresis", "--alpha-grid", "0.5,1.3", "--K", "10",
                     "--n", "30", "--horizon", "30", "--burn-in", "5", "--replicas", "2")
    assert code == 0
    rows = _table(out)
    assert [(r["alpha"], r["start"]) for r in rows] == [("0.5", "empty"), ("0.5", "full"),
                                                        ("1.3", "empty"), ("1.3", "full")]
    code, out = _run(tmp_path, "k.csv", "hitting", "--alpha", "0.5", "--K", "10", "--n", "30",
                     "--replicas", "3", "--cap", "20")
    assert code == 0 and len(_table(out)) >= 1


def test_trunk_scan_small(tmp_path):
    code, out = _run(tmp_path, "ts.csv", "trunk-scan", "--alpha", "0.96", "--K", "12", "--n", "30",
                     "--sigma-grid", "0,3", "--horizon", "20", "--burn-in", "5", "--replicas", "2")
    assert code == 0
    rows = _table(out)
    assert [int(r["sigma"]) for r in rows] == [0, 3]
    assert {r["analytic"] for r in rows} <= {"bistable", "monostable"}
