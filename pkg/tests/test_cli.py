import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from bsdelab.cli import fmt, render_csv, run
from bsdelab.config import dump_config, parse_config
from bsdelab.errors import InvalidInputError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

FIXTURE = {
    "lattice": {"depth": 2},
    "driver": {"kind": "deterministic", "path": [0.0, 0.5, 1.0]},
    "xi": {"kind": "preset", "name": "walk_terminal"},
    "eta": {"kind": "constant", "value": 1.0},
}


def write(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


def invoke(tmp_path, command, data, *extra):
    cfg = write(tmp_path, data)
    out = tmp_path / "out"
    code = run([command, "--config", str(cfg), "--out", str(out), "--quiet", *extra])
    return code, out


def read_csv(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


def test_solve_trivial(tmp_path):
    data = dict(FIXTURE, driver={"kind": "deterministic", "path": [0, 0, 0]})
    code, out = invoke(tmp_path, "solve", data)
    assert code == 0
    rows = read_csv(out / "solve.csv")
    assert rows[0] == {"step": "0", "node_index": "0", "Y": "0.0", "Z": "1.0", "dK": "0.0",
                       "dA": "0.0", "in_right_support": "false"}
    assert rows[-1]["Z"] == "" and rows[-1]["dA"] == ""
    assert len(rows) == 6


def test_solve_infeasible(tmp_path, capsys):
    data = dict(FIXTURE, driver={"kind": "deterministic", "path": [0, 2, 4]},
                generator={"form": "sine", "amplitude": 1.0})
    code, out = invoke(tmp_path, "solve", data)
    assert code == 3 and not out.exists()
    err = capsys.readouterr().err.strip().split("\t")
    assert err[:3] == ["error", "infeasible", "SchemeInfeasibleError"]


def test_solve_negative_increment(tmp_path, capsys):
    data = dict(FIXTURE, driver={"kind": "deterministic", "path": [0, 1, 0.5]})
    code, out = invoke(tmp_path, "solve", data)
    assert code == 2 and not out.exists()
    assert capsys.readouterr().err.count("\n") == 1


def test_reflect_rows(tmp_path):
    data = dict(FIXTURE, zeta={"kind": "preset", "name": "walk_terminal"})
    code, out = invoke(tmp_path, "reflect", data)
    assert code == 0
    rows = read_csv(out / "reflect.csv")
    assert rows[0]["Y"] == "0.5"
    assert [r["dK"] for r in rows[1:3]] == ["1.0", "0.0"]


def test_penalize_fixture(tmp_path):
    code, out = invoke(tmp_path, "penalize", dict(FIXTURE, penalize={"kind": "gbsde_up"}))
    assert code == 0
    rows = read_csv(out / "penalize.csv")
    assert len(rows) == 15 and float(rows[-1]["n"]) == 2.0 ** 14
    assert float(rows[-1]["sup_error"]) < 1e-3
    assert all(r["monotone_ok"] == "true" for r in rows)
    assert all(r["terminal_mode_matched"] == "" for r in rows)


def test_penalize_unpenalized_level(tmp_path):
    code, out = invoke(tmp_path, "penalize", dict(FIXTURE, penalize={"kind": "gbsde_up", "n_values": [0]}))
    assert code == 0
    row = read_csv(out / "penalize.csv")[0]
    # plain expectation of the walk is 0 at the root and +-1 at step 1; the oracle is 1 there
    assert float(row["sup_error"]) == 2.0 and row["root_value"] == "0.0"


def test_penalize_down_hypothesis(tmp_path, capsys):
    data = dict(FIXTURE, zeta={"kind": "constant", "value": 2.0}, penalize={"kind": "reflected_down"})
    code, out = invoke(tmp_path, "penalize", data)
    assert code == 2 and not out.exists()
    assert "(0,0)" in capsys.readouterr().err


def test_penalize_down_records_mode(tmp_path):
    data = dict(FIXTURE, zeta={"kind": "constant", "value": 0.0}, penalize={"kind": "reflected_down"})
    del data["xi"]
    code, out = invoke(tmp_path, "penalize", data)
    assert code == 0
    assert {r["terminal_mode_matched"] for r in read_csv(out / "penalize.csv")} == {"zeta_t"}


def test_oracle_fixture(tmp_path):
    code, out = invoke(tmp_path, "oracle", dict(FIXTURE, oracle={"kind": "constrained_snell"}))
    assert code == 0
    root = read_csv(out / "oracle.csv")[0]
    assert (root["value_backward"], root["value_bruteforce"], root["equal_flag"]) == ("1.0", "1.0", "true")


def test_oracle_without_brute_force(tmp_path):
    data = dict(FIXTURE, oracle={"kind": "constrained_snell", "brute_force": False})
    code, out = invoke(tmp_path, "oracle", data)
    root = read_csv(out / "oracle.csv")[0]
    assert code == 0 and root["value_bruteforce"] == "" and root["equal_flag"] == ""


def test_oracle_dynkin_two_files(tmp_path):
    cfg = CONFIGS / "dynkin_depth3.yaml"
    out = tmp_path / "dk"
    assert run(["oracle", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    for mode in ("zeta_t", "zeta_or_eta_t"):
        rows = read_csv(out / f"oracle_{mode}.csv")
        assert len(rows) == 15
        assert all(r["equal_flag"] == "true" and r["minimax_flag"] == "true" for r in rows)


def test_oracle_guard(tmp_path):
    data = dict(FIXTURE, lattice={"depth": 12},
                driver={"kind": "preset", "name": "ramp_driver"}, oracle={"kind": "constrained_snell"})
    code, out = invoke(tmp_path, "oracle", data)
    assert code == 2 and not out.exists()
    data["oracle"]["brute_force"] = False
    assert invoke(tmp_path, "oracle", data)[0] == 0


def test_verify_default_passes(tmp_path):
    code, out = invoke(tmp_path, "verify", {"lattice": {"depth": 1}, "verify": {"trials": 10}})
    assert code == 0
    rows = read_csv(out / "verify.csv")
    assert [r["name"] for r in rows] == ["comparison", "monotonicity", "stability", "dirac", "identities"]
    assert all(r["failures"] == "0" and r["seed"] == "42" for r in rows)


def test_verify_impossible_tolerance(tmp_path):
    data = {"lattice": {"depth": 1},
            "verify": {"trials": 5, "checks": ["stability"], "tolerances": {"stability_slack": 0.0}}}
    code, out = invoke(tmp_path, "verify", data)
    assert code == 1
    assert int(read_csv(out / "verify.csv")[0]["failures"]) > 0


@pytest.mark.parametrize("verify", [{"trials": 0}, {"beta": 3.0}, {"alpha": -1.0}])
def test_verify_validation(tmp_path, verify):
    code, out = invoke(tmp_path, "verify", {"lattice": {"depth": 1}, "verify": verify})
    assert code == 2 and not out.exists()


def test_seed_flag_overrides(tmp_path):
    data = {"lattice": {"depth": 1}, "verify": {"trials": 3}}
    code, out = invoke(tmp_path, "verify", data, "--seed", "9")
    assert code == 0
    assert {r["seed"] for r in read_csv(out / "verify.csv")} == {"9"}


def test_unknown_key_and_bad_yaml(tmp_path):
    assert invoke(tmp_path, "solve", dict(FIXTURE, extra=1))[0] == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("lattice: [unclosed\n")
    assert run(["solve", "--config", str(bad), "--quiet"]) == 2
    assert run(["solve", "--config", str(tmp_path / "missing.yaml"), "--quiet"]) == 2


def test_missing_process(tmp_path):
    data = {k: v for k, v in FIXTURE.items() if k != "xi"}
    assert invoke(tmp_path, "solve", data)[0] == 2


def test_json_config_accepted(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(FIXTURE))
    assert run(["solve", "--config", str(path), "--out", str(tmp_path / "o"), "--quiet"]) == 0


def test_report_writes_everything(tmp_path):
    out = tmp_path / "rep"
    assert run(["report", "--config", str(CONFIGS / "walk_fixture.yaml"), "--out", str(out), "--quiet"]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["oracle.csv", "penalize.csv", "reflect.csv", "solve.csv", "summary.txt"]
    assert (out / "summary.txt").read_text().endswith("exit code 0\n")


def test_report_needs_work(tmp_path):
    assert invoke(tmp_path, "report", {"lattice": {"depth": 2}})[0] == 2


def test_byte_identical_reruns(tmp_path):
    data = dict(FIXTURE, penalize={"kind": "gbsde_up"}, verify={"trials": 5})
    cfg = write(tmp_path, data)
    outs = []
    for i in range(2):
        out = tmp_path / f"o{i}"
        assert run(["report", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
        outs.append({p.name: p.read_bytes() for p in out.iterdir()})
    assert outs[0] == outs[1]


def test_config_round_trip():
    for path in sorted(CONFIGS.glob("*.yaml")):
        cfg = parse_config(path.read_text())
        text = dump_config(cfg)
        again = parse_config(text)
        assert again == cfg and dump_config(again) == text


def test_parse_rejects_non_mapping():
    with pytest.raises(InvalidInputError):
        parse_config("- 1\n- 2\n")


def test_fmt_round_trips_floats():
    for x in (0.1, 1 / 3, 1e-300, 2.0 ** 14, -0.0, 123456789.123456789):
        assert float(fmt(x)) == x
    assert fmt(True) == "true" and fmt(None) == "" and fmt(3) == "3"
    assert render_csv(("a", "b"), [(1, 0.5)]) == "a,b\n1,0.5\n"


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, FIXTURE)
    proc = subprocess.run([sys.executable, "-m", "bsdelab.cli", "solve", "--config", str(cfg),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("solve: Y_0 = ")
