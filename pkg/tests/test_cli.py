import json
import pathlib
from importlib import resources

import jsonschema
import pytest

from vbcert.cli import main

DEMOS = pathlib.Path(__file__).resolve().parents[1] / "demos"
MDP2 = str(DEMOS / "two_state_mdp.json")
POL = str(DEMOS / "two_state_policy.json")
STAY = str(DEMOS / "two_state_policy_stay.json")
SCALAR = str(DEMOS / "scalar_features.json")
VI6 = str(DEMOS / "vi_6x3_mdp.json")


@pytest.fixture(scope="module")
def schema():
    return json.loads(resources.files("vbcert").joinpath("schemas/report.schema.json").read_text())


def run(tmp_path, *args, name="out.json"):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, (json.loads(out.read_text()) if code == 0 else None)


def write(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(path)


class TestVc:
    def test_demo(self, tmp_path, schema):
        code, rep = run(tmp_path, "analyze-vc", "--mdp", MDP2, "--policy", POL, "--k", "100")
        assert code == 0 and rep["satisfied"]
        assert all(c["margin"] >= -1e-10 for c in rep["condition_reports"])
        assert [t["kind"] for t in rep["lyapunov_traces"]] == ["V1", "V2", "V3"]
        assert all(t["rate_ok"] for t in rep["lyapunov_traces"])
        assert rep["vc"]["exactness_residual"] <= 1e-12
        jsonschema.validate(rep, schema)

    def test_reducible_policy(self, tmp_path, schema):
        code, rep = run(tmp_path, "analyze-vc", "--mdp", MDP2, "--policy", STAY)
        assert code == 0
        assert rep["certificate"]["nu"] is None and rep["certificate"]["g_diag"] is None
        kinds = {t["kind"]: t for t in rep["lyapunov_traces"]}
        assert kinds["V1"]["rate_ok"]
        assert "KindUnavailable" in kinds["V2"]["unavailable"] and "KindUnavailable" in kinds["V3"]["unavailable"]
        assert len(rep["condition_reports"]) == 1
        jsonschema.validate(rep, schema)

    def test_initial_value(self, tmp_path):
        j0 = write(tmp_path, "j0.json", {"j0": [3.0, -1.0]})
        code, rep = run(tmp_path, "analyze-vc", "--mdp", MDP2, "--policy", POL, "--j0", j0, "--k", "5")
        assert code == 0 and rep["lyapunov_traces"][0]["values"][0] == pytest.approx(5.5)  # J_pi = (5.5, 4.5)

    def test_malformed_json(self, tmp_path, capsys):
        bad = write(tmp_path, "bad.json", "{not json")
        assert main(["analyze-vc", "--mdp", bad, "--policy", POL, "--out", str(tmp_path / "o.json")]) == 2
        assert "error:" in capsys.readouterr().err
        assert not (tmp_path / "o.json").exists()

    def test_invalid_kernel_reports_every_row(self, tmp_path, capsys):
        mdp = json.loads(pathlib.Path(MDP2).read_text())
        mdp["transitions"][0][0] = [0.7, 0.7]
        mdp["transitions"][1][1] = [-0.1, 1.1]
        assert main(["validate", "--mdp", write(tmp_path, "m.json", mdp)]) == 2
        err = capsys.readouterr().err
        assert "InvalidKernel" in err and "state 1, action 1" in err and "state 2, action 2" in err

    def test_missing_file(self, tmp_path):
        assert main(["analyze-vc", "--mdp", str(tmp_path / "nope.json"), "--policy", POL,
                     "--out", str(tmp_path / "o.json")]) == 2


class TestVi:
    def test_demo(self, tmp_path, schema):
        code, rep = run(tmp_path, "analyze-vi", "--mdp", VI6, "--tol", "1e-8")
        assert code == 0 and rep["satisfied"]
        assert rep["sandwich"]["holds"] and rep["rate_envelope"]["holds"]
        assert rep["lyapunov_traces"][0]["rate_ok"]
        assert rep["vi"]["final_change"] <= 1e-8
        jsonschema.validate(rep, schema)

    def test_zero_reward(self, tmp_path):
        mdp = json.loads(pathlib.Path(VI6).read_text())
        mdp["rewards"] = [[0.0] * 3 for _ in range(6)]
        code, rep = run(tmp_path, "analyze-vi", "--mdp", write(tmp_path, "z.json", mdp), "--k", "20")
        assert code == 0 and rep["j_star"] == [0.0] * 6
        assert all(v == 0.0 for v in rep["lyapunov_traces"][0]["values"])

    def test_single_state(self, tmp_path):
        mdp = {"num_states": 1, "num_actions": 2, "gamma": 0.5, "transitions": [[[1.0], [1.0]]], "rewards": [[1.0, 2.0]]}
        code, rep = run(tmp_path, "analyze-vi", "--mdp", write(tmp_path, "one.json", mdp), "--k", "1")
        assert code == 0 and rep["j_star"] == [4.0] and rep["pi_star"] == [2]
        assert rep["lyapunov_traces"][0]["values"] == [4.0, 2.0]


class TestTd:
    def test_auto(self, tmp_path, schema):
        code, rep = run(tmp_path, "analyze-td", "--mdp", MDP2, "--policy", POL, "--features", SCALAR)
        sec = rep["mjls_section"]
        assert code == 0 and sec["alpha_max"] == pytest.approx(20.0, rel=1e-12)
        assert sec["alpha"] == pytest.approx(19.8) and sec["alpha_source"] == "auto"
        assert sec["feasible"] and sec["oracle_rho"] < 1 and sec["mss"]
        assert sec["g_bounds"] == ["unbounded"] * 4
        jsonschema.validate(rep, schema)

    def test_alpha_outside(self, tmp_path, schema):
        code, rep = run(tmp_path, "analyze-td", "--mdp", MDP2, "--policy", POL, "--features", SCALAR, "--alpha", "25")
        sec = rep["mjls_section"]
        assert code == 0 and not rep["satisfied"] and not sec["feasible"]
        assert sec["oracle_rho"] == pytest.approx(2.25, abs=1e-8) and sec["mss"] is False
        jsonschema.validate(rep, schema)

    def test_monte_carlo(self, tmp_path, schema):
        code, rep = run(tmp_path, "analyze-td", "--mdp", MDP2, "--policy", POL, "--features", SCALAR,
                        "--alpha", "10", "--runs", "8", "--k", "40", "--seed", "3")
        sec = rep["mjls_section"]
        assert len(sec["mse_curve"]) == 41 and sec["runs"] == 8 and sec["seed"] == 3
        assert sec["mse_curve"][0] == 0.0 and sec["mse_curve"][-1] == pytest.approx(25.0)
        jsonschema.validate(rep, schema)

    def test_rank_deficient(self, tmp_path, capsys):
        bad = str(DEMOS / "rank_deficient_features.json")
        assert main(["analyze-td", "--mdp", MDP2, "--policy", POL, "--features", bad,
                     "--out", str(tmp_path / "o.json")]) == 2
        assert "RankDeficientFeatures" in capsys.readouterr().err

    def test_reducible_chain(self, tmp_path, capsys):
        assert main(["analyze-td", "--mdp", MDP2, "--policy", STAY, "--features", SCALAR,
                     "--out", str(tmp_path / "o.json")]) == 2
        assert "NotErgodic" in capsys.readouterr().err

    def test_bad_alpha(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["analyze-td", "--mdp", MDP2, "--policy", POL, "--features", SCALAR, "--alpha", "-1",
                  "--out", str(tmp_path / "o.json")])


def test_validate_report(tmp_path, schema):
    code, rep = run(tmp_path, "validate", "--mdp", VI6)
    assert code == 0 and rep["valid"] and rep["num_states"] == 6
    jsonschema.validate(rep, schema)


COMMANDS = [
    ["analyze-vc", "--mdp", MDP2, "--policy", POL],
    ["analyze-vi", "--mdp", VI6],
    ["analyze-td", "--mdp", MDP2, "--policy", POL, "--features", SCALAR, "--runs", "5", "--k", "30", "--seed", "9"],
    ["validate", "--mdp", VI6],
]


@pytest.mark.parametrize("args", COMMANDS, ids=lambda a: a[0])
def test_byte_identical(tmp_path, args):
    outs = []
    for i in range(2):
        out = tmp_path / f"r{i}.json"
        assert main([*args, "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_dump_traces(tmp_path):
    out = tmp_path / "rep.json"
    assert main(["analyze-vi", "--mdp", VI6, "--k", "5", "--out", str(out), "--dump-traces"]) == 0
    lines = (tmp_path / "rep.vi_trace.csv").read_text().splitlines()
    assert lines[0].startswith("k,J1,") and "sigma6" in lines[0] and len(lines) == 7
    assert main(["analyze-td", "--mdp", MDP2, "--policy", POL, "--features", SCALAR, "--runs", "2", "--k", "4",
                 "--out", str(out), "--dump-traces"]) == 0
    assert (tmp_path / "rep.mse.csv").read_text().splitlines()[0] == "k,mse"


def test_timings_flag(tmp_path, schema):
    code, rep = run(tmp_path, "analyze-vc", "--mdp", MDP2, "--policy", POL, "--timings")
    assert code == 0 and set(rep["timings"]) == {"load", "certificate", "iterate"}
    jsonschema.validate(rep, schema)
    _, plain = run(tmp_path, "analyze-vc", "--mdp", MDP2, "--policy", POL, name="plain.json")
    assert "timings" not in plain
