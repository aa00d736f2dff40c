from __future__ import annotations

import csv
import io
import json
from importlib import resources
from pathlib import Path

import pytest

from cohcomm import cli
from cohcomm.qstate import TOL

PROTOCOLS = Path(str(resources.files("cohcomm") / "data" / "protocols"))
CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(argv, capsys) -> tuple[int, str]:
    rc = cli.main([str(a) for a in argv])
    return rc, capsys.readouterr().out


def run_json(argv, capsys) -> tuple[int, dict]:
    rc, out = run(argv, capsys)
    return rc, json.loads(out)


def write(tmp_path: Path, name: str, obj) -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return path


# --------------------------------------------------------------- simulate


def test_simulate_crossing(capsys):
    rc, rep = run_json(["simulate", "--protocol", PROTOCOLS / "crossing.json", "--all-messages"], capsys)
    assert rc == 0
    cli.validate(rep, "simulate_report")
    assert rep["epsilon_measured"] == pytest.approx(0.0, abs=1e-12)
    assert rep["gamma00_entropy"] == pytest.approx(2.0, abs=1e-6)
    assert rep["decoupling_error"] <= 1e-9
    assert len(rep["pr_table"]) == 16
    support = [r for r in rep["pr_table"] if r["prob"] > 1e-12]
    assert len(support) == 4
    assert all(r["a_out"] == r["a"] and r["b_out"] == r["b"] for r in support)


def test_simulate_single_pair(capsys):
    rc, rep = run_json(["simulate", "--protocol", PROTOCOLS / "noisy_crossing.json", "-a", "1", "-b", "0"], capsys)
    assert rc == 0
    assert {r["a"] for r in rep["pr_table"]} == {"1"}
    assert sum(r["prob"] for r in rep["pr_table"]) == pytest.approx(1.0, abs=1e-10)
    assert rep["epsilon_measured"] == pytest.approx(0.1, abs=1e-9)


def test_simulate_zero_bit_protocol(capsys):
    rc, rep = run_json(["simulate", "--protocol", PROTOCOLS / "silent.json"], capsys)
    assert rc == 0 and rep["pr_table"] == []
    cli.validate(rep, "simulate_report")


def test_simulate_width_overflow_exits_3(capsys):
    rc, _ = run(["simulate", "--protocol", PROTOCOLS / "crossing_wide_environment.json"], capsys)
    assert rc == 3


def test_simulate_width_diagnostic(capsys):
    cli.main(["simulate", "--protocol", str(PROTOCOLS / "crossing_wide_environment.json")])
    err = capsys.readouterr().err
    assert "qubit" in err.lower()


def test_tolerance_override_raises_width_cap(capsys, tmp_path):
    rc, _ = run(
        ["simulate", "--protocol", PROTOCOLS / "crossing.json", "--tolerance", "max_qubits=8"], capsys
    )
    assert rc == 3
    assert TOL.max_qubits == 22  # restored after the command


def test_bad_bits_exit_2(capsys):
    rc, _ = run(["simulate", "--protocol", PROTOCOLS / "crossing.json", "-a", "10", "-b", "0"], capsys)
    assert rc == 2


@pytest.mark.parametrize(
    "doc",
    [
        {"schema": "cohcomm/protocol/v1", "name": "x"},
        {"builtin": "no-such-gate"},
        [1, 2, 3],
    ],
)
def test_protocol_schema_violation_exit_2(doc, capsys, tmp_path):
    rc, _ = run(["simulate", "--protocol", write(tmp_path, "p.json", doc)], capsys)
    assert rc == 2


def test_missing_file_and_bad_json_exit_2(capsys, tmp_path):
    assert run(["simulate", "--protocol", tmp_path / "absent.json"], capsys)[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["simulate", "--protocol", bad], capsys)[0] == 2


# --------------------------------------------------------------- pipeline


def test_pipeline_noiseless_p_fail_all_zero(capsys, tmp_path):
    out = tmp_path / "ledger.csv"
    rc, summary = run_json(
        ["pipeline", "--config", CONFIGS / "crossing_k5.json", "--trials", 25, "--seed", 3, "--csv", out], capsys
    )
    assert rc == 0
    cli.validate(summary, "pipeline_summary")
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert len(rows) == 25
    assert all(float(r["p_fail"]) == 0.0 for r in rows)
    assert [int(r["trial"]) for r in rows] == list(range(25))
    assert summary["p_fail_max"] == 0.0 and summary["failures"] == 0


def test_pipeline_zero_trials_is_analytic_only(capsys, tmp_path):
    out = tmp_path / "ledger.csv"
    rc, summary = run_json(["pipeline", "--config", CONFIGS / "crossing_k5.json", "--trials", 0, "--csv", out], capsys)
    assert rc == 0
    assert summary["p_fail_mean"] is None and summary["ebits_out_mean"] is None
    assert summary["accounting"]["f_value"] > 0
    assert not out.exists()


@pytest.mark.parametrize("jobs", [1, 3])
def test_pipeline_rerun_is_byte_identical(jobs, capsys, tmp_path):
    outs = []
    for i in range(2):
        csv_path, json_path = tmp_path / f"l{i}.csv", tmp_path / f"s{i}.json"
        rc, _ = run(
            ["pipeline", "--config", CONFIGS / "noisy_crossing_greedy.json", "--trials", 12, "--seed", 9,
             "--jobs", jobs if i else 1, "--csv", csv_path, "--json", json_path],
            capsys,
        )
        assert rc == 0
        outs.append((csv_path.read_bytes(), json_path.read_bytes()))
    assert outs[0][0] == outs[1][0]
    # the summary records the same seed and trials, so it matches as well
    assert outs[0][1] == outs[1][1]


def test_pipeline_csv_uses_crlf(capsys, tmp_path):
    out = tmp_path / "ledger.csv"
    run(["pipeline", "--config", CONFIGS / "crossing_k5.json", "--trials", 2, "--csv", out], capsys)
    assert out.read_bytes().count(b"\r\n") == 3


def test_pipeline_fixed_messages(capsys, tmp_path):
    out = tmp_path / "ledger.csv"
    rc, _ = run(["pipeline", "--config", CONFIGS / "cnot_fixed_messages.json", "--trials", 4, "--csv", out], capsys)
    assert rc == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert {r["msg_a"] for r in rows} == {"1"}


def test_pipeline_wrong_message_length_exit_2(capsys, tmp_path):
    cfg = json.loads((CONFIGS / "cnot_fixed_messages.json").read_text())
    cfg["messages"] = {"a": [1, 0, 1]}
    assert run(["pipeline", "--config", write(tmp_path, "c.json", cfg)], capsys)[0] == 2


@pytest.mark.parametrize("patch", [{"alpha": 0.9}, {"k": 0}, {"code_a": {"kind": "turbo"}}, {"protocol": 5}])
def test_pipeline_config_schema_violation_exit_2(patch, capsys, tmp_path):
    cfg = json.loads((CONFIGS / "crossing_k5.json").read_text())
    cfg.update(patch)
    assert run(["pipeline", "--config", write(tmp_path, "c.json", cfg)], capsys)[0] == 2


# ---------------------------------------------------------------- regions


@pytest.mark.parametrize(
    "name, point, expected",
    [("thm12", "-1,2,0", ["-1", "2", "1"]), ("qqe-to-cocoe", "1,1,0", ["2", "2", "-2"]), ("one-way", "1,0", ["2", "-1"])],
)
def test_regions_maps(name, point, expected, capsys):
    rc, rep = run_json(["regions", "--map", name, "--point", point], capsys)
    assert rc == 0 and rep["output"] == expected
    cli.validate(rep, "regions_report")


def test_regions_shipped_script_valid(capsys):
    rc, rep = run_json(["regions", "--script", "tp_sd_chain.json"], capsys)
    assert rc == 0 and rep["verdict"]["valid"] is True


def test_regions_invalid_script_exit_1(capsys):
    rc, rep = run_json(["regions", "--script", "invalid_unheld_ebit.json"], capsys)
    assert rc == 1 and rep["verdict"]["valid"] is False and rep["verdict"]["offending_step"] == 0


def test_regions_rate_override(capsys):
    rc, rep = run_json(
        ["regions", "--script", "oneway_back_cobits_to_back_cbits.json", "--rate", "C1=3", "--rate", "C2=1/3"], capsys
    )
    assert rc == 0 and rep["verdict"]["goal"]["cbit_fwd"] == "3"


@pytest.mark.parametrize(
    "argv",
    [["--map", "bogus", "--point", "1,2,3"], ["--map", "thm12", "--point", "1,x,3"], ["--map", "thm12"], ["--map", "thm12", "--point", "1,2"]],
)
def test_regions_input_errors_exit_2(argv, capsys):
    assert run(["regions", *argv], capsys)[0] == 2


def test_regions_script_schema_violation_exit_2(capsys, tmp_path):
    assert run(["regions", "--script", write(tmp_path, "d.json", {"steps": "nope"})], capsys)[0] == 2


# ------------------------------------------------------------ concentrate


def test_concentrate_spectrum(capsys, tmp_path):
    out = tmp_path / "c.csv"
    rc, rep = run_json(
        ["concentrate", "--spectrum", "0.2,0.8", "--k-prime", 32, "--trials", 200, "--seed", 4, "--csv", out], capsys
    )
    assert rc == 0
    cli.validate(rep, "concentrate_report")
    assert abs(rep["mean_ebits"] - rep["exact_mean"]) <= 4 * rep["stderr"]
    assert len(out.read_text().splitlines()) == 201


def test_concentrate_from_protocol(capsys):
    rc, rep = run_json(["concentrate", "--protocol", PROTOCOLS / "crossing.json", "--k-prime", 8, "--trials", 10], capsys)
    assert rc == 0 and rep["entropy"] == pytest.approx(2.0, abs=1e-9)


def test_concentrate_deterministic_across_jobs(capsys):
    a = run(["concentrate", "--spectrum", "1/4,1/4,1/2", "--trials", 40, "--k-prime", 16], capsys)[1]
    b = run(["concentrate", "--spectrum", "1/4,1/4,1/2", "--trials", 40, "--k-prime", 16, "--jobs", 2], capsys)[1]
    assert a == b


@pytest.mark.parametrize("spec", ["0.5,0.6", "-1,2", "a,b"])
def test_concentrate_bad_spectrum_exit_2(spec, capsys):
    assert run(["concentrate", "--spectrum", spec], capsys)[0] == 2


# ------------------------------------------------------ verify-identities


def test_verify_identities_all(capsys):
    rc, rep = run_json(["verify-identities"], capsys)
    assert rc == 0 and rep["all_passed"]
    cli.validate(rep, "identities_report")
    assert {i["name"] for i in rep["identities"]} >= {"teleport", "superdense", "two_cobits", "tp_sd"}


def test_verify_identities_negative_threshold_exit_2(capsys):
    assert run(["verify-identities", "teleport", "--tolerance", "check=-1"], capsys)[0] == 2


def test_verify_identities_unknown_exit_2(capsys):
    assert run(["verify-identities", "telepathy"], capsys)[0] == 2


def test_unknown_tolerance_exit_2(capsys):
    assert run(["verify-identities", "--tolerance", "nonsense=1"], capsys)[0] == 2
