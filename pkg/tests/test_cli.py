"""CLI surface: subcommands, exit codes, file outputs."""

from __future__ import annotations

import json

import pytest

from edgelearn.cli import cli_main
from edgelearn.data import load_csv, parse_schema, write_csv
from edgelearn.reference import reference_text

from conftest import city_dataset


SCHEMA_TEXT = """
{"features": ["x"],
 "label": {"name": "y", "classes": ["a", "b"]},
 "attributes": [{"name": "city", "kind": "categorical"}]}
"""

JOB_TEXT = """
{"learner": {"kind": "majority"},
 "transfer": {"min_samples": 1, "cap": 100},
 "trigger": {"unseen_threshold": 5},
 "seed": 3}
"""


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "schema.json").write_text(SCHEMA_TEXT, encoding="utf-8")
    (tmp_path / "job.json").write_text(JOB_TEXT, encoding="utf-8")
    data = city_dataset(
        [(float(i), "athens", "a") for i in range(8)]
        + [(float(i), "tokyo", "b") for i in range(8)]
    )
    write_csv(data, tmp_path / "train.csv")
    write_csv(data, tmp_path / "test.csv")
    return tmp_path


def test_unknown_subcommand_exits_1(capsys):
    assert cli_main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_no_command_prints_help_exits_1(capsys):
    assert cli_main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_help_exits_0(capsys):
    assert cli_main(["--help"]) == 0
    assert "usage" in capsys.readouterr().out


def test_missing_required_flag_exits_1(capsys):
    assert cli_main(["kb", "init"]) == 1
    assert "--kb" in capsys.readouterr().err


def test_kb_init_and_show_fresh(workdir, capsys):
    kb_dir = str(workdir / "kb")
    assert cli_main(["kb", "init", "--kb", kb_dir]) == 0
    assert cli_main(["kb", "show", "--kb", kb_dir]) == 0
    out = capsys.readouterr().out
    assert "version 0" in out
    assert "0 tasks" in out


def test_kb_show_json(workdir, capsys):
    kb_dir = str(workdir / "kb")
    assert cli_main(["kb", "init", "--kb", kb_dir]) == 0
    capsys.readouterr()
    assert cli_main(["kb", "show", "--kb", kb_dir, "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["kb_version"] == 0
    assert doc["tasks"] == []


def test_job_stage_cycle(workdir, capsys):
    kb_dir = str(workdir / "kb")
    base = [
        "--kb", kb_dir,
        "--schema", str(workdir / "schema.json"),
        "--config", str(workdir / "job.json"),
    ]
    assert cli_main(["job", "train", *base, "--data", str(workdir / "train.csv")]) == 0
    assert cli_main(["job", "eval", *base, "--data", str(workdir / "test.csv")]) == 0
    snap_path = workdir / "snap.json"
    assert cli_main(["job", "deploy", *base, "--out", str(snap_path)]) == 0
    assert snap_path.exists()
    out = capsys.readouterr().out
    assert "2 tasks" in out

    # phase persisted: a second deploy from Deployed is a phase error -> exit 2
    assert cli_main(["job", "deploy", *base, "--out", str(snap_path)]) == 2

    update_csv = workdir / "update.csv"
    write_csv(
        city_dataset([(float(i), "oslo", "a") for i in range(10)]),
        update_csv,
    )
    assert cli_main(["job", "update", *base, "--data", str(update_csv),
                     "--out", str(snap_path)]) == 0


def test_wrong_phase_is_runtime_error(workdir):
    kb_dir = str(workdir / "kb")
    base = [
        "--kb", kb_dir,
        "--schema", str(workdir / "schema.json"),
        "--config", str(workdir / "job.json"),
    ]
    assert cli_main(["job", "eval", *base, "--data", str(workdir / "test.csv")]) == 2


def test_edge_infer_and_status(workdir, capsys):
    kb_dir = str(workdir / "kb")
    base = [
        "--kb", kb_dir,
        "--schema", str(workdir / "schema.json"),
        "--config", str(workdir / "job.json"),
    ]
    cli_main(["job", "train", *base, "--data", str(workdir / "train.csv")])
    cli_main(["job", "eval", *base, "--data", str(workdir / "test.csv")])
    snap_path = workdir / "snap.json"
    cli_main(["job", "deploy", *base, "--out", str(snap_path)])
    capsys.readouterr()

    probe = city_dataset(
        [(1.0, "athens", None), (2.0, "tokyo", None), (3.0, "berlin", None)]
    )
    probe_csv = workdir / "probe.csv"
    write_csv(probe, probe_csv)
    preds_csv = workdir / "preds.csv"
    code = cli_main([
        "edge", "infer",
        "--snapshot", str(snap_path),
        "--schema", str(workdir / "schema.json"),
        "--config", str(workdir / "job.json"),
        "--data", str(probe_csv),
        "--out", str(preds_csv),
    ])
    assert code == 0
    lines = preds_csv.read_text().strip().splitlines()
    assert lines[0] == "index,label,route,task_key,similarity,error"
    assert len(lines) == 4
    assert "known" in lines[1] and "known" in lines[2]
    assert "fallback" in lines[3]

    capsys.readouterr()
    status_path = workdir / "status.json"
    code = cli_main([
        "edge", "status",
        "--snapshot", str(snap_path),
        "--schema", str(workdir / "schema.json"),
        "--config", str(workdir / "job.json"),
        "--data", str(probe_csv),
        "--out", str(status_path),
    ])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["counters"]["inferences"] == 3
    assert doc["counters"]["known_hits"] == 2
    assert doc["counters"]["unknown_hits"] == 1
    assert json.loads(status_path.read_text()) == doc


def test_sim_run_writes_outputs(workdir, capsys):
    stream = city_dataset([(float(i), "oslo", "b") for i in range(6)])
    write_csv(stream, workdir / "stream.csv")
    sim_config = {
        "edges": 1,
        "max_ticks": 5,
        "schema": "schema.json",
        "job": "job.json",
        "initial_data": "train.csv",
        "streams": [{"tick": 1, "edge": 0, "data": "stream.csv"}],
        "links": [],
    }
    (workdir / "sim.json").write_text(json.dumps(sim_config), encoding="utf-8")
    out_dir = workdir / "simout"
    code = cli_main([
        "sim", "run",
        "--config", str(workdir / "sim.json"),
        "--kb", str(workdir / "simkb"),
        "--out-dir", str(out_dir),
    ])
    assert code == 0
    assert (out_dir / "events.log").exists()
    report = json.loads((out_dir / "report.json").read_text())
    assert report["kb_summary"]["kb_version"] >= 1
    assert any(t["key"] == "oslo" for t in report["kb_summary"]["tasks"])


def test_bench_gen_run_report_pipeline(workdir, tmp_path, capsys):
    spec_path = tmp_path / "synth.json"
    spec_path.write_text(reference_text("thermal5_synthetic.json"), encoding="utf-8")
    data_csv = tmp_path / "data.csv"
    schema_out = tmp_path / "thermal_schema.json"
    assert cli_main([
        "bench", "gen", "--config", str(spec_path),
        "--out", str(data_csv), "--schema-out", str(schema_out),
    ]) == 0
    schema = parse_schema(schema_out.read_text())
    data = load_csv(data_csv, schema)
    assert len(data) == 5000

    # split into train/test files for the run
    from edgelearn.data import split_dataset
    train, test = split_dataset(data, 0.7, seed=42)
    write_csv(train, tmp_path / "train.csv")
    write_csv(test, tmp_path / "test.csv")
    job_path = tmp_path / "job.json"
    job_path.write_text(reference_text("thermal_job.json"), encoding="utf-8")
    out_dir = tmp_path / "reports"
    assert cli_main([
        "bench", "run",
        "--schema", str(schema_out), "--config", str(job_path),
        "--train", str(tmp_path / "train.csv"), "--test", str(tmp_path / "test.csv"),
        "--out-dir", str(out_dir),
    ]) == 0
    out = capsys.readouterr().out
    assert "lifelong" in out
    for name in ("accuracy.csv", "improvement.csv", "summary.json"):
        assert (out_dir / name).exists()

    assert cli_main(["bench", "report", "--summary", str(out_dir / "summary.json")]) == 0
    assert "lifelong" in capsys.readouterr().out


def test_bench_run_determinism_byte_identical(workdir, tmp_path):
    args_base = [
        "bench", "run",
        "--schema", str(workdir / "schema.json"),
        "--config", str(workdir / "job.json"),
        "--train", str(workdir / "train.csv"),
        "--test", str(workdir / "test.csv"),
    ]
    assert cli_main([*args_base, "--out-dir", str(tmp_path / "r1")]) == 0
    assert cli_main([*args_base, "--out-dir", str(tmp_path / "r2")]) == 0
    for name in ("accuracy.csv", "improvement.csv", "summary.json"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


def test_runtime_error_exit_2(workdir, capsys):
    assert cli_main([
        "bench", "run",
        "--schema", str(workdir / "schema.json"),
        "--config", str(workdir / "job.json"),
        "--train", str(workdir / "missing.csv"),
        "--test", str(workdir / "test.csv"),
        "--out-dir", str(workdir / "out"),
    ]) == 2
    assert "error" in capsys.readouterr().err


def test_global_flags_before_subcommand(workdir, capsys):
    kb_dir = str(workdir / "kb2")
    assert cli_main(["--kb", kb_dir, "kb", "init"]) == 0
    assert "initialized" in capsys.readouterr().out


def test_bench_gen_seed_override_changes_data(tmp_path):
    spec_path = tmp_path / "synth.json"
    spec_path.write_text(reference_text("thermal5_synthetic.json"), encoding="utf-8")
    for seed, name in ((1, "d1.csv"), (1, "d1b.csv"), (2, "d2.csv")):
        assert cli_main([
            "bench", "gen", "--config", str(spec_path),
            "--seed", str(seed), "--out", str(tmp_path / name),
        ]) == 0
    assert (tmp_path / "d1.csv").read_bytes() == (tmp_path / "d1b.csv").read_bytes()
    assert (tmp_path / "d1.csv").read_bytes() != (tmp_path / "d2.csv").read_bytes()
