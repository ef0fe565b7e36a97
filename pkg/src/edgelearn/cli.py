"""Command-line front door.

Exit codes: 0 success, 1 usage error (help printed), 2 runtime error.

Subcommands::

    kb init|show            create / inspect a knowledge base directory
    job train|eval|deploy|update
                            operate a lifelong job against a KB; job phase
                            persists in <kb>/job_state.json between calls
    edge infer|status       one-shot inference against a snapshot file
    sim run                 run a SimConfig, write events.log + report.json
    bench gen|run|report    synthetic data, the 3-arm comparison, reports

The flags --seed, --config, and --kb may be given before or after the
subcommand.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import bench as bench_mod
from .data import load_csv, parse_schema, schema_to_json, write_csv
from .edge import DEFAULT_SIMILARITY_THRESHOLD, EdgeRuntime
from .errors import EdgeLearnError, NoModelError
from .job import JobState, LifelongJob, Phase, parse_job_config
from .kb import KnowledgeBase, deserialize_snapshot, serialize_snapshot
from .sim import parse_sim_config, start_sim

_JOB_STATE_FILE = "job_state.json"


class _UsageError(Exception):
    def __init__(self, message: str, parser: argparse.ArgumentParser | None = None):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we want exit 1 + help
        raise _UsageError(message, self)


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override the config seed")
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="config file for the subcommand")
    common.add_argument("--kb", default=argparse.SUPPRESS,
                        help="knowledge base directory")

    parser = _Parser(prog="edgelearn", parents=[common],
                     description="edge-cloud collaborative lifelong learning")
    top = parser.add_subparsers(dest="command", metavar="command")

    kb = top.add_parser("kb", parents=[common], help="knowledge base operations")
    kb_sub = kb.add_subparsers(dest="action", metavar="action")
    kb_sub.add_parser("init", parents=[common], help="create an empty knowledge base")
    show = kb_sub.add_parser("show", parents=[common], help="summarize a knowledge base")
    show.add_argument("--json", action="store_true", help="emit machine-readable output")

    job = top.add_parser("job", parents=[common], help="lifelong job stages")
    job_sub = job.add_subparsers(dest="action", metavar="action")
    for action, needs_data, needs_out in (
        ("train", True, False), ("eval", True, False),
        ("deploy", False, True), ("update", True, True),
    ):
        p = job_sub.add_parser(action, parents=[common])
        p.add_argument("--schema", help="dataset schema config file")
        if needs_data:
            p.add_argument("--data", help="labeled CSV dataset")
        if needs_out:
            p.add_argument("--out", help="snapshot output file")

    edge = top.add_parser("edge", parents=[common], help="edge-side operations")
    edge_sub = edge.add_subparsers(dest="action", metavar="action")
    for action in ("infer", "status"):
        p = edge_sub.add_parser(action, parents=[common])
        p.add_argument("--snapshot", help="deploy snapshot file")
        p.add_argument("--schema", help="dataset schema config file")
        p.add_argument("--data", help="CSV of samples to infer")
        p.add_argument("--out", help="output file")
        p.add_argument("--similarity-threshold", type=float,
                       default=DEFAULT_SIMILARITY_THRESHOLD,
                       help="similar-task routing threshold")

    sim = top.add_parser("sim", parents=[common], help="edge-cloud simulation")
    sim_sub = sim.add_subparsers(dest="action", metavar="action")
    run = sim_sub.add_parser("run", parents=[common])
    run.add_argument("--out-dir", help="directory for events.log and report.json")

    bench = top.add_parser("bench", parents=[common], help="benchmark harness")
    bench_sub = bench.add_subparsers(dest="action", metavar="action")
    gen = bench_sub.add_parser("gen", parents=[common])
    gen.add_argument("--out", help="CSV output path")
    gen.add_argument("--schema-out", help="also write the schema config here")
    brun = bench_sub.add_parser("run", parents=[common])
    brun.add_argument("--schema", help="dataset schema config file")
    brun.add_argument("--train", help="labeled training CSV")
    brun.add_argument("--test", help="labeled test CSV")
    brun.add_argument("--out-dir", help="report output directory")
    breport = bench_sub.add_parser("report", parents=[common])
    breport.add_argument("--summary", help="summary.json from a previous run")

    return parser


def _opt(args, name: str):
    return getattr(args, name, None)


def _require(args, name: str, flag: str | None = None):
    value = _opt(args, name)
    if value is None:
        raise _UsageError(f"missing required flag --{flag or name}")
    return value


def _read(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def _load_job(args) -> tuple:
    schema = parse_schema(_read(_require(args, "schema")))
    cfg = parse_job_config(_read(_require(args, "config")), schema)
    if _opt(args, "seed") is not None:
        cfg = replace(cfg, seed=args.seed)
    kb_path = Path(_require(args, "kb"))
    kb = KnowledgeBase.open(kb_path)
    job = LifelongJob(cfg, kb)
    state_path = kb_path / _JOB_STATE_FILE
    if state_path.exists():
        doc = json.loads(state_path.read_text(encoding="utf-8"))
        job.state = JobState(
            phase=Phase(doc["phase"]),
            snapshot_version=doc["snapshot_version"],
            history=[tuple(entry) for entry in doc["history"]],
        )
    return schema, cfg, kb, job, state_path


def _save_job_state(job: LifelongJob, state_path: Path) -> None:
    doc = {
        "phase": job.state.phase.value,
        "snapshot_version": job.state.snapshot_version,
        "history": [list(entry) for entry in job.state.history],
    }
    state_path.write_text(json.dumps(doc, indent=2), encoding="utf-8")


# ---------------------------------------------------------------------------
# Command handlers
# ---------------------------------------------------------------------------

def _cmd_kb(args) -> int:
    kb_path = _require(args, "kb")
    if args.action == "init":
        kb = KnowledgeBase.open(kb_path)
        kb.save()
        print(f"initialized knowledge base at {kb_path} (version {kb.kb_version})")
        return 0
    if args.action == "show":
        kb = KnowledgeBase.open(kb_path)
        if _opt(args, "json"):
            doc = {
                "kb_version": kb.kb_version,
                "schema_fingerprint": kb.schema_fingerprint,
                "fallback_present": kb.fallback is not None,
                "tasks": [
                    {"key": k, "version": r.version, "status": r.status,
                     "samples": r.sample_stats.count}
                    for k, r in sorted(kb.records.items())
                ],
            }
            print(json.dumps(doc, indent=2, sort_keys=True))
        else:
            print(f"knowledge base {kb_path}: version {kb.kb_version}, "
                  f"{len(kb.records)} tasks, "
                  f"fallback {'present' if kb.fallback is not None else 'absent'}")
            for key, rec in sorted(kb.records.items()):
                acc = f" acc={rec.eval.accuracy:.4f}" if rec.eval is not None else ""
                print(f"  {key}: v{rec.version} {rec.status} "
                      f"n={rec.sample_stats.count}{acc}")
        return 0
    raise _UsageError("kb needs an action: init | show")


def _cmd_job(args) -> int:
    if args.action not in ("train", "eval", "deploy", "update"):
        raise _UsageError("job needs an action: train | eval | deploy | update")
    schema, cfg, kb, job, state_path = _load_job(args)
    if args.action == "train":
        records = job.run_train(load_csv(_require(args, "data"), schema))
        print(f"trained {len(records)} task models (kb version {kb.kb_version})")
        for rec in records:
            print(f"  {rec.key}: v{rec.version} n={rec.sample_stats.count}")
    elif args.action == "eval":
        report = job.run_eval(load_csv(_require(args, "data"), schema))
        for outcome in report.outcomes:
            verdict = "pass" if outcome.passed else f"fail({outcome.reason})"
            acc = f" acc={outcome.metrics.accuracy:.4f}" if outcome.metrics else ""
            print(f"  {outcome.key}: {verdict}{acc}")
        if report.fallback_metrics is not None:
            print(f"  fallback: acc={report.fallback_metrics.accuracy:.4f}")
    elif args.action == "deploy":
        snapshot = job.run_deploy()
        out = Path(_require(args, "out"))
        out.write_bytes(serialize_snapshot(snapshot))
        print(f"deployed snapshot v{snapshot.snapshot_version} "
              f"({len(snapshot.tasks)} tasks) to {out}")
    else:  # update
        snapshot = job.run_update_cycle(load_csv(_require(args, "data"), schema))
        out = Path(_require(args, "out"))
        out.write_bytes(serialize_snapshot(snapshot))
        print(f"updated: snapshot v{snapshot.snapshot_version} "
              f"({len(snapshot.tasks)} tasks) to {out}")
    _save_job_state(job, state_path)
    return 0


def _cmd_edge(args) -> int:
    if args.action not in ("infer", "status"):
        raise _UsageError("edge needs an action: infer | status")
    schema = parse_schema(_read(_require(args, "schema")))
    cfg = parse_job_config(_read(_require(args, "config")), schema)
    snapshot = deserialize_snapshot(Path(_require(args, "snapshot")).read_bytes())
    runtime = EdgeRuntime(schema, cfg.bucketing,
                          similarity_threshold=args.similarity_threshold)
    runtime.apply_snapshot(snapshot)
    data = load_csv(_require(args, "data"), schema)

    rows = []
    for i, sample in enumerate(data.samples):
        try:
            pred = runtime.infer(sample)
        except NoModelError as exc:
            rows.append([str(i), "", "no-model", "", "", str(exc)])
            continue
        label = pred.label if isinstance(pred.label, str) else repr(pred.label)
        rows.append([
            str(i), label, pred.route,
            pred.task_key or "",
            repr(pred.similarity) if pred.similarity is not None else "",
            "",
        ])

    if args.action == "infer":
        out = Path(_require(args, "out"))
        with out.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "label", "route", "task_key", "similarity", "error"])
            writer.writerows(rows)
        print(f"wrote {len(rows)} predictions to {out}")
    else:
        text = runtime.status_json()
        out = _opt(args, "out")
        if out:
            Path(out).write_text(text + "\n", encoding="utf-8")
        print(text)
    return 0


def _cmd_sim(args) -> int:
    if args.action != "run":
        raise _UsageError("sim needs an action: run")
    config_path = Path(_require(args, "config"))
    cfg = parse_sim_config(config_path.read_text(encoding="utf-8"), config_path.parent)
    if _opt(args, "seed") is not None:
        cfg = replace(cfg, job=replace(cfg.job, seed=args.seed))
    sim = start_sim(cfg, _require(args, "kb"))
    report = sim.run_to_completion()
    out_dir = Path(_require(args, "out_dir", flag="out-dir"))
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "events.log").write_text(report.events_text(), encoding="utf-8")
    (out_dir / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(f"simulated {cfg.max_ticks} ticks over {cfg.edges} edge(s): "
          f"{len(report.events)} events, kb version {report.kb_summary['kb_version']}")
    return 0


def _cmd_bench(args) -> int:
    if args.action == "gen":
        spec = bench_mod.parse_synthetic_spec(_read(_require(args, "config")))
        if _opt(args, "seed") is not None:
            spec = replace(spec, seed=args.seed)
        dataset = bench_mod.gen_synthetic(spec)
        out = Path(_require(args, "out"))
        write_csv(dataset, out)
        print(f"generated {len(dataset)} samples over {len(spec.tasks)} tasks to {out}")
        if _opt(args, "schema_out"):
            Path(args.schema_out).write_text(
                schema_to_json(spec.schema) + "\n", encoding="utf-8"
            )
        return 0
    if args.action == "run":
        schema = parse_schema(_read(_require(args, "schema")))
        cfg = parse_job_config(_read(_require(args, "config")), schema)
        if _opt(args, "seed") is not None:
            cfg = replace(cfg, seed=args.seed)
        train = load_csv(_require(args, "train"), schema)
        test = load_csv(_require(args, "test"), schema)
        out_dir = _require(args, "out_dir", flag="out-dir")
        result = bench_mod.run_bench(train, test, cfg, work_dir=out_dir)
        files = bench_mod.emit_report(result, out_dir)
        print(bench_mod.format_report_text(result), end="")
        print("reports: " + ", ".join(str(f) for f in files))
        return 0
    if args.action == "report":
        result = bench_mod.parse_summary(_require(args, "summary"))
        print(bench_mod.format_report_text(result), end="")
        return 0
    raise _UsageError("bench needs an action: gen | run | report")


_HANDLERS = {
    "kb": _cmd_kb,
    "job": _cmd_job,
    "edge": _cmd_edge,
    "sim": _cmd_sim,
    "bench": _cmd_bench,
}


def cli_main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help
            return int(exc.code or 0)
        if _opt(args, "command") is None:
            parser.print_help(sys.stderr)
            return 1
        return _HANDLERS[args.command](args)
    except _UsageError as exc:
        target = exc.parser if exc.parser is not None else parser
        target.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (EdgeLearnError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main(argv=None))
