"""Command-line entry point: ``skillforge <subcommand>``.

Each phase can run on its own against artifacts written by the previous one;
``evolve`` chains them all. Exit codes: 0 success, 2 configuration error,
3 phase failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import synthetic
from .agent import ExecutionTrace, safe_name
from .aggregator import AggregatedReport, AggregationError, aggregate
from .analyzer import FailureRecord
from .corpus import CorpusError, Task, Ticket, load_corpus, split, tasks_for
from .diagnostician import DiagnosticReport, load_plan
from .judge import CaseVerdict, JudgeError, compute_cr, route_bad_cases
from .llm import Gateway, HttpProvider, LLMError, Provider, RecordingProvider, ScriptedProvider
from .orchestrator import (
    ConfigError,
    PhaseError,
    RunConfig,
    analyze_bad_cases,
    diagnose_phase,
    evolve,
    initial_skill,
    judge_tasks,
    load_search,
    optimize_phase,
    read_jsonl,
    run_tasks,
    write_json,
    write_jsonl,
    write_skill_dir,
)
from .reporting import ReportError, write_report
from .skill import SkillError, SkillPackage, load_skill_dir
from .vfs import Vfs

logger = logging.getLogger("skillforge")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PHASE = 3


# --------------------------------------------------------------------------
# shared option groups


def _provider_opts(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model provider")
    g.add_argument("--provider", choices=("simulated", "scripted", "http"), default="simulated")
    g.add_argument("--script", help="script file for --provider scripted")
    g.add_argument("--record-script", help="also write every exchange to this script file")
    g.add_argument("--concurrency", type=int, default=4)


def _corpus_opt(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--corpus", required=required, help="ticket corpus (JSONL)")


def make_provider(args: argparse.Namespace, tickets: Sequence[Ticket] = ()) -> Provider:
    if args.provider == "scripted":
        if not args.script:
            raise ConfigError("--provider scripted needs --script")
        try:
            return ScriptedProvider.load(args.script)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"script {args.script}: {exc}") from exc
    if args.provider == "http":
        try:
            return HttpProvider.from_env()
        except LLMError as exc:
            raise ConfigError(str(exc)) from exc
    return synthetic.SimulatedProvider.from_tickets(tickets)


def _with_recording(args: argparse.Namespace, provider: Provider) -> Provider:
    return RecordingProvider(provider) if getattr(args, "record_script", None) else provider


def _save_recording(args: argparse.Namespace, provider: Provider) -> None:
    if isinstance(provider, RecordingProvider):
        provider.save(args.record_script)


def _load_tickets(path: str) -> list[Ticket]:
    return load_corpus(path).tickets


def _select_tasks(tickets: Sequence[Ticket], which: str) -> list[Task]:
    if which == "all":
        return tasks_for(tickets)
    plan = split(tickets)
    ids = plan.eval_split if which == "eval" else plan.dev_splits[int(which[-1]) - 1]
    by_id = {t.id: t for t in tickets}
    return tasks_for(by_id[i] for i in ids)


def _gateway(args: argparse.Namespace, provider: Provider) -> Gateway:
    return Gateway(provider, concurrency=args.concurrency)


# --------------------------------------------------------------------------
# subcommands


def cmd_gen_corpus(args: argparse.Namespace) -> int:
    paths = synthetic.write_bundle(args.out, args.n, args.seed)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return EXIT_OK


def cmd_create(args: argparse.Namespace) -> int:
    tickets = _load_tickets(args.corpus)
    plan = split(tickets)
    dev = {i for s in plan.dev_splits for i in s}
    dev_tickets = [t for t in tickets if t.id in dev]
    provider = _with_recording(args, make_provider(args, tickets))
    cfg = RunConfig(args.corpus, args.out, registry=args.registry, articles=args.articles, skill_name=args.name, concurrency=args.concurrency)
    scenario = args.scenario or dev_tickets[0].scenario
    pkg, _ = initial_skill(cfg, _gateway(args, provider), dev_tickets, load_search(args.articles), scenario)
    write_skill_dir(pkg, Path(args.out))
    _save_recording(args, provider)
    print(f"wrote {pkg.label} to {args.out} ({pkg.skill_md.line_count} lines)")
    return EXIT_OK


def _load_skill(path: str, version: int) -> tuple[SkillPackage, Vfs]:
    try:
        return load_skill_dir(path, version)
    except SkillError as exc:
        raise ConfigError(f"skill {path}: {exc}") from exc


def cmd_exec(args: argparse.Namespace) -> int:
    tickets = _load_tickets(args.corpus)
    skill, _ = _load_skill(args.skill, args.version)
    tasks = _select_tasks(tickets, args.split)
    provider = _with_recording(args, make_provider(args, tickets))
    results = run_tasks(_gateway(args, provider), tasks, skill, args.max_steps, args.concurrency)
    out = Path(args.out)
    rows = []
    for task, (reply, trace) in zip(tasks, results):
        trace.save(out / "traces")
        rows.append({"case_id": task.id, "response": reply, "skill_version": skill.version})
    write_jsonl(out / "replies.jsonl", rows)
    _save_recording(args, provider)
    print(f"executed {len(rows)} tasks with {skill.label}")
    return EXIT_OK


def _replies(exec_dir: Path) -> dict[str, dict[str, Any]]:
    return {r["case_id"]: r for r in read_jsonl(exec_dir / "replies.jsonl")}


def cmd_judge(args: argparse.Namespace) -> int:
    tickets = _load_tickets(args.corpus)
    replies = _replies(Path(args.exec_dir))
    tasks = [t for t in tasks_for(tickets) if t.id in replies]
    provider = _with_recording(args, make_provider(args, tickets))
    version = next(iter(replies.values()))["skill_version"] if replies else 0
    verdicts = judge_tasks(_gateway(args, provider), tasks, [replies[t.id]["response"] for t in tasks], f"v{version}", args.concurrency)
    write_jsonl(Path(args.out), [v.to_dict() for v in verdicts])
    _save_recording(args, provider)
    strict, lenient = compute_cr(verdicts).percent()
    print(f"strict CR {strict}%  lenient CR {lenient}%  (n={len(verdicts)})")
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    tickets = _load_tickets(args.corpus)
    exec_dir = Path(args.exec_dir)
    replies = _replies(exec_dir)
    verdicts = {v["case_id"]: CaseVerdict.from_dict(v) for v in read_jsonl(Path(args.verdicts))}
    bad = route_bad_cases(verdicts.values())
    tasks = {t.id: t for t in tasks_for(tickets) if t.id in verdicts}
    results = {}
    for cid in bad:
        trace = ExecutionTrace.from_dict(json.loads((exec_dir / "traces" / f"{safe_name(cid)}.json").read_text(encoding="utf-8")))
        results[cid] = (replies[cid]["response"], trace)
    version = next(iter(replies.values()))["skill_version"] if replies else 0
    provider = _with_recording(args, make_provider(args, tickets))
    records = analyze_bad_cases(_gateway(args, provider), tasks, results, verdicts, bad, version, not args.summaries, args.concurrency)
    write_jsonl(Path(args.out), [r.to_dict() for r in records])
    _save_recording(args, provider)
    print(f"analyzed {len(records)} bad cases")
    return EXIT_OK


def cmd_aggregate(args: argparse.Namespace) -> int:
    records = [FailureRecord.from_dict(d) for d in read_jsonl(Path(args.failures))]
    try:
        report = aggregate(records, args.k, args.run_id, args.version)
    except AggregationError as exc:
        raise PhaseError("aggregate", exc.code, str(exc)) from exc
    write_json(Path(args.out), report.to_dict())
    for line in report.top_issue_summary:
        print(line)
    return EXIT_OK


def _report(path: str) -> AggregatedReport:
    try:
        return AggregatedReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"aggregate {path}: {exc}") from exc


def cmd_diagnose(args: argparse.Namespace) -> int:
    report = _report(args.aggregate)
    skill, _ = _load_skill(args.skill, args.version)
    provider = _with_recording(args, make_provider(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    diag = diagnose_phase(_gateway(args, provider), report, skill, out)
    _save_recording(args, provider)
    for item in diag.plan:
        print(f"P{item.priority}: {', '.join(f'{k}({n})' for k, n in item.addresses)}")
    return EXIT_OK


def cmd_optimize(args: argparse.Namespace) -> int:
    report = _report(args.aggregate)
    skill, vfs = _load_skill(args.skill, args.version)
    try:
        plan = load_plan(json.loads(Path(args.plan).read_text(encoding="utf-8")))
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"plan {args.plan}: {exc}") from exc
    records = [FailureRecord.from_dict(d) for d in read_jsonl(Path(args.failures))] if args.failures else []
    provider = _with_recording(args, make_provider(args))
    cfg = RunConfig("", args.out, allow_high_risk=args.allow_high_risk)
    diag = DiagnosticReport(skill.version, {}, [], [], plan)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    opt, new = optimize_phase(cfg, _gateway(args, provider), load_search(args.articles), diag, skill, vfs, records, report, out)
    _save_recording(args, provider)
    if opt.new_version is None:
        print("no edits applied; skill unchanged")
        return EXIT_OK
    write_skill_dir(new, out / "skill")
    print(f"{skill.label} -> {new.label}: {len(opt.applied)} applied, {len(opt.skipped)} skipped")
    return EXIT_OK


def cmd_evolve(args: argparse.Namespace) -> int:
    try:
        tickets = _load_tickets(args.corpus)
    except CorpusError as exc:
        raise ConfigError(str(exc)) from exc
    cfg = RunConfig(
        corpus=args.corpus,
        out_dir=args.out,
        rounds=args.rounds,
        k=args.k,
        seed=args.seed,
        run_id=args.run_id or "",
        skill_dir=args.skill,
        registry=args.registry,
        articles=args.articles,
        skill_name=args.name,
        allow_high_risk=args.allow_high_risk,
        concurrency=args.concurrency,
        max_agent_steps=args.max_steps,
        deterministic_summaries=not args.summaries,
        scenario=args.scenario or "",
        eval_repeats=args.repeats,
    )
    provider = _with_recording(args, make_provider(args, tickets))
    try:
        result = evolve(cfg, provider)
    finally:
        _save_recording(args, provider)
    report = write_report(result.run_dir, figures=not args.no_figures)
    print(report.table(), end="")
    print(f"status: {result.status}; artifacts in {result.run_dir}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    report = write_report(args.run_dir, args.out, figures=not args.no_figures)
    if args.format == "json":
        print(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    elif args.format == "csv":
        print(report.csv(), end="")
    else:
        print(report.table(), end="")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skillforge", description="Create, evaluate and refine agent skills from support tickets.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="write the synthetic corpus, tool registry and article store")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200, help="number of tickets")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("create", help="build v0 from the development splits")
    _corpus_opt(p)
    p.add_argument("--registry", help="tool registry (tools.json format)")
    p.add_argument("--articles", help="article store for knowledge search")
    p.add_argument("--name", default="support-skill")
    p.add_argument("--scenario")
    p.add_argument("--out", required=True, help="skill directory to write")
    _provider_opts(p)
    p.set_defaults(func=cmd_create)

    p = sub.add_parser("exec", help="run tasks with a skill loaded")
    _corpus_opt(p)
    p.add_argument("--skill", required=True)
    p.add_argument("--version", type=int, default=0)
    p.add_argument("--split", choices=("dev1", "dev2", "dev3", "eval", "all"), default="eval")
    p.add_argument("--max-steps", type=int, default=12)
    p.add_argument("--out", required=True, help="directory for replies.jsonl and traces/")
    _provider_opts(p)
    p.set_defaults(func=cmd_exec)

    p = sub.add_parser("judge", help="judge replies against the expert turns")
    _corpus_opt(p)
    p.add_argument("--exec-dir", required=True)
    p.add_argument("--out", required=True, help="verdicts.jsonl")
    _provider_opts(p)
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser("analyze", help="four-dimension failure analysis of bad cases")
    _corpus_opt(p)
    p.add_argument("--exec-dir", required=True)
    p.add_argument("--verdicts", required=True)
    p.add_argument("--summaries", action="store_true", help="ask the model for per-case summaries")
    p.add_argument("--out", required=True, help="failures.jsonl")
    _provider_opts(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("aggregate", help="aggregate failure records by category")
    p.add_argument("--failures", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--run-id", default="")
    p.add_argument("--version", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("diagnose", help="attribute failures to skill defects and plan edits")
    p.add_argument("--aggregate", required=True)
    p.add_argument("--skill", required=True)
    p.add_argument("--version", type=int, default=0)
    p.add_argument("--out", required=True, help="directory for diagnosis.json and plan.json")
    _provider_opts(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("optimize", help="apply a plan under the additive-edit rules")
    p.add_argument("--plan", required=True)
    p.add_argument("--aggregate", required=True)
    p.add_argument("--failures")
    p.add_argument("--skill", required=True)
    p.add_argument("--version", type=int, default=0)
    p.add_argument("--articles")
    p.add_argument("--allow-high-risk", action="store_true")
    p.add_argument("--out", required=True)
    _provider_opts(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("evolve", help="create or load v0 and run up to three refinement rounds")
    _corpus_opt(p)
    p.add_argument("--out", required=True)
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--k", type=int, default=5, help="representative cases per category")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--run-id")
    p.add_argument("--skill", help="start from this skill directory instead of creating one")
    p.add_argument("--registry")
    p.add_argument("--articles")
    p.add_argument("--name", default="support-skill")
    p.add_argument("--scenario")
    p.add_argument("--allow-high-risk", action="store_true")
    p.add_argument("--max-steps", type=int, default=12)
    p.add_argument("--summaries", action="store_true")
    p.add_argument("--repeats", type=int, default=1, help="evaluation repetitions (mean CR reported)")
    p.add_argument("--no-figures", action="store_true")
    _provider_opts(p)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("report", help="CR tables, deltas and figures for a run")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out")
    p.add_argument("--format", choices=("table", "json", "csv"), default="table")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CorpusError, SkillError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReportError as exc:
        print(f"error: report: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_PHASE
    except PhaseError as exc:
        print(f"error: phase {exc.phase} failed: {exc}", file=sys.stderr)
        return EXIT_PHASE
    except (LLMError, JudgeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PHASE


if __name__ == "__main__":
    sys.exit(main())
