"""Run the create / execute / judge / analyze / diagnose / optimize loop.

Every phase writes its artifacts under ``<out>/runs/<run_id>/`` before the
next phase starts, so a failed run can be inspected up to the failing step.
Artifacts contain no wall-clock values and list cases in task order, which
keeps repeated runs with a deterministic provider byte-identical.
"""

from __future__ import annotations

import json
import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .agent import ExecutionTrace, ToolSimulator, execute_task
from .aggregator import AggregationError, AggregatedReport, aggregate, category_file
from .analyzer import CaseBundle, FailureRecord, analyze_case
from .corpus import SplitPlan, Task, Ticket, derive_tasks, load_corpus, split
from .creator import CreatorError, SynthesisOptions, create_skill
from .diagnostician import DiagnoseError, DiagnosticReport, diagnose
from .judge import CaseVerdict, compute_cr, format_history, judge_case, mean_cr, route_bad_cases
from .llm import Gateway, LLMError, Provider
from .optimizer import OptimizationResult, OptimizerError, apply_plan
from .search import FixtureSearch, KnowledgeSearch, NullSearch
from .skill import SkillError, SkillPackage, ToolSchema, load_skill_dir, load_tools, parse_skill
from .vfs import Vfs

logger = logging.getLogger(__name__)

COMPLETED = "completed"
CONVERGED = "converged"
FAILED = "failed"


class PhaseError(Exception):
    """A pipeline phase could not finish; ``phase`` names it for the exit report."""

    def __init__(self, phase: str, code: str, message: str = "") -> None:
        super().__init__(f"{phase}: {code}: {message}" if message else f"{phase}: {code}")
        self.phase = phase
        self.code = code


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    corpus: str
    out_dir: str
    rounds: int = 3
    k: int = 5
    seed: int = 0
    run_id: str = ""
    skill_dir: str | None = None
    registry: str | None = None
    articles: str | None = None
    skill_name: str = "support-skill"
    allow_high_risk: bool = False
    concurrency: int = 4
    max_agent_steps: int = 12
    deterministic_summaries: bool = True
    scenario: str = ""
    eval_repeats: int = 1

    def __post_init__(self) -> None:
        if not 0 <= self.rounds <= 3:
            raise ConfigError("rounds must be between 0 and 3 (one per development split)")
        if self.eval_repeats < 1:
            raise ConfigError("eval_repeats must be at least 1")
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        if not self.run_id:
            self.run_id = f"run-s{self.seed}"

    @property
    def run_dir(self) -> Path:
        return Path(self.out_dir) / "runs" / self.run_id

    def to_dict(self) -> dict[str, Any]:
        return {k: v for k, v in vars(self).items()}


@dataclass
class RoundRecord:
    round: int
    skill_version: int
    n_tasks: int
    n_bad: int
    dev_cr: dict[str, Any]
    new_version: int | None = None
    eval_cr: dict[str, Any] | None = None
    applied: int = 0
    skipped: int = 0
    status: str = COMPLETED

    def to_dict(self) -> dict[str, Any]:
        return dict(vars(self))


@dataclass
class EvolveResult:
    run_dir: Path
    status: str
    versions: list[int]
    eval_cr: dict[int, dict[str, Any]]
    rounds: list[RoundRecord] = field(default_factory=list)

    @property
    def final_version(self) -> int:
        return self.versions[-1]


# --------------------------------------------------------------------------
# persistence helpers


def write_json(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, ensure_ascii=False, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def write_jsonl(path: Path, rows: Sequence[Mapping[str, Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def read_jsonl(path: Path) -> list[dict[str, Any]]:
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def write_skill_dir(pkg: SkillPackage, dest: Path) -> None:
    if dest.exists():
        shutil.rmtree(dest)
    for rel, text in sorted(pkg.files().items()):
        p = dest / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8", newline="\n")


def load_registry(path: str | None) -> dict[str, ToolSchema]:
    if not path:
        return {}
    try:
        return {t.name: t for t in load_tools(Path(path).read_text(encoding="utf-8"))}
    except (OSError, SkillError) as exc:
        raise ConfigError(f"tool registry {path}: {exc}") from exc


def load_search(path: str | None) -> KnowledgeSearch:
    if not path:
        return NullSearch()
    try:
        return FixtureSearch.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"article store {path}: {exc}") from exc


# --------------------------------------------------------------------------
# phases


def _ordered_map(fn: Callable[[Any], Any], items: Sequence[Any], workers: int) -> list[Any]:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_tasks(
    gateway: Gateway, tasks: Sequence[Task], skill: SkillPackage, max_steps: int = 12, workers: int = 4
) -> list[tuple[str, ExecutionTrace]]:
    tools = ToolSimulator()
    try:
        return _ordered_map(lambda t: execute_task(gateway, t, skill, tools, max_steps), tasks, workers)
    except LLMError as exc:
        raise PhaseError("execute", exc.code, str(exc)) from exc


def judge_tasks(
    gateway: Gateway, tasks: Sequence[Task], replies: Sequence[str], tag_prefix: str, workers: int = 4
) -> list[CaseVerdict]:
    def one(pair: tuple[Task, str]) -> CaseVerdict:
        task, reply = pair
        v, audit = judge_case(gateway, task.summary, task.history, task.reference_response, reply, f"judge:{tag_prefix}:{task.id}")
        return CaseVerdict.of(task.id, v, audit)

    try:
        return _ordered_map(one, list(zip(tasks, replies)), workers)
    except LLMError as exc:
        raise PhaseError("judge", exc.code, str(exc)) from exc


def analyze_bad_cases(
    gateway: Gateway,
    tasks: Mapping[str, Task],
    results: Mapping[str, tuple[str, ExecutionTrace]],
    verdicts: Mapping[str, CaseVerdict],
    bad: Sequence[str],
    version: int,
    deterministic: bool = True,
    workers: int = 4,
) -> list[FailureRecord]:
    def one(cid: str) -> FailureRecord:
        task = tasks[cid]
        reply, trace = results[cid]
        # token counts are provider bookkeeping, not evidence
        steps = {k: v for k, v in trace.to_dict().items() if k != "token_usage"}
        bundle = CaseBundle(cid, task.summary, format_history(task.history), task.reference_response, reply, steps, verdicts[cid].verdict, version)
        return analyze_case(gateway, bundle, deterministic)

    try:
        return _ordered_map(one, list(bad), workers)
    except LLMError as exc:
        raise PhaseError("analyze", exc.code, str(exc)) from exc


def evaluate(
    gateway: Gateway,
    tasks: Sequence[Task],
    skill: SkillPackage,
    dest: Path,
    max_steps: int = 12,
    workers: int = 4,
    repeats: int = 1,
) -> dict[str, Any]:
    """Score ``skill`` on held-out tasks; nothing here feeds back into analysis.

    With ``repeats`` > 1 the run is repeated and the mean CR is reported
    alongside the first run's counts.
    """
    reports = []
    for rep in range(repeats):
        results = run_tasks(gateway, tasks, skill, max_steps, workers)
        prefix = f"eval:v{skill.version}" + (f":r{rep}" if rep else "")
        verdicts = judge_tasks(gateway, tasks, [r for r, _ in results], prefix, workers)
        reports.append(compute_cr(verdicts))
        name = "verdicts.jsonl" if rep == 0 else f"verdicts_r{rep}.jsonl"
        write_jsonl(dest / name, [v.to_dict() for v in verdicts])
    cr = {**reports[0].to_dict(), "repeats": repeats}
    if repeats > 1:
        mean = mean_cr(reports)
        cr["strict_cr"], cr["lenient_cr"] = mean["strict_cr"], mean["lenient_cr"]
    write_json(dest / "cr.json", cr)
    return cr


# --------------------------------------------------------------------------
# the loop


def _tickets_by_id(tickets: Sequence[Ticket]) -> dict[str, Ticket]:
    return {t.id: t for t in tickets}


def _tasks(tickets: Sequence[Ticket], ids: Sequence[str]) -> list[Task]:
    by_id = _tickets_by_id(tickets)
    out: list[Task] = []
    for tid in ids:
        out.extend(derive_tasks(by_id[tid]))
    return out


def initial_skill(
    cfg: RunConfig, gateway: Gateway, dev_tickets: Sequence[Ticket], search: KnowledgeSearch, scenario: str
) -> tuple[SkillPackage, list[str]]:
    if cfg.skill_dir:
        try:
            pkg, _ = load_skill_dir(cfg.skill_dir, 0)
        except SkillError as exc:
            raise ConfigError(f"skill {cfg.skill_dir}: {exc}") from exc
        return pkg, []
    opts = SynthesisOptions(name=cfg.skill_name, scenario=scenario, description=f"Customer support for {scenario} tickets")
    try:
        res = create_skill(gateway, dev_tickets, load_registry(cfg.registry), search, opts, concurrency=cfg.concurrency)
    except (CreatorError, SkillError) as exc:
        raise PhaseError("create", exc.code, str(exc)) from exc
    except LLMError as exc:
        raise PhaseError("create", exc.code, str(exc)) from exc
    return res.skill, res.warnings


def evolve(cfg: RunConfig, provider: Provider) -> EvolveResult:
    """Create (or load) v0 and run up to ``cfg.rounds`` optimization rounds.

    A :class:`PhaseError` aborts the run after recording it in status.json;
    versions committed before the failure stay on disk.
    """
    try:
        tickets = load_corpus(cfg.corpus).tickets
    except Exception as exc:  # unreadable path or too many malformed lines
        raise ConfigError(f"corpus {cfg.corpus}: {exc}") from exc
    if cfg.scenario:
        tickets = [t for t in tickets if t.scenario == cfg.scenario]
    scenarios = sorted({t.scenario for t in tickets})
    scenario = cfg.scenario or (scenarios[0] if len(scenarios) == 1 else "mixed")
    try:
        plan = split(tickets)
    except Exception as exc:
        raise ConfigError(str(exc)) from exc
    run_dir = cfg.run_dir
    if run_dir.exists():
        shutil.rmtree(run_dir)
    run_dir.mkdir(parents=True)
    write_json(run_dir / "config.json", cfg.to_dict())
    write_json(run_dir / "splits.json", plan.to_dict())
    gateway = Gateway(provider, concurrency=cfg.concurrency)
    search = load_search(cfg.articles)
    result = EvolveResult(run_dir, COMPLETED, [], {})
    try:
        _evolve(cfg, gateway, search, tickets, plan, scenario, result)
    except PhaseError as exc:
        result.status = FAILED
        _write_status(run_dir, result, {"phase": exc.phase, "code": exc.code, "message": str(exc)})
        raise
    finally:
        write_jsonl(run_dir / "llm_calls.jsonl", _call_log(gateway))
    _write_status(run_dir, result)
    return result


def _write_status(run_dir: Path, result: EvolveResult, error: Mapping[str, Any] | None = None) -> None:
    data: dict[str, Any] = {"status": result.status, "versions": result.versions, "rounds": [x.to_dict() for x in result.rounds]}
    if error:
        data["error"] = dict(error)
    write_json(run_dir / "status.json", data)


def _evolve(
    cfg: RunConfig,
    gateway: Gateway,
    search: KnowledgeSearch,
    tickets: Sequence[Ticket],
    plan: SplitPlan,
    scenario: str,
    result: EvolveResult,
) -> None:
    run_dir = cfg.run_dir
    by_id = _tickets_by_id(tickets)
    dev_ids = [tid for s in plan.dev_splits for tid in s]
    skill, warnings = initial_skill(cfg, gateway, [by_id[i] for i in dev_ids], search, scenario)
    lineage_vfs = Vfs()
    skill.write_to(lineage_vfs, "/skill")
    lineage_vfs.snapshot(skill.label)
    skills_dir = run_dir / "skills"
    write_skill_dir(skill, skills_dir / skill.label)
    write_json(run_dir / "create.json", {"skill_version": skill.version, "warnings": warnings, "source": cfg.skill_dir or "created"})

    eval_tasks = _tasks(tickets, plan.eval_split)

    def score(pkg: SkillPackage) -> dict[str, Any]:
        cr = evaluate(gateway, eval_tasks, pkg, run_dir / "eval" / pkg.label, cfg.max_agent_steps, cfg.concurrency, cfg.eval_repeats)
        result.eval_cr[pkg.version] = cr
        result.versions.append(pkg.version)
        return cr

    lineage: list[dict[str, Any]] = [{"version": skill.version, "parent": None, "round": 0, "snapshot": skill.label, "eval_cr": score(skill)}]
    write_json(run_dir / "lineage.json", lineage)
    for r in range(1, cfg.rounds + 1):
        rdir = run_dir / f"round_{r}"
        rec = _round(cfg, gateway, search, tickets, plan.dev_splits[r - 1], skill, lineage_vfs, rdir, r)
        result.rounds.append(rec)
        if rec.new_version is None:
            result.status = CONVERGED
            write_json(rdir / "report.json", {**rec.to_dict(), "snapshot": skill.label})
            logger.warning("round %d: converged, no new version; skipping remaining rounds", r)
            break
        parent = skill.version
        skill = parse_skill(lineage_vfs, "/skill", rec.new_version)
        write_skill_dir(skill, skills_dir / skill.label)
        rec.eval_cr = score(skill)
        lineage.append(
            {"version": skill.version, "parent": parent, "round": r, "snapshot": skill.label, "eval_cr": rec.eval_cr, "diff": f"round_{r}/diff.patch"}
        )
        write_json(rdir / "report.json", {**rec.to_dict(), "snapshot": skill.label})
        write_json(run_dir / "lineage.json", lineage)


def _call_log(gateway: Gateway) -> list[dict[str, Any]]:
    rows = [{"tag": c.tag, "schema": c.schema, "attempts": c.attempts, "ok": c.ok, "error": c.error} for c in gateway.calls]
    return sorted(rows, key=lambda d: (d["tag"], d["attempts"], d["ok"]))


def _round(
    cfg: RunConfig,
    gateway: Gateway,
    search: KnowledgeSearch,
    tickets: Sequence[Ticket],
    split_ids: Sequence[str],
    skill: SkillPackage,
    lineage_vfs: Vfs,
    rdir: Path,
    r: int,
) -> RoundRecord:
    tasks = _tasks(tickets, split_ids)
    results = run_tasks(gateway, tasks, skill, cfg.max_agent_steps, cfg.concurrency)
    for reply, trace in results:
        trace.save(rdir / "traces")
    verdicts = judge_tasks(gateway, tasks, [x for x, _ in results], f"v{skill.version}", cfg.concurrency)
    write_jsonl(rdir / "verdicts.jsonl", [v.to_dict() for v in verdicts])
    dev_cr = compute_cr(verdicts)
    bad = route_bad_cases(verdicts)
    rec = RoundRecord(r, skill.version, len(tasks), len(bad), dev_cr.to_dict())
    if not bad:
        rec.status = CONVERGED
        write_jsonl(rdir / "failures.jsonl", [])
        return rec
    by_task = {t.id: t for t in tasks}
    by_res = {t.id: res for t, res in zip(tasks, results)}
    by_ver = {v.case_id: v for v in verdicts}
    records = analyze_bad_cases(gateway, by_task, by_res, by_ver, bad, skill.version, cfg.deterministic_summaries, cfg.concurrency)
    write_jsonl(rdir / "failures.jsonl", [x.to_dict() for x in records])
    try:
        report = aggregate(records, cfg.k, cfg.run_id, skill.version)
    except AggregationError as exc:
        raise PhaseError("aggregate", exc.code, str(exc)) from exc
    write_json(rdir / "aggregate.json", report.to_dict())
    if not report.categories:
        rec.status = CONVERGED
        return rec
    for c in report.categories:
        write_json(rdir / "analysis" / f"{c.category}.json", category_file(c, report))
    diag = diagnose_phase(gateway, report, skill, rdir)
    opt, new = optimize_phase(cfg, gateway, search, diag, skill, lineage_vfs, records, report, rdir)
    rec.applied, rec.skipped = len(opt.applied), len(opt.skipped)
    if opt.new_version is None:
        rec.status = CONVERGED
        return rec
    rec.new_version = new.version
    return rec


def diagnose_phase(gateway: Gateway, report: AggregatedReport, skill: SkillPackage, rdir: Path) -> DiagnosticReport:
    try:
        diag = diagnose(gateway, report, skill, Vfs())
    except DiagnoseError as exc:
        raise PhaseError("diagnose", exc.code, str(exc)) from exc
    except LLMError as exc:
        raise PhaseError("diagnose", exc.code, str(exc)) from exc
    write_json(rdir / "diagnosis.json", diag.to_dict())
    write_json(rdir / "plan.json", [p.to_dict() for p in diag.plan])
    return diag


def optimize_phase(
    cfg: RunConfig,
    gateway: Gateway,
    search: KnowledgeSearch,
    diag: DiagnosticReport,
    skill: SkillPackage,
    vfs: Vfs,
    records: Sequence[FailureRecord],
    report: AggregatedReport,
    rdir: Path,
) -> tuple[OptimizationResult, SkillPackage]:
    try:
        opt, new = apply_plan(
            gateway, diag.plan, skill, vfs, search, records, report, cfg.allow_high_risk, commit_if_unchanged=False
        )
    except OptimizerError as exc:
        raise PhaseError("optimize", exc.code, str(exc)) from exc
    except LLMError as exc:
        raise PhaseError("optimize", exc.code, str(exc)) from exc
    write_json(rdir / "optimization.json", opt.to_dict())
    (rdir / "diff.patch").write_text(opt.diff, encoding="utf-8", newline="\n")
    return opt, new
