"""Root-cause diagnosis: a reason/act session over the skill and analysis files.

The model explores ``/skill`` and ``/analysis`` through read-only VFS actions,
submits attributions, then submits a prioritized plan. The engine validates
every location and issue reference; invalid entries are bounced back once and
dropped (with an audit note) if still invalid.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .aggregator import AggregatedReport, category_file
from .llm import ChatRequest, Gateway, LLMError, Message
from .schemas import DEFECT_KINDS, DIMENSIONS, RISKS, parse_issue_key
from .skill import SKILL_MD, SkillPackage, count_lines
from .vfs import Vfs, normalize_path

logger = logging.getLogger(__name__)

SKILL_ROOT = "/skill"
ANALYSIS_ROOT = "/analysis"
DEFAULT_MAX_STEPS = 16
NEW_SECTION_TARGETS = {"style": "Response Guidelines"}


class DiagnoseError(Exception):
    def __init__(self, code: str, message: str = "") -> None:
        super().__init__(message or code)
        self.code = code


@dataclass(frozen=True)
class DefectTemplate:
    description: str
    defect_kind: str
    target: str  # section kind, or a section title to create


# The first six rows are the published attribution patterns; the rest extend
# the table to the full issue vocabulary.
ATTRIBUTION_TABLE: dict[tuple[str, str], DefectTemplate] = {
    ("knowledge", "missing"): DefectTemplate("SKILL.md lacks knowledge for this scenario", "missing", "BackgroundKnowledge"),
    ("knowledge", "not_surfaced"): DefectTemplate("Knowledge exists but poorly organized", "insufficient", "BackgroundKnowledge"),
    ("tool", "missed_call"): DefectTemplate("No guidance on when to call this tool", "missing", "CaseTypeHandling"),
    ("tool", "wrong_params"): DefectTemplate("Insufficient parameter documentation", "insufficient", "CaseTypeHandling"),
    ("clarification", "over_clarification"): DefectTemplate("Information gathering rules too broad", "insufficient", "CaseTypeHandling"),
    ("style", "verbose"): DefectTemplate("Lacks concise response guidelines", "missing", "Response Guidelines"),
    ("knowledge", "incorrect"): DefectTemplate("SKILL.md states a wrong fact", "incorrect", "BackgroundKnowledge"),
    ("knowledge", "contradictory"): DefectTemplate("Two skill passages disagree", "incorrect", "BackgroundKnowledge"),
    ("knowledge", "outdated"): DefectTemplate("Skill knowledge no longer matches the product", "incorrect", "BackgroundKnowledge"),
    ("knowledge", "misapplied"): DefectTemplate("Applicability of a rule is not stated", "insufficient", "CaseTypeHandling"),
    ("tool", "wrong_tool"): DefectTemplate("Tool selection criteria unclear", "insufficient", "CaseTypeHandling"),
    ("tool", "repeated_call"): DefectTemplate("No guidance on reusing earlier tool results", "missing", "CaseTypeHandling"),
    ("tool", "result_misread"): DefectTemplate("No guidance on interpreting tool results", "missing", "CaseTypeHandling"),
    ("tool", "underutilized"): DefectTemplate("Available tool not tied to any workflow step", "missing", "CaseTypeHandling"),
    ("tool", "tool_missing"): DefectTemplate("Needed capability absent from the tool set", "missing", "CaseTypeHandling"),
    ("clarification", "under_clarification"): DefectTemplate("Required information not listed before diagnosis", "missing", "CaseTypeHandling"),
    ("clarification", "wrong_focus"): DefectTemplate("Triage signals point at the wrong question", "incorrect", "CaseTypeTriage"),
    ("style", "robotic"): DefectTemplate("No natural-language guidance", "missing", "Response Guidelines"),
    ("style", "cold"): DefectTemplate("No empathy guidance", "missing", "Response Guidelines"),
    ("style", "inappropriate_tone"): DefectTemplate("No tone rules for sensitive situations", "missing", "Response Guidelines"),
}
GENERIC_DEFECT = DefectTemplate("Skill guidance for this issue is missing or unclear", "insufficient", "CaseTypeHandling")


def default_attribution(category: str, issue_type: str) -> DefectTemplate:
    _, issue = parse_issue_key(f"{category}:{issue_type}")
    hit = ATTRIBUTION_TABLE.get((category, issue))
    if hit is None:
        logger.warning("no attribution pattern for %s:%s; using the generic template", category, issue_type)
        return GENERIC_DEFECT
    return hit


# --------------------------------------------------------------------------
# plan data


@dataclass(frozen=True)
class Location:
    file: str
    section: str = ""
    lines: tuple[int, int] | None = None
    new_section: bool = False

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"file": self.file}
        if self.section:
            d["section"] = self.section
        if self.lines:
            d["lines"] = list(self.lines)
        if self.new_section:
            d["new_section"] = True
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Location:
        lines = d.get("lines")
        return cls(d["file"], d.get("section", "") or "", tuple(lines) if lines else None, bool(d.get("new_section", False)))


@dataclass(frozen=True)
class Attribution:
    category_issue: tuple[str, str]
    defect_kind: str
    location: Location
    evidence_case_ids: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "category_issue": ":".join(self.category_issue),
            "defect_kind": self.defect_kind,
            "location": self.location.to_dict(),
            "evidence_case_ids": list(self.evidence_case_ids),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Attribution:
        return cls(parse_issue_key(d["category_issue"]), d["defect_kind"], Location.from_dict(d["location"]), tuple(d["evidence_case_ids"]))


@dataclass(frozen=True)
class PlanItem:
    priority: int
    addresses: tuple[tuple[str, int], ...]
    locations: tuple[Location, ...]
    change_description: str
    modifications: tuple[str, ...] = ()
    needs_knowledge_search: bool = False
    search_queries: tuple[str, ...] = ()
    needs_examples: bool = False
    expected_impact: str = ""
    risk: str = "low"
    defect_kind: str = "missing"

    def __post_init__(self) -> None:
        if self.priority < 1:
            raise ValueError("priority must be positive")
        if not self.addresses:
            raise ValueError("addresses must be nonempty")
        if self.risk not in RISKS:
            raise ValueError(f"risk must be one of {RISKS}")
        if self.defect_kind not in DEFECT_KINDS:
            raise ValueError(f"defect_kind must be one of {DEFECT_KINDS}")

    @property
    def categories(self) -> list[str]:
        out: list[str] = []
        for key, _ in self.addresses:
            c = key.split(":", 1)[0]
            if c not in out:
                out.append(c)
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "priority": self.priority,
            "addresses": [{"issue": k, "count": n} for k, n in self.addresses],
            "locations": [loc.to_dict() for loc in self.locations],
            "change_description": self.change_description,
            "modifications": list(self.modifications),
            "needs_knowledge_search": self.needs_knowledge_search,
            "search_queries": list(self.search_queries),
            "needs_examples": self.needs_examples,
            "expected_impact": self.expected_impact,
            "risk": self.risk,
            "defect_kind": self.defect_kind,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> PlanItem:
        return cls(
            int(d["priority"]),
            tuple((":".join(parse_issue_key(a["issue"])), int(a.get("count", 0))) for a in d["addresses"]),
            tuple(Location.from_dict(x) for x in d.get("locations", [])),
            d["change_description"],
            tuple(d.get("modifications", [])),
            bool(d.get("needs_knowledge_search", False)),
            tuple(d.get("search_queries", [])),
            bool(d.get("needs_examples", False)),
            d.get("expected_impact", ""),
            d.get("risk", "low"),
            d.get("defect_kind", "missing"),
        )


@dataclass
class DiagnosticReport:
    skill_version: int
    overview: dict[str, Any]
    analyses: list[dict[str, Any]]
    attributions: list[Attribution]
    plan: list[PlanItem]
    audit: list[dict[str, Any]] = field(default_factory=list)
    steps: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "skill_version": self.skill_version,
            "overview": self.overview,
            "analyses": self.analyses,
            "attributions": [a.to_dict() for a in self.attributions],
            "plan": [p.to_dict() for p in self.plan],
            "audit": self.audit,
            "steps": self.steps,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> DiagnosticReport:
        return cls(
            d["skill_version"],
            dict(d["overview"]),
            list(d["analyses"]),
            [Attribution.from_dict(a) for a in d["attributions"]],
            [PlanItem.from_dict(p) for p in d["plan"]],
            list(d.get("audit", [])),
            int(d.get("steps", 0)),
        )


def load_plan(data: Sequence[Mapping[str, Any]]) -> list[PlanItem]:
    return [PlanItem.from_dict(d) for d in data]


# --------------------------------------------------------------------------
# validation


def _skill_path(file: str) -> str:
    return normalize_path(file, SKILL_ROOT)


def validate_location(vfs: Vfs, loc: Mapping[str, Any] | Location) -> str | None:
    """None when the location resolves in the skill, else the reason it does not."""
    loc = loc if isinstance(loc, Location) else Location.from_dict(loc)
    path = _skill_path(loc.file)
    if not path.startswith(SKILL_ROOT + "/"):
        return f"{loc.file}: outside the skill package"
    exists = vfs.is_file(path)
    if loc.new_section:
        if not loc.section:
            return f"{loc.file}: new_section needs a section title"
        return None if exists or path.startswith(SKILL_ROOT + "/references/") else f"{loc.file}: file not found"
    if not exists:
        return f"{loc.file}: file not found"
    if loc.section:
        pattern = r"^#{1,6}\s+" + re.escape(loc.section.strip()) + r"\s*$"
        hits = vfs.grep(pattern, path, ignore_case=True)
        if not hits.success or not [h for h in hits.data if h.path == path]:
            return f"{loc.file}: no heading {loc.section!r}"
    if loc.lines:
        a, b = loc.lines
        n = count_lines(vfs.read_file(path).data)
        if not 1 <= a <= b <= n:
            return f"{loc.file}: lines {a}-{b} outside 1-{n}"
    return None


def _issue_problems(keys: Sequence[str], report: AggregatedReport) -> list[str]:
    known = report.issue_counts()
    out = []
    for k in keys:
        cat, issue = parse_issue_key(k)
        if (cat, issue) not in known:
            out.append(f"issue {k!r} does not occur in the aggregated report")
    return out


def check_attribution(d: Mapping[str, Any], vfs: Vfs, report: AggregatedReport) -> list[str]:
    problems = _issue_problems([d["category_issue"]], report)
    loc = validate_location(vfs, d["location"])
    if loc:
        problems.append(loc)
    ids = set(report.case_ids())
    if not [c for c in d["evidence_case_ids"] if c in ids]:
        problems.append("evidence_case_ids must cite at least one case from the report")
    return problems


def check_plan_item(d: Mapping[str, Any], vfs: Vfs, report: AggregatedReport) -> list[str]:
    if not d["addresses"]:
        return ["addresses must be nonempty"]
    problems = _issue_problems([a["issue"] for a in d["addresses"]], report)
    if not d["locations"]:
        problems.append("at least one location is required")
    for loc in d["locations"]:
        p = validate_location(vfs, loc)
        if p:
            problems.append(p)
    return problems


# --------------------------------------------------------------------------
# session


def _table_text() -> str:
    rows = [f"- {c}:{i} -> {t.description} ({t.defect_kind})" for (c, i), t in list(ATTRIBUTION_TABLE.items())]
    return "\n".join(rows)


DIAGNOSE_SYSTEM = f"""\
You diagnose why a support skill produces bad replies. The skill lives under
/skill (SKILL.md, references/) and the aggregated failure analysis under
/analysis (overview.json plus one file per failure category).

Work in four stages: understand the skill's structure, collect evidence from
the category files, attribute each issue to a skill location with a defect
kind (missing, insufficient or incorrect), then write a prioritized plan.

Reply with one JSON object per step, choosing an action:
  read_file {{"path"}}, grep {{"pattern", "path"}}, list {{"path"}}, head {{"path", "n"}},
  submit_attributions {{"attributions": [...]}}, submit_plan {{"plan": [...]}}.
Locations name a file relative to /skill plus a section heading or a 1-based
line range; use "new_section": true for a section that does not exist yet.
Only cite issues and case ids that appear in the analysis files. Order the
plan by impact (cases addressed) first and risk second; priority 1 is highest.

Typical issue-to-defect mappings:
{_table_text()}
"""


def _observe(vfs: Vfs, step: Mapping[str, Any]) -> str:
    action = step["action"]
    path = step.get("path") or "/"
    if action == "read_file":
        r = vfs.read_file(path)
        return f"Contents of {path}:\n{r.data}" if r.success else f"read_file failed ({r.error}): {r.message}"
    if action == "head":
        r = vfs.head(path, int(step.get("n", 20)))
        return f"First lines of {path}:\n{r.data}" if r.success else f"head failed ({r.error}): {r.message}"
    if action == "list":
        r = vfs.list(path)
        return f"Entries in {path}:\n" + "\n".join(r.data) if r.success else f"list failed ({r.error}): {r.message}"
    r = vfs.grep(step.get("pattern", ""), path)
    if not r.success:
        return f"grep failed ({r.error}): {r.message}"
    hits = [f"{h.path}:{h.line_number}: {h.line}" for h in r.data[:50]]
    return f"{len(r.data)} matches" + (":\n" + "\n".join(hits) if hits else "")


def prepare_vfs(skill: SkillPackage, report: AggregatedReport, vfs: Vfs | None = None) -> Vfs:
    vfs = vfs or Vfs()
    if not vfs.is_file(normalize_path(SKILL_MD, SKILL_ROOT)):
        skill.write_to(vfs, SKILL_ROOT)
    vfs.write_file(f"{ANALYSIS_ROOT}/overview.json", json.dumps(overview(report), ensure_ascii=False, indent=1) + "\n")
    for agg in report.categories:
        vfs.write_file(f"{ANALYSIS_ROOT}/{agg.category}.json", json.dumps(category_file(agg, report), ensure_ascii=False, indent=1) + "\n")
    return vfs


def overview(report: AggregatedReport) -> dict[str, Any]:
    return {
        "run_id": report.run_id,
        "skill_version": report.skill_version,
        "n_cases": report.n_cases,
        "category_distribution": {
            c.category: {"count": c.case_count, **dict(c.severity_distribution)} for c in report.categories
        },
        "top_issues": list(report.top_issue_summary[:10]),
    }


def category_analyses(report: AggregatedReport, attributions: Sequence[Attribution]) -> list[dict[str, Any]]:
    out = []
    for c in report.categories:
        out.append(
            {
                "category": c.category,
                "case_count": c.case_count,
                "severity_distribution": dict(c.severity_distribution),
                "issues": [
                    {"issue": i, "count": n, "likely_defect": default_attribution(c.category, i).description}
                    for i, n in c.issue_type_frequencies.items()
                ],
                "attributions": [a.to_dict() for a in attributions if a.category_issue[0] == c.category],
                "representative_cases": [r.case_id for r in c.representative_cases],
            }
        )
    return out


def diagnose(
    gateway: Gateway,
    report: AggregatedReport,
    skill: SkillPackage,
    vfs: Vfs | None = None,
    max_steps: int = DEFAULT_MAX_STEPS,
    tag: str | None = None,
) -> DiagnosticReport:
    if not report.categories:
        raise DiagnoseError("empty_plan", "aggregated report has no failure categories")
    vfs = prepare_vfs(skill, report, vfs)
    tag = tag or f"diagnose:v{skill.version}"
    files = sorted(vfs.files("/"))
    first = (
        "Diagnose this skill.\n```json\n"
        + json.dumps({"overview": overview(report), "files": files}, ensure_ascii=False, indent=1)
        + "\n```"
    )
    messages: list[Message] = [Message("system", DIAGNOSE_SYSTEM), Message("user", first)]
    attributions: list[Attribution] = []
    audit: list[dict[str, Any]] = []
    bounced_attr = bounced_plan = False
    counts = report.issue_counts()
    for step_no in range(1, max_steps + 1):
        req = ChatRequest(tuple(messages), tag, "diagnostician_step")
        try:
            resp = gateway.complete(req)
        except LLMError as exc:
            if exc.code != "schema_violation":
                raise
            raise DiagnoseError("schema_violation", str(exc)) from exc
        step = resp.parsed
        messages.append(Message("assistant", json.dumps(step, ensure_ascii=False, sort_keys=True)))
        action = step["action"]
        if action == "submit_attributions":
            bad = []
            for d in step["attributions"]:
                problems = check_attribution(d, vfs, report)
                if problems:
                    bad.append((d, problems))
                    continue
                ids = set(report.case_ids())
                a = Attribution.from_dict(d)
                attributions.append(Attribution(a.category_issue, a.defect_kind, a.location, tuple(c for c in a.evidence_case_ids if c in ids)))
            if bad and not bounced_attr:
                bounced_attr = True
                obs = "Some attributions were rejected; resubmit corrected versions of these only:\n" + "\n".join(
                    f"- {d['category_issue']}: {'; '.join(p)}" for d, p in bad
                )
            else:
                for d, p in bad:
                    audit.append({"kind": "attribution", "item": dict(d), "problems": p})
                obs = f"Accepted {len(step['attributions']) - len(bad)} attributions. Now submit the plan."
        elif action == "submit_plan":
            good, bad = [], []
            for d in step["plan"]:
                problems = check_plan_item(d, vfs, report)
                (bad if problems else good).append((d, problems))
            if bad and not bounced_plan:
                bounced_plan = True
                obs = "Some plan items were rejected; resubmit the complete plan with these fixed:\n" + "\n".join(
                    f"- priority {d.get('priority')}: {'; '.join(p)}" for d, p in bad
                )
                messages.append(Message("user", obs))
                continue
            for d, p in bad:
                audit.append({"kind": "plan_item", "item": dict(d), "problems": p})
            if not good:
                raise DiagnoseError("empty_plan", "no plan item survived validation")
            ordered = sorted(enumerate(good), key=lambda t: (int(t[1][0]["priority"]), t[0]))
            plan = []
            for new_prio, (_, (d, _)) in enumerate(ordered, 1):
                item = PlanItem.from_dict({**d, "priority": new_prio})
                fixed = tuple((k, counts[parse_issue_key(k)]) for k, _ in item.addresses)
                plan.append(PlanItem(**{**vars(item), "addresses": fixed}))
            return DiagnosticReport(
                skill.version, overview(report), category_analyses(report, attributions), attributions, plan, audit, step_no
            )
        else:
            obs = _observe(vfs, step)
        messages.append(Message("user", obs))
    raise DiagnoseError("step_limit", f"no plan after {max_steps} steps")


def default_plan(report: AggregatedReport, skill: SkillPackage) -> list[dict[str, Any]]:
    """Table-driven plan: one item per category at its default target (used as a prompt seed and in tests)."""
    items = []
    doc = skill.skill_md
    for c in sorted(report.categories, key=lambda c: (-c.case_count, DIMENSIONS.index(c.category))):
        issues = list(c.issue_type_frequencies.items())
        tmpl = default_attribution(c.category, issues[0][0])
        sec = doc.by_kind(tmpl.target)
        loc = {"file": SKILL_MD, "section": sec[0].title} if sec else {"file": SKILL_MD, "section": tmpl.target, "new_section": True}
        if tmpl.target in NEW_SECTION_TARGETS.values() and doc.find(tmpl.target):
            loc = {"file": SKILL_MD, "section": tmpl.target}
        items.append(
            {
                "priority": len(items) + 1,
                "addresses": [{"issue": f"{c.category}:{i}", "count": n} for i, n in issues],
                "locations": [loc],
                "change_description": tmpl.description,
                "modifications": list(c.aggregated_hints),
                "needs_knowledge_search": c.category == "knowledge",
                "search_queries": [],
                "needs_examples": c.category in ("knowledge", "style", "clarification"),
                "expected_impact": f"addresses {c.case_count} cases",
                "risk": "low",
                "defect_kind": tmpl.defect_kind,
            }
        )
    return items
