"""Cold-start skill synthesis from historical tickets.

Four stages: workflow mining (one model call per ticket), tool mining (log
tallies against a registry), knowledge extraction (cited links plus filtered
and condensed search results) and template synthesis of ``SKILL.md``.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .corpus import Ticket, check_anonymization
from .layout import offload_details, slugify
from .llm import Gateway, LLMError
from .schemas import PHASE_TAGS
from .search import KnowledgeSearch, SearchError, SearchResult
from .skill import (
    MAX_CHARS,
    MAX_LINES,
    SkillError,
    TOOL_MENTION,
    SkillPackage,
    ToolSchema,
    dump_tools,
    parse_skill_md,
    validate_package,
)

logger = logging.getLogger(__name__)

FAQ_SHARE = 0.05
CASE_TYPE_RANGE = (4, 8)
PROVENANCE_IDS = 5


class CreatorError(Exception):
    def __init__(self, code: str, message: str = "") -> None:
        super().__init__(message or code)
        self.code = code


# --------------------------------------------------------------------------
# workflow mining


@dataclass(frozen=True)
class PathStep:
    tag: str
    step: str
    condition: str = ""
    tool: str = ""


@dataclass(frozen=True)
class WorkflowRecord:
    ticket_id: str
    core_issue: str
    case_type: str
    resolution_path: tuple[PathStep, ...]
    accumulated_experience: tuple[tuple[str, str], ...] = ()
    exemplar_responses: tuple[tuple[str, str], ...] = ()
    failure_causes: tuple[tuple[str, str, str], ...] = ()

    def texts(self) -> list[str]:
        out = [self.core_issue, self.case_type]
        for s in self.resolution_path:
            out += [s.step, s.condition]
        out += [t for t, _ in self.accumulated_experience]
        for r, ctx in self.exemplar_responses:
            out += [r, ctx]
        for triple in self.failure_causes:
            out += list(triple)
        return [t for t in out if t]

    def to_dict(self) -> dict[str, Any]:
        return {
            "ticket_id": self.ticket_id,
            "core_issue": self.core_issue,
            "case_type": self.case_type,
            "resolution_path": [vars(s) for s in self.resolution_path],
            "accumulated_experience": [{"text": t, "polarity": p} for t, p in self.accumulated_experience],
            "exemplar_responses": [{"response": r, "usage_context": c} for r, c in self.exemplar_responses],
            "failure_causes": [{"symptom": a, "cause": b, "resolution": c} for a, b, c in self.failure_causes],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], ticket_id: str | None = None) -> WorkflowRecord:
        return cls(
            ticket_id or d["ticket_id"],
            d["core_issue"].strip(),
            d["case_type"].strip(),
            tuple(
                PathStep(s["tag"], s["step"].strip(), s.get("condition", "").strip(), s.get("tool", "").strip())
                for s in d["resolution_path"]
            ),
            tuple((e["text"].strip(), e["polarity"]) for e in d.get("accumulated_experience", [])),
            tuple((e["response"].strip(), e["usage_context"].strip()) for e in d.get("exemplar_responses", [])),
            tuple((f["symptom"].strip(), f["cause"].strip(), f["resolution"].strip()) for f in d.get("failure_causes", [])),
        )


MINING_SYSTEM = """\
You turn one support ticket into a structured resolution record. Work out how
the human agent reasoned and acted:
- core_issue: a self-contained description of the customer's problem.
- case_type: a short label for the kind of problem (reuse labels consistently).
- resolution_path: the ordered steps, each tagged clarify, gather, diagnose,
  resolve or escalate; add a condition when a step only applies in some
  situations and name the tool when one was used.
- accumulated_experience: reusable lessons marked positive or negative.
- exemplar_responses: strong verbatim agent replies with when to use them.
- failure_causes: symptom, cause and resolution triples seen in the ticket.
Keep typed placeholders such as <DOMAIN_1> as they are and never write real
names, phone numbers, e-mail addresses or domains. Reply with one JSON object.
"""


def ticket_payload(ticket: Ticket) -> dict[str, Any]:
    return {
        "ticket_id": ticket.id,
        "scenario": ticket.scenario,
        "summary": ticket.summary,
        "dialogue": [{"role": t.role, "text": t.text} for t in ticket.turns],
        "operation_log": [name for name, _ in ticket.operation_log],
    }


def mine_workflow(gateway: Gateway, ticket: Ticket, tag: str | None = None) -> WorkflowRecord:
    user = "Ticket:\n```json\n" + json.dumps(ticket_payload(ticket), ensure_ascii=False, indent=1) + "\n```"
    resp = gateway.ask(tag or f"create:mine:{ticket.id}", MINING_SYSTEM, user, "workflow_record")
    record = WorkflowRecord.from_dict(resp.parsed, ticket.id)
    for text in record.texts():
        leaks = check_anonymization(text)
        if leaks:
            raise CreatorError("anonymization_leak", f"ticket {ticket.id}: {leaks[0].kind} {leaks[0].text!r}")
    return record


def mine_workflows(
    gateway: Gateway, tickets: Sequence[Ticket], concurrency: int = 4, warnings: list[str] | None = None
) -> list[WorkflowRecord]:
    """Mine every ticket; tickets whose record is unusable are skipped with a warning."""

    def one(t: Ticket) -> WorkflowRecord | str:
        try:
            return mine_workflow(gateway, t)
        except CreatorError as exc:
            return f"{t.id}: {exc.code}: {exc}"
        except LLMError as exc:
            if exc.code != "schema_violation":
                raise
            return f"{t.id}: schema_violation"

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        results = list(pool.map(one, tickets))
    out = []
    for r in results:
        if isinstance(r, str):
            logger.warning("skipping ticket %s", r)
            if warnings is not None:
                warnings.append(f"workflow mining skipped {r}")
        else:
            out.append(r)
    return out


# --------------------------------------------------------------------------
# tool mining


def default_tool_threshold(n_tickets: int) -> int:
    return max(2, math.ceil(0.05 * n_tickets))


@dataclass(frozen=True)
class ToolStats:
    counts: Mapping[str, int]
    cooccurrence: Mapping[tuple[str, str], int]
    threshold: int

    @property
    def selected(self) -> list[str]:
        return sorted(t for t, n in self.counts.items() if n >= self.threshold)


def mine_tools(
    tickets: Iterable[Ticket],
    registry: Mapping[str, ToolSchema],
    threshold: int | None = None,
    case_types: Mapping[str, str] | None = None,
    warnings: list[str] | None = None,
) -> tuple[ToolStats, list[ToolSchema]]:
    """Tally operation logs and select registered tools at or above ``threshold``."""
    tickets = list(tickets)
    case_types = case_types or {}
    counts: Counter[str] = Counter()
    co: Counter[tuple[str, str]] = Counter()
    for t in tickets:
        for name, _ in t.operation_log:
            counts[name] += 1
            if t.id in case_types:
                co[(name, case_types[t.id])] += 1
    stats = ToolStats(dict(sorted(counts.items())), dict(sorted(co.items())), threshold or default_tool_threshold(len(tickets)))
    chosen = []
    for name in stats.selected:
        if name not in registry:
            msg = f"tool {name!r} appears in operation logs but not in the registry; excluded"
            logger.warning(msg)
            if warnings is not None:
                warnings.append(msg)
            continue
        top = sorted(((n, ct) for (tool, ct), n in co.items() if tool == name), key=lambda x: (-x[0], x[1]))[:3]
        base = registry[name]
        chosen.append(ToolSchema(base.name, base.description, base.parameters, base.returns, tuple(ct for _, ct in top)))
    return stats, chosen


# --------------------------------------------------------------------------
# knowledge extraction


@dataclass(frozen=True)
class KnowledgeDoc:
    filename: str
    title: str
    points: tuple[str, ...]
    urls: tuple[str, ...]
    case_types: tuple[str, ...]
    core: bool = False

    def render(self) -> str:
        lines = [f"# {self.title}", ""]
        lines += [f"- {p}" for p in self.points]
        if self.urls:
            lines += ["", "Sources:"] + [f"- {u}" for u in self.urls]
        return "\n".join(lines) + "\n"


@dataclass
class KnowledgeBundle:
    cited: dict[str, list[str]] = field(default_factory=dict)  # case type -> urls
    docs: list[KnowledgeDoc] = field(default_factory=list)
    degraded: bool = False

    @property
    def core_docs(self) -> list[KnowledgeDoc]:
        return [d for d in self.docs if d.core]

    def cited_urls(self) -> list[str]:
        seen: list[str] = []
        for urls in self.cited.values():
            for u in urls:
                if u not in seen:
                    seen.append(u)
        return seen

    def render_cited(self) -> str:
        lines = ["# Ticket-cited references", ""]
        for ct in sorted(self.cited):
            lines.append(f"## {ct}")
            lines += [f"- {u}" for u in self.cited[ct]]
            lines.append("")
        return "\n".join(lines)


RELEVANCE_SYSTEM = (
    "Decide whether a documentation article helps resolve a given kind of support case. "
    'Reply with JSON: {"relevant": true|false, "reason": "..."}'
)
CONDENSE_SYSTEM = (
    "Condense a documentation article into the few facts a support agent needs, one short sentence each. "
    'Reply with JSON: {"title": "...", "key_points": ["..."]}'
)


def group_cited_refs(tickets: Iterable[Ticket], case_types: Mapping[str, str]) -> dict[str, list[str]]:
    """Deduplicate cited links per case type, keeping first-seen order."""
    out: dict[str, list[str]] = {}
    for t in tickets:
        ct = case_types.get(t.id)
        if ct is None:
            continue
        bucket = out.setdefault(ct, [])
        for url in t.cited_refs:
            if url not in bucket:
                bucket.append(url)
    return dict(sorted(out.items()))


def extract_knowledge(
    gateway: Gateway,
    scenario: str,
    records: Sequence[WorkflowRecord],
    search: KnowledgeSearch,
    tickets: Sequence[Ticket] = (),
    limit: int = 3,
) -> KnowledgeBundle:
    """Collect cited links and search results, keeping relevant articles only.

    An article retrieved for two or more case types, or a link cited under two
    or more case types, is flagged core and surfaces in SKILL.md.
    """
    case_types = {r.ticket_id: r.case_type for r in records}
    bundle = KnowledgeBundle(group_cited_refs(tickets, case_types))
    hits: dict[str, tuple[SearchResult, list[str]]] = {}
    for ct in sorted({r.case_type for r in records}):
        query = f"{scenario} {ct}"
        try:
            results = search.search(query, limit)
        except SearchError as exc:
            logger.warning("knowledge search failed (%s); continuing with cited references only", exc)
            bundle.degraded = True
            break
        for i, res in enumerate(results):
            key = res.url or res.title
            user = json.dumps({"case_type": ct, "scenario": scenario, "title": res.title, "snippet": res.snippet}, ensure_ascii=False)
            try:
                verdict = gateway.ask(f"create:relevance:{slugify(ct)}:{slugify(key)}", RELEVANCE_SYSTEM, user, "relevance")
            except LLMError as exc:
                if exc.code != "schema_violation":
                    raise
                continue
            if verdict.parsed["relevant"]:
                hits.setdefault(key, (res, []))[1].append(ct)
    for key in sorted(hits):
        res, cts = hits[key]
        user = json.dumps({"title": res.title, "url": res.url, "body": res.body}, ensure_ascii=False)
        try:
            c = gateway.ask(f"create:condense:{slugify(key)}", CONDENSE_SYSTEM, user, "condensed_article")
        except LLMError as exc:
            if exc.code != "schema_violation":
                raise
            continue
        points = tuple(p.strip() for p in c.parsed["key_points"] if p.strip())
        if not points:
            continue
        bundle.docs.append(
            KnowledgeDoc(f"knowledge_{slugify(c.parsed['title'])}.md", c.parsed["title"], points, (res.url,) if res.url else (), tuple(cts), len(cts) >= 2)
        )
    cited_by: dict[str, set[str]] = defaultdict(set)
    for ct, urls in bundle.cited.items():
        for u in urls:
            cited_by[u].add(ct)
    core_urls = {u for u, cts in cited_by.items() if len(cts) >= 2}
    bundle.docs = [
        d if d.core or not core_urls.intersection(d.urls) else KnowledgeDoc(d.filename, d.title, d.points, d.urls, d.case_types, True)
        for d in bundle.docs
    ]
    return bundle


# --------------------------------------------------------------------------
# clustering and workflow merge


@dataclass(frozen=True)
class WorkflowNode:
    tag: str
    step: str
    tool: str = ""
    branches: tuple[tuple[str, str, str], ...] = ()  # (condition, step, tool)


@dataclass(frozen=True)
class CaseTypeCluster:
    label: str
    member_ticket_ids: tuple[str, ...]
    frequency: float
    canonical_workflow: tuple[WorkflowNode, ...]
    records: tuple[WorkflowRecord, ...] = ()

    @property
    def is_faq(self) -> bool:
        return self.frequency < FAQ_SHARE


def _norm(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip().lower()


def merge_workflows(records: Sequence[WorkflowRecord], max_per_phase: int = 2) -> tuple[WorkflowNode, ...]:
    """Union of the records' step graphs keyed by phase tag.

    Within a phase the most frequent unconditional steps become nodes and
    conditional steps become branches of the phase's first node.
    """
    main: dict[str, Counter[str]] = defaultdict(Counter)
    branch: dict[str, Counter[tuple[str, str]]] = defaultdict(Counter)
    display: dict[str, str] = {}
    tools: dict[str, str] = {}
    for r in records:
        for s in r.resolution_path:
            key = _norm(s.step)
            display.setdefault(key, s.step)
            if s.tool:
                tools.setdefault(key, s.tool)
            if s.condition:
                branch[s.tag][(_norm(s.condition), key)] += 1
                display.setdefault(_norm(s.condition), s.condition)
            else:
                main[s.tag][key] += 1
    nodes = []
    for tag in PHASE_TAGS:
        steps = sorted(main[tag].items(), key=lambda kv: (-kv[1], kv[0]))[:max_per_phase]
        brs = sorted(branch[tag].items(), key=lambda kv: (-kv[1], kv[0]))[:3]
        br = tuple((display[c], display[s], tools.get(s, "")) for (c, s), _ in brs)
        if not steps and br:
            nodes.append(WorkflowNode(tag, "Check which of these situations applies", "", br))
            continue
        for i, (key, _) in enumerate(steps):
            nodes.append(WorkflowNode(tag, display[key], tools.get(key, ""), br if i == 0 else ()))
    return tuple(nodes)


def build_clusters(records: Sequence[WorkflowRecord], n_tickets: int | None = None) -> list[CaseTypeCluster]:
    """Group records by exact case-type label (case and whitespace folded)."""
    if not records:
        raise CreatorError("no_records", "no workflow records to cluster")
    total = n_tickets or len(records)
    groups: dict[str, list[WorkflowRecord]] = defaultdict(list)
    labels: dict[str, str] = {}
    for r in records:
        key = _norm(r.case_type)
        labels.setdefault(key, r.case_type)
        groups[key].append(r)
    clusters = [
        CaseTypeCluster(labels[k], tuple(r.ticket_id for r in rs), len(rs) / total, merge_workflows(rs), tuple(rs))
        for k, rs in groups.items()
    ]
    clusters.sort(key=lambda c: (-len(c.member_ticket_ids), c.label))
    handled = sum(1 for c in clusters if not c.is_faq)
    lo, hi = CASE_TYPE_RANGE
    if not lo <= handled <= hi:
        logger.warning("%d case types survive the %.0f%% cut; the usual range is %d-%d", handled, 100 * FAQ_SHARE, lo, hi)
    return clusters


# --------------------------------------------------------------------------
# synthesis


@dataclass(frozen=True)
class SynthesisOptions:
    name: str = "skill"
    scenario: str = ""
    description: str = ""
    min_experience_share: float = 0.25
    max_experiences: int = 4
    max_exemplars: int = 2
    max_failure_causes: int = 3
    max_lines: int = MAX_LINES
    max_chars: int = MAX_CHARS


def ranked_experiences(records: Sequence[WorkflowRecord], min_share: float, cap: int) -> list[tuple[str, str]]:
    counts: Counter[str] = Counter()
    first: dict[str, tuple[str, str]] = {}
    for r in records:
        seen = set()
        for text, pol in r.accumulated_experience:
            k = _norm(text)
            if k in seen:
                continue
            seen.add(k)
            counts[k] += 1
            first.setdefault(k, (text, pol))
    need = max(1, math.ceil(min_share * len(records)))
    ranked = sorted((kv for kv in counts.items() if kv[1] >= need), key=lambda kv: (-kv[1], kv[0]))
    return [first[k] for k, _ in ranked[:cap]]


def _tool_ref(tool: str, selected: set[str]) -> str:
    if not tool:
        return ""
    return f" (call `{tool}`)" if tool in selected else f" (tool: {tool})"


def demote_tool_mentions(text: str, selected: set[str]) -> str:
    """Drop the backticks from call-style mentions of tools the skill does not declare."""

    def fix(m: re.Match[str]) -> str:
        name = m.group(1)
        return m.group(0) if name in selected else m.group(0).replace(f"`{name}`", name)

    return TOOL_MENTION.sub(fix, text)


def render_handling(cluster: CaseTypeCluster, selected: set[str], opts: SynthesisOptions, scenario: str) -> list[str]:
    ids = cluster.member_ticket_ids
    prov = ", ".join(ids[:PROVENANCE_IDS]) + (f" (+{len(ids) - PROVENANCE_IDS} more)" if len(ids) > PROVENANCE_IDS else "")
    issue = Counter(r.core_issue for r in cluster.records).most_common(1)[0][0]
    lines = [
        f"## Case Type: {cluster.label}",
        f"<!-- provenance: {prov} -->",
        "",
        f"Applies when: {issue} ({len(ids)} tickets, {100 * cluster.frequency:.0f}% of the scenario)",
        "",
        "### Workflow",
    ]
    branches = 0
    for i, node in enumerate(cluster.canonical_workflow, 1):
        lines.append(f"{i}. [{node.tag}] {node.step}{_tool_ref(node.tool, selected)}")
        for cond, step, tool in node.branches:
            lines.append(f"   - If {cond.rstrip('.')}: {step}{_tool_ref(tool, selected)}")
            branches += 1
    if branches == 0:
        lines.append("   - If the request does not fit this case type: return to Case-Type Triage")
    exp = ranked_experiences(cluster.records, opts.min_experience_share, opts.max_experiences)
    if exp:
        lines += ["", "### Key Experience"]
        lines += [f"- {'Do' if pol == 'positive' else 'Avoid'}: {text}" for text, pol in exp]
    causes: list[tuple[str, str, str]] = []
    for r in cluster.records:
        for fc in r.failure_causes:
            if fc not in causes:
                causes.append(fc)
    if causes:
        lines += ["", "### Failure Causes"]
        lines += [f"- Symptom: {a} Cause: {b} Resolution: {c}" for a, b, c in causes[: opts.max_failure_causes]]
    ex: list[tuple[str, str]] = []
    for r in cluster.records:
        for e in r.exemplar_responses:
            if e not in ex:
                ex.append(e)
    if ex:
        lines += ["", "### Exemplar Responses"]
        lines += [f'- "{resp}" (use when: {ctx})' for resp, ctx in ex[: opts.max_exemplars]]
    lines += [
        "",
        "### Escalation",
        f"- If the workflow above does not resolve the issue, escalate to second-line {scenario or 'product'} support "
        "with the evidence collected so far.",
        "",
    ]
    return lines


def synthesize_skill(
    clusters: Sequence[CaseTypeCluster],
    tools: Sequence[ToolSchema],
    knowledge: KnowledgeBundle | None = None,
    opts: SynthesisOptions | None = None,
) -> SkillPackage:
    """Fill the five-section template and return the v0 package."""
    if not clusters:
        raise CreatorError("no_clusters", "at least one case-type cluster is required")
    opts = opts or SynthesisOptions()
    knowledge = knowledge or KnowledgeBundle()
    selected = {t.name for t in tools}
    handled = [c for c in clusters if not c.is_faq]
    faq = [c for c in clusters if c.is_faq]
    if not handled:
        handled, faq = [clusters[0]], list(clusters[1:])

    lines = [
        "---",
        f"name: {opts.name}",
        f"scenario: {opts.scenario}",
        f"description: {opts.description or f'Troubleshooting skill for {opts.scenario} support tickets'}",
        "---",
        f"# {opts.name}",
        "",
        "## Background Knowledge",
    ]
    per_cluster: dict[str, set[str]] = defaultdict(set)
    shown: dict[str, str] = {}
    for c in clusters:
        for r in c.records:
            for text, _ in r.accumulated_experience:
                per_cluster[_norm(text)].add(c.label)
                shown.setdefault(_norm(text), text)
    shared = sorted(k for k, cs in per_cluster.items() if len(cs) >= 2)
    bg = [f"- {shown[k]}" for k in shared]
    for d in knowledge.core_docs:
        bg += [f"- {p}" for p in d.points]
    lines += bg or ["- See the per-case-type sections below."]
    lines += ["", "## Case-Type Triage"]
    for c in handled:
        lines.append(f'- If the request is about {c.label.lower()}: follow "Case Type: {c.label}"')
    if faq:
        lines.append("- If it matches a rare issue listed in the FAQ: answer from the FAQ entry")
    lines += ["- Otherwise: ask one focused question to identify the case type", ""]
    for c in handled:
        lines += render_handling(c, selected, opts, opts.scenario)
    lines.append("## FAQ")
    if faq:
        for c in faq:
            resolve = next((n.step for n in c.canonical_workflow if n.tag == "resolve"), c.canonical_workflow[0].step if c.canonical_workflow else "")
            issue = c.records[0].core_issue if c.records else c.label
            lines.append(f"- **{c.label}**: {issue} Resolution: {resolve}")
            for text, pol in ranked_experiences(c.records, 0.0, 1):
                lines.append(f"  - {'Do' if pol == 'positive' else 'Avoid'}: {text}")
    else:
        lines.append("- No long-tail issues recorded yet.")
    lines += ["", "## Reference Index"]
    refs: dict[str, str] = {}
    if tools:
        lines.append("- `references/tools.json`: tool schemas")
    for d in knowledge.docs:
        refs[d.filename] = d.render()
        lines.append(f"- `references/{d.filename}`: {d.title}")
    if knowledge.cited:
        refs["cited_references.md"] = knowledge.render_cited()
        lines.append("- `references/cited_references.md`: documentation cited in past tickets")
    # mined prose can name tools that were filtered out of the registry
    text = demote_tool_mentions("\n".join(lines) + "\n", {t.name for t in tools})
    try:
        off = offload_details(text, refs, opts.max_lines, opts.max_chars)
    except SkillError as exc:
        raise CreatorError("budget_unresolvable", str(exc)) from exc
    pkg = SkillPackage(parse_skill_md(off.text), tuple(tools), dict(sorted(off.references.items())), 0, dump_tools(list(tools)) if tools else None)
    problems = validate_package(pkg)
    if problems:
        raise CreatorError("invalid_skill", "; ".join(f"{v.rule}@{v.where}: {v.message}" for v in problems))
    return pkg


@dataclass
class CreationResult:
    skill: SkillPackage
    records: list[WorkflowRecord]
    clusters: list[CaseTypeCluster]
    tool_stats: ToolStats
    knowledge: KnowledgeBundle
    warnings: list[str]


def create_skill(
    gateway: Gateway,
    tickets: Sequence[Ticket],
    registry: Mapping[str, ToolSchema],
    search: KnowledgeSearch,
    opts: SynthesisOptions,
    tool_threshold: int | None = None,
    concurrency: int = 4,
) -> CreationResult:
    warnings: list[str] = []
    records = mine_workflows(gateway, tickets, concurrency, warnings)
    if not records:
        raise CreatorError("no_records", "workflow mining produced no usable records")
    clusters = build_clusters(records, len(tickets))
    case_types = {r.ticket_id: r.case_type for r in records}
    stats, tools = mine_tools(tickets, registry, tool_threshold, case_types, warnings)
    knowledge = extract_knowledge(gateway, opts.scenario, records, search, tickets)
    if knowledge.degraded:
        warnings.append("knowledge search unavailable; used ticket-cited references only")
    skill = synthesize_skill(clusters, tools, knowledge, opts)
    return CreationResult(skill, records, clusters, stats, knowledge, warnings)


def workflow_branch_count(section_text: str) -> int:
    return len(re.findall(r"^\s*[-*]\s+If [^\n]*:", section_text, flags=re.MULTILINE))


def provenance_ids(section_text: str) -> list[str]:
    m = re.search(r"<!-- provenance: (.*?) -->", section_text)
    if not m:
        return []
    return [x.strip() for x in re.sub(r"\(\+\d+ more\)", "", m.group(1)).split(",") if x.strip()]
