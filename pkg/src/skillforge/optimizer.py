"""Plan execution against the skill VFS.

Edits are additive unless a plan item repairs an ``incorrect`` defect, every
applied edit cites failure evidence, duplicate content is skipped, and the
result must pass validation, the line budget and the additivity check before
it is committed. Any failure restores the pre-edit snapshot.
"""

from __future__ import annotations

import difflib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .aggregator import AggregatedReport
from .analyzer import FailureRecord
from .diagnostician import Location, PlanItem
from .layout import (
    content_end,
    ensure_section,
    find_span,
    is_duplicate,
    offload_details,
    section_spans,
)
from .llm import Gateway, LLMError
from .schemas import RISKS
from .search import KnowledgeSearch, SearchError, SearchResult
from .skill import (
    BACKGROUND,
    FAQ,
    HANDLING,
    MAX_CHARS,
    MAX_LINES,
    REFERENCE_INDEX,
    SKILL_MD,
    TRIAGE,
    SkillError,
    SkillPackage,
    commit_version,
    parse_skill_md,
    validate_package,
)
from .vfs import Vfs, normalize_path

logger = logging.getLogger(__name__)

INSERT_AFTER = "insert_after"
APPEND_SECTION = "append_section"
NEW_REFERENCE_FILE = "new_reference_file"
REPLACE_SPAN = "replace_span"
ACTION_KINDS = (INSERT_AFTER, APPEND_SECTION, NEW_REFERENCE_FILE, REPLACE_SPAN)

DUPLICATE = "duplicate"
VALIDATION_FAILURE = "validation_failure"
RISK_GATE = "risk_gate"

HIGH_FREQUENCY_STABLE = "high_frequency_stable"
LONG_TAIL = "long_tail"
OFFICIAL_DOC = "official_doc"
PLACEMENT = {HIGH_FREQUENCY_STABLE: "skill_section", LONG_TAIL: "faq", OFFICIAL_DOC: "link_citation"}
HIGH_FREQUENCY_MIN = 5

RESPONSE_GUIDELINES = "Response Guidelines"
BACKGROUND_TITLE = "Background Knowledge"
FAQ_TITLE = "FAQ"
CONTENT_KINDS = ("knowledge", "tool_rule", "clarification_rule", "style_rule", "example", "faq_entry")


class OptimizerError(Exception):
    def __init__(self, code: str, message: str = "") -> None:
        super().__init__(message or code)
        self.code = code


@dataclass(frozen=True)
class EditAction:
    kind: str
    file: str
    anchor: str
    content: str
    plan_item_ref: int
    justification: tuple[str, ...]
    content_kind: str = ""
    replaced: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ACTION_KINDS:
            raise ValueError(f"unknown action kind {self.kind!r}")

    def to_dict(self) -> dict[str, Any]:
        d = {
            "kind": self.kind,
            "file": self.file,
            "anchor": self.anchor,
            "content": self.content,
            "plan_item_ref": self.plan_item_ref,
            "justification": list(self.justification),
            "content_kind": self.content_kind,
        }
        if self.replaced:
            d["replaced"] = self.replaced
        return d


@dataclass(frozen=True)
class Skipped:
    plan_item_ref: int
    reason: str
    detail: str = ""
    action: EditAction | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "plan_item_ref": self.plan_item_ref,
            "reason": self.reason,
            "detail": self.detail,
            "action": self.action.to_dict() if self.action else None,
        }


@dataclass(frozen=True)
class KnowledgeItem:
    text: str
    frequency_class: str
    source_url: str = ""
    title: str = ""

    @property
    def placement(self) -> str:
        return PLACEMENT[self.frequency_class]


def classify_knowledge(authoritative: bool, issue_count: int) -> str:
    if authoritative:
        return OFFICIAL_DOC
    return HIGH_FREQUENCY_STABLE if issue_count >= HIGH_FREQUENCY_MIN else LONG_TAIL


# --------------------------------------------------------------------------
# additivity


@dataclass(frozen=True)
class DiffSpan:
    start: int  # 1-based, inclusive, in the old document
    end: int
    lines: tuple[str, ...]


@dataclass(frozen=True)
class AdditivityResult:
    passed: bool
    violations: tuple[DiffSpan, ...] = ()


def deleted_lines(old: Sequence[str], new: Sequence[str]) -> list[int]:
    """Indices of ``old`` lines outside a longest common subsequence with ``new``."""
    lo = 0
    while lo < len(old) and lo < len(new) and old[lo] == new[lo]:
        lo += 1
    hi_o, hi_n = len(old), len(new)
    while hi_o > lo and hi_n > lo and old[hi_o - 1] == new[hi_n - 1]:
        hi_o -= 1
        hi_n -= 1
    a, b = old[lo:hi_o], new[lo:hi_n]
    if not a:
        return []
    if not b:
        return list(range(lo, hi_o))
    # fast path: old middle is a subsequence of new middle
    j = 0
    for line in b:
        if j < len(a) and a[j] == line:
            j += 1
    if j == len(a):
        return []
    n, m = len(a), len(b)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        row, nxt = dp[i], dp[i + 1]
        ai = a[i]
        for k in range(m - 1, -1, -1):
            row[k] = nxt[k + 1] + 1 if ai == b[k] else max(nxt[k], row[k + 1])
    out = []
    i = k = 0
    while i < n and k < m:
        if a[i] == b[k]:
            i += 1
            k += 1
        elif dp[i + 1][k] >= dp[i][k + 1]:
            out.append(lo + i)
            i += 1
        else:
            k += 1
    out.extend(lo + x for x in range(i, n))
    return out


def _spans(indices: Sequence[int], old: Sequence[str]) -> list[DiffSpan]:
    spans: list[DiffSpan] = []
    for i in indices:
        if spans and spans[-1].end == i:
            s = spans[-1]
            spans[-1] = DiffSpan(s.start, i + 1, s.lines + (old[i],))
        else:
            spans.append(DiffSpan(i + 1, i + 1, (old[i],)))
    return spans


def enforce_additivity(
    old_text: str,
    new_text: str,
    actions: Iterable[EditAction] = (),
    plan: Iterable[PlanItem] = (),
    moved_lines: Iterable[str] = (),
) -> AdditivityResult:
    """Pass when every line removed from ``old_text`` is accounted for.

    A removal is accounted for when it belongs to a ``replace_span`` action of
    a plan item whose defect kind is ``incorrect``, or when the line was moved
    into a reference file by the budget offload. Accounting is by line content
    and multiplicity; spans with unaccounted lines are reported.
    """
    old, new = old_text.splitlines(), new_text.splitlines()
    gone = deleted_lines(old, new)
    if not gone:
        return AdditivityResult(True)
    kinds = {p.priority: p.defect_kind for p in plan}
    allowance: Counter[str] = Counter(moved_lines)
    for a in actions:
        if a.kind == REPLACE_SPAN and kinds.get(a.plan_item_ref) == "incorrect":
            removed = Counter(a.replaced.splitlines())
            removed.subtract(Counter(a.content.splitlines()))
            allowance.update({k: v for k, v in removed.items() if v > 0})
    bad = []
    for i in gone:
        if allowance[old[i]] > 0:
            allowance[old[i]] -= 1
        else:
            bad.append(i)
    if not bad:
        return AdditivityResult(True)
    return AdditivityResult(False, tuple(_spans(bad, old)))


def is_subsequence(old_lines: Sequence[str], new_lines: Sequence[str]) -> bool:
    it = iter(new_lines)
    return all(any(x == y for y in it) for x in old_lines)


# --------------------------------------------------------------------------
# placement


@dataclass(frozen=True)
class Placement:
    file: str
    section: str
    line: int  # 0-based index the content is inserted before
    indent: str = ""
    created: bool = False


def _after_children(lines: Sequence[str], i: int, end: int) -> int:
    """Index after line ``i`` and the more-indented lines that follow it."""
    base = len(lines[i]) - len(lines[i].lstrip())
    j = i + 1
    while j < end and lines[j].strip() and (len(lines[j]) - len(lines[j].lstrip())) > base:
        j += 1
    return j


def _section_end(text: str, title: str | None, kind: str | None, create_title: str, before: Sequence[str]) -> tuple[str, Placement]:
    span = find_span(text, title, kind) if (title or kind) else None
    created = False
    if span is None:
        text, span, created = ensure_section(text, create_title, before)
    return text, Placement(SKILL_MD, span.section.title, content_end(text, span), "", created)


def _search_lines(text: str, spans: Sequence[Any], predicate: Any) -> tuple[Any, int] | None:
    lines = text.splitlines()
    for sp in spans:
        for i in range(sp.start + 1, sp.end):
            if predicate(lines[i]):
                return sp, i
    return None


def place_content(text: str, content_kind: str, tool: str = "", section: str = "") -> tuple[str, Placement]:
    """Choose where new content goes; creates a missing target section in template order.

    Returns the (possibly extended) SKILL.md text and the insertion point.
    """
    if content_kind not in CONTENT_KINDS:
        raise OptimizerError("bad_content_kind", content_kind)
    named = find_span(text, section) if section else None
    if content_kind == "knowledge":
        if named is not None and named.section.kind in (BACKGROUND, HANDLING):
            return text, Placement(SKILL_MD, named.section.title, content_end(text, named))
        return _section_end(text, None, BACKGROUND, BACKGROUND_TITLE, (TRIAGE, HANDLING, FAQ, REFERENCE_INDEX))
    if content_kind == "faq_entry":
        return _section_end(text, None, FAQ, FAQ_TITLE, (REFERENCE_INDEX,))
    if content_kind in ("style_rule", "example"):
        return _section_end(text, RESPONSE_GUIDELINES, None, RESPONSE_GUIDELINES, (FAQ, REFERENCE_INDEX))
    spans = section_spans(text)
    handling = [sp for sp in spans if sp.section.kind == HANDLING]
    ordered = ([named] if named is not None else []) + [sp for sp in handling if named is None or sp.index != named.index]
    lines = text.splitlines()
    if content_kind == "tool_rule":
        hit = None
        if tool:
            hit = _search_lines(text, ordered, lambda ln: f"`{tool}`" in ln) or _search_lines(text, ordered, lambda ln: tool in ln)
        if hit is not None:
            sp, i = hit
            indent = " " * (len(lines[i]) - len(lines[i].lstrip()) + 3)
            return text, Placement(SKILL_MD, sp.section.title, _after_children(lines, i, sp.end), indent)
    else:  # clarification_rule
        hit = _search_lines(text, ordered, lambda ln: "[gather]" in ln.lower()) or _search_lines(
            text, ordered, lambda ln: "[clarify]" in ln.lower()
        )
        if hit is not None:
            sp, i = hit
            indent = " " * (len(lines[i]) - len(lines[i].lstrip()) + 3)
            return text, Placement(SKILL_MD, sp.section.title, _after_children(lines, i, sp.end), indent)
        triage = find_span(text, kind=TRIAGE)
        if triage is not None and named is None:
            return text, Placement(SKILL_MD, triage.section.title, content_end(text, triage))
    if ordered:
        sp = ordered[0]
        return text, Placement(SKILL_MD, sp.section.title, content_end(text, sp))
    return _section_end(text, None, BACKGROUND, BACKGROUND_TITLE, (TRIAGE, FAQ, REFERENCE_INDEX))


def format_block(content: str, indent: str = "", label: str = "") -> list[str]:
    raw = [ln.rstrip() for ln in content.strip().splitlines() if ln.strip()]
    if not raw:
        return []
    first = raw[0].lstrip()
    if first[:2] in ("- ", "* ", "+ "):
        first = first[2:]
    out = [f"{indent}- {label}{first}"]
    out += [f"{indent}  {ln.strip()}" for ln in raw[1:]]
    return out


# --------------------------------------------------------------------------
# plan handling


def merge_items(plan: Sequence[PlanItem]) -> tuple[list[PlanItem], list[dict[str, Any]]]:
    """Merge items that share their first location, lead category and defect kind."""
    groups: dict[tuple[Any, ...], list[PlanItem]] = {}
    for item in sorted(plan, key=lambda p: p.priority):
        loc = item.locations[0] if item.locations else Location(SKILL_MD)
        key = (normalize_path(loc.file, "/"), loc.section.strip().lower(), item.categories[0], item.defect_kind)
        groups.setdefault(key, []).append(item)
    merged, notes = [], []
    for items in groups.values():
        if len(items) == 1:
            merged.append(items[0])
            continue
        head = items[0]
        addresses: dict[str, int] = {}
        for it in items:
            for k, n in it.addresses:
                addresses[k] = max(addresses.get(k, 0), n)
        def union(attr: str) -> tuple[Any, ...]:
            out: list[Any] = []
            for it in items:
                for v in getattr(it, attr):
                    if v not in out:
                        out.append(v)
            return tuple(out)

        merged.append(
            PlanItem(
                head.priority,
                tuple(addresses.items()),
                union("locations"),
                "; ".join(it.change_description for it in items),
                union("modifications"),
                any(it.needs_knowledge_search for it in items),
                union("search_queries"),
                any(it.needs_examples for it in items),
                "; ".join(it.expected_impact for it in items if it.expected_impact),
                max((it.risk for it in items), key=RISKS.index),
                head.defect_kind,
            )
        )
        notes.append({"merged_into": head.priority, "priorities": [it.priority for it in items]})
    merged.sort(key=lambda p: p.priority)
    return merged, notes


OPTIMIZE_SYSTEM = """\
You edit a support skill to carry out one item of an optimization plan.
Principles: change only what the item needs; add rather than delete, and only
replace text when the item fixes an incorrect statement; tie every edit to the
case ids in the evidence.
Placement is decided by content_kind: knowledge (background facts), tool_rule
(when and how to call a tool, name it in "tool"), clarification_rule (what to
ask or not ask), style_rule (response style), example (a short reply phrasing
that illustrates the preceding rule) and faq_entry (long-tail question and
answer). For a replacement put the exact old text in "replace".
Reply with JSON: {"edits": [{"content_kind", "content", "case_ids", ...}]}
"""


def _evidence(item: PlanItem, report: AggregatedReport | None) -> dict[str, Any]:
    if report is None:
        return {}
    out = {}
    for cat in item.categories:
        c = report.category(cat)
        if c is None:
            continue
        out[cat] = {
            "hints": [{"hint": h, "case_ids": list(c.hint_sources.get(h, ()))} for h in c.aggregated_hints],
            "representatives": [r.to_dict() for r in c.representative_cases],
        }
    return out


def _outline(pkg: SkillPackage) -> list[dict[str, str]]:
    return [{"title": s.title, "kind": s.kind} for s in pkg.skill_md.sections]


@dataclass
class OptimizationResult:
    from_version: int
    new_version: int | None
    applied: list[EditAction] = field(default_factory=list)
    skipped: list[Skipped] = field(default_factory=list)
    diff: str = ""
    merged: list[dict[str, Any]] = field(default_factory=list)
    searches: list[dict[str, Any]] = field(default_factory=list)
    offloaded: list[str] = field(default_factory=list)

    @property
    def changed(self) -> bool:
        return bool(self.applied)

    def to_dict(self) -> dict[str, Any]:
        return {
            "from_version": self.from_version,
            "new_version": self.new_version,
            "applied": [a.to_dict() for a in self.applied],
            "skipped": [s.to_dict() for s in self.skipped],
            "merged": self.merged,
            "searches": self.searches,
            "offloaded": self.offloaded,
        }


def unified_diff(old: Mapping[str, str], new: Mapping[str, str], old_label: str, new_label: str) -> str:
    out = []
    for path in sorted(set(old) | set(new)):
        a = old.get(path, "").splitlines(keepends=True)
        b = new.get(path, "").splitlines(keepends=True)
        if a == b:
            continue
        out.extend(difflib.unified_diff(a, b, f"{old_label}/{path}", f"{new_label}/{path}"))
    return "".join(ln if ln.endswith("\n") else ln + "\n" for ln in out)


class _Session:
    """Mutable edit state for one apply_plan call."""

    def __init__(self, pkg: SkillPackage) -> None:
        self.pkg = pkg
        self.text = pkg.skill_md.render()
        self.refs = dict(pkg.references)
        self.baseline = {(v.rule, v.where, v.message) for v in validate_package(pkg)}

    def corpus(self) -> str:
        return self.text + "\n" + "\n".join(self.refs.values())

    def package(self, text: str | None = None, refs: Mapping[str, str] | None = None) -> SkillPackage:
        return SkillPackage(parse_skill_md(self.text if text is None else text), self.pkg.tools, dict(refs if refs is not None else self.refs), self.pkg.version, self.pkg.tools_text)

    def new_problems(self, text: str, refs: Mapping[str, str] | None = None) -> list[str]:
        found = validate_package(self.package(text, refs))
        return [f"{v.rule}@{v.where}: {v.message}" for v in found if (v.rule, v.where, v.message) not in self.baseline]


def apply_plan(
    gateway: Gateway,
    plan: Sequence[PlanItem],
    skill: SkillPackage,
    vfs: Vfs,
    search: KnowledgeSearch | None = None,
    records: Sequence[FailureRecord] = (),
    report: AggregatedReport | None = None,
    allow_high_risk: bool = False,
    commit_if_unchanged: bool = True,
    root: str = "/skill",
    max_lines: int = MAX_LINES,
    max_chars: int = MAX_CHARS,
) -> tuple[OptimizationResult, SkillPackage]:
    """Execute ``plan`` against the skill mounted at ``root`` and commit v_{n+1}."""
    if not vfs.is_file(normalize_path(SKILL_MD, root)):
        skill.write_to(vfs, root)
    label = f"pre-edit-{skill.label}"
    n = 1
    while vfs.get_version(label) is not None:
        n += 1
        label = f"pre-edit-{skill.label}.{n}"
    pre = vfs.snapshot(label).data
    result = OptimizationResult(skill.version, None)
    try:
        new = _apply(gateway, plan, skill, vfs, search, records, report, allow_high_risk, commit_if_unchanged, root, max_lines, max_chars, result)
    except Exception:
        vfs.restore(pre)
        raise
    return result, new


def _apply(
    gateway: Gateway,
    plan: Sequence[PlanItem],
    skill: SkillPackage,
    vfs: Vfs,
    search: KnowledgeSearch | None,
    records: Sequence[FailureRecord],
    report: AggregatedReport | None,
    allow_high_risk: bool,
    commit_if_unchanged: bool,
    root: str,
    max_lines: int,
    max_chars: int,
    result: OptimizationResult,
) -> SkillPackage:
    s = _Session(skill)
    old_text = s.text
    old_files = skill.files()
    items, result.merged = merge_items(plan)
    known_ids = {r.case_id for r in records} or (report.case_ids() if report else set())
    generated = 0
    for item in items:
        if item.risk == "high" and not allow_high_risk:
            result.skipped.append(Skipped(item.priority, RISK_GATE, "high-risk item needs an explicit override"))
            continue
        found: list[SearchResult] = []
        if item.needs_knowledge_search:
            queries = list(item.search_queries) or [item.change_description]
            for q in queries:
                entry: dict[str, Any] = {"plan_item_ref": item.priority, "query": q}
                if search is None:
                    entry["error"] = "no search backend configured"
                else:
                    try:
                        hits = search.search(q)
                        entry["results"] = [h.url or h.title for h in hits]
                        found.extend(h for h in hits if h not in found)
                    except SearchError as exc:
                        entry["error"] = str(exc)
                        logger.warning("search for %r failed: %s", q, exc)
                result.searches.append(entry)
        payload = {
            "plan_item": item.to_dict(),
            "evidence": _evidence(item, report),
            "search_results": [{"title": h.title, "url": h.url, "snippet": h.snippet, "authoritative": h.authoritative} for h in found],
            "skill_outline": _outline(s.package()),
            "tools": sorted(skill.tool_names()),
        }
        user = "Plan item to apply:\n```json\n" + json.dumps(payload, ensure_ascii=False, indent=1) + "\n```"
        try:
            resp = gateway.ask(f"optimize:{skill.label}:p{item.priority}", OPTIMIZE_SYSTEM, user, "optimizer_edits")
        except LLMError as exc:
            if exc.code != "schema_violation":
                raise
            result.skipped.append(Skipped(item.priority, VALIDATION_FAILURE, f"unusable edit proposal: {exc}"))
            continue
        authoritative = {h.url for h in found if h.authoritative and h.url}
        fallback_ids = []
        if report is not None:
            for cat in item.categories:
                c = report.category(cat)
                if c is not None:
                    fallback_ids += [r.case_id for r in c.representative_cases]
        last: Placement | None = None
        for edit in resp.parsed["edits"]:
            generated += 1
            last = _apply_edit(s, item, edit, authoritative, known_ids, fallback_ids, last, result)
    if generated == 0:
        raise OptimizerError("plan_unexecutable", "no plan item produced an edit action")
    moved: tuple[str, ...] = ()
    try:
        off = offload_details(s.text, s.refs, max_lines, max_chars)
    except SkillError as exc:
        raise OptimizerError("budget_unresolvable", str(exc)) from exc
    if off.new_files or off.text != s.text:
        moved = off.moved_lines
        result.offloaded = list(off.new_files)
        for fname in off.new_files:
            result.applied.append(EditAction(NEW_REFERENCE_FILE, f"references/{fname}", "", off.references[fname], 0, ("budget",), "offload"))
        s.text, s.refs = off.text, dict(off.references)
    check = enforce_additivity(old_text, s.text, result.applied, plan, moved)
    if not check.passed:
        spans = "; ".join(f"lines {v.start}-{v.end}" for v in check.violations)
        raise OptimizerError("additivity_violation", f"unauthorized removal at {spans}")
    problems = s.new_problems(s.text)
    if problems:
        raise OptimizerError("validation_failed", "; ".join(problems))
    if not result.applied and not commit_if_unchanged:
        return skill
    vfs.write_file(normalize_path(SKILL_MD, root), s.text)
    for fname, body in s.refs.items():
        path = normalize_path(f"references/{fname}", root)
        if vfs.read_file(path).data != body:
            vfs.write_file(path, body)
    try:
        new = commit_version(skill, vfs, root)
    except SkillError as exc:
        raise OptimizerError("validation_failed", str(exc)) from exc
    result.new_version = new.version
    result.diff = unified_diff(old_files, new.files(), skill.label, new.label)
    return new


def _apply_edit(
    s: _Session,
    item: PlanItem,
    edit: Mapping[str, Any],
    authoritative: set[str],
    known_ids: set[str],
    fallback_ids: Sequence[str],
    last: Placement | None,
    result: OptimizationResult,
) -> Placement | None:
    kind = edit["content_kind"]
    content = edit["content"].strip()
    ids = tuple(c for c in edit.get("case_ids", []) if c in known_ids) if known_ids else tuple(edit.get("case_ids", []))
    if not ids:
        ids = tuple(c for c in fallback_ids if not known_ids or c in known_ids)[:3]
    section = edit.get("section", "") or (item.locations[0].section if item.locations else "")
    label = ""
    if kind == "knowledge":
        counts = [n for k, n in item.addresses if k.startswith("knowledge:")] or [n for _, n in item.addresses]
        if edit.get("issue"):
            counts = [n for k, n in item.addresses if k == edit["issue"]] or counts
        k_item = KnowledgeItem(content, classify_knowledge(edit.get("source_url", "") in authoritative, max(counts)), edit.get("source_url", ""), edit.get("title", ""))
        if k_item.placement == "faq":
            kind = "faq_entry"
        elif k_item.placement == "link_citation":
            content = f"{k_item.title or content}: see {k_item.source_url}"
    if edit.get("replace"):
        return _replace(s, item, edit, content, kind, ids, result)
    probe = EditAction(INSERT_AFTER, SKILL_MD, "", content, item.priority, ids, kind)
    if not ids:
        result.skipped.append(Skipped(item.priority, VALIDATION_FAILURE, "no failure evidence to cite", probe))
        return last
    if is_duplicate(content, s.corpus()):
        result.skipped.append(Skipped(item.priority, DUPLICATE, "content already present", probe))
        return last
    if kind == "example" and last is not None:
        text, place = s.text, Placement(last.file, last.section, last.line, last.indent + "   ")
        label = "Example: "
    else:
        text, place = place_content(s.text, kind, edit.get("tool", ""), section)
        if kind == "example":
            label = "Example: "
    block = format_block(content, place.indent, label)
    lines = text.splitlines(keepends=True)
    new_text = "".join(lines[: place.line] + [b + "\n" for b in block] + lines[place.line:])
    problems = s.new_problems(new_text)
    if problems:
        result.skipped.append(Skipped(item.priority, VALIDATION_FAILURE, "; ".join(problems), probe))
        return last
    anchor = lines[place.line - 1].strip() if place.line > 0 else ""
    kind_name = APPEND_SECTION if place.created else INSERT_AFTER
    action = EditAction(kind_name, SKILL_MD, f"{place.section} :: {anchor}", "\n".join(block), item.priority, ids, kind)
    s.text = new_text
    result.applied.append(action)
    return Placement(place.file, place.section, place.line + len(block), place.indent)


def _replace(
    s: _Session, item: PlanItem, edit: Mapping[str, Any], content: str, kind: str, ids: tuple[str, ...], result: OptimizationResult
) -> None:
    old = edit["replace"]
    probe = EditAction(REPLACE_SPAN, SKILL_MD, old[:60], content, item.priority, ids, kind, old)
    if item.defect_kind != "incorrect":
        result.skipped.append(Skipped(item.priority, VALIDATION_FAILURE, "replacement requires an incorrect-defect item", probe))
        return None
    if not ids:
        result.skipped.append(Skipped(item.priority, VALIDATION_FAILURE, "no failure evidence to cite", probe))
        return None
    if old not in s.text:
        result.skipped.append(Skipped(item.priority, VALIDATION_FAILURE, "text to replace not found in SKILL.md", probe))
        return None
    # widen to whole lines so the additivity check can account for them
    at = s.text.index(old)
    start = s.text.rfind("\n", 0, at) + 1
    stop = s.text.find("\n", at + len(old))
    stop = len(s.text) if stop < 0 else stop
    old_full = s.text[start:stop]
    new_full = old_full.replace(old, content, 1)
    new_text = s.text[:start] + new_full + s.text[stop:]
    problems = s.new_problems(new_text)
    if problems:
        result.skipped.append(Skipped(item.priority, VALIDATION_FAILURE, "; ".join(problems), probe))
        return None
    s.text = new_text
    result.applied.append(EditAction(REPLACE_SPAN, SKILL_MD, old_full[:60], new_full, item.priority, ids, kind, old_full))
    return None
