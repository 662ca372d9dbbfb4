"""Four-dimension failure analysis and the deterministic verdict rules."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Sequence

from .llm import Gateway, LLMError
from .schemas import DIMENSIONS, SEVERITIES, SEVERITY_RANK, VOCAB, canonical_issue

logger = logging.getLogger(__name__)

FAIL = "fail"
MARGINAL = "marginal"
ACCEPTABLE = "acceptable"
NONE = "none"

DIMENSION_FOCUS = {
    "knowledge": "domain knowledge in the reply: facts missing, wrong, contradictory, outdated, misapplied, "
    "or known to the skill but never surfaced",
    "tool": "tool use in the trace: calls that should have happened, the wrong tool, bad parameters, repeated calls, "
    "misread results, tools left unused, or a needed tool absent from the skill",
    "clarification": "information gathering: asking for what the customer already gave, failing to ask for what the "
    "expert asked for, or asking about the wrong thing",
    "style": "tone and form, judged only where the substance is right: robotic, verbose, cold or unsuitable tone",
}


class AnalysisError(Exception):
    def __init__(self, code: str, message: str = "") -> None:
        super().__init__(message or code)
        self.code = code


@dataclass(frozen=True)
class DimensionFinding:
    dimension: str
    severity: str
    issue_types: tuple[str, ...] = ()
    evidence: tuple[str, ...] = ()
    hint: str = ""
    audit: bool = False

    def __post_init__(self) -> None:
        if self.dimension not in DIMENSIONS:
            raise ValueError(f"unknown dimension {self.dimension!r}")
        if self.severity not in SEVERITIES:
            raise ValueError(f"unknown severity {self.severity!r}")
        if self.severity == NONE and self.issue_types:
            raise ValueError("severity none must carry no issue types")
        bad = set(self.issue_types) - set(VOCAB[self.dimension])
        if bad:
            raise ValueError(f"{self.dimension} issue types outside vocabulary: {sorted(bad)}")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["issue_types"] = list(self.issue_types)
        d["evidence"] = list(self.evidence)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> DimensionFinding:
        return cls(
            d["dimension"],
            d["severity"],
            tuple(d.get("issue_types", ())),
            tuple(d.get("evidence", ())),
            d.get("hint", ""),
            bool(d.get("audit", False)),
        )


@dataclass(frozen=True)
class Combined:
    failure_categories: tuple[str, ...]
    overall_severity: str
    overall_verdict: str
    primary_category: str


@dataclass(frozen=True)
class FailureRecord:
    case_id: str
    findings: tuple[DimensionFinding, ...]
    failure_categories: tuple[str, ...]
    overall_severity: str
    overall_verdict: str
    primary_category: str
    divergence_summary: str | None = None
    diagnostic_hints: tuple[str, ...] = ()
    excerpt: str = ""

    def finding(self, dimension: str) -> DimensionFinding:
        for f in self.findings:
            if f.dimension == dimension:
                return f
        raise KeyError(dimension)

    @property
    def audit(self) -> bool:
        return any(f.audit for f in self.findings)

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "failure_categories": list(self.failure_categories),
            "overall_severity": self.overall_severity,
            "overall_verdict": self.overall_verdict,
            "primary_category": self.primary_category,
            "divergence_summary": self.divergence_summary,
            "diagnostic_hints": list(self.diagnostic_hints),
            "findings": [f.to_dict() for f in self.findings],
            "excerpt": self.excerpt,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> FailureRecord:
        return cls(
            d["case_id"],
            tuple(DimensionFinding.from_dict(f) for f in d["findings"]),
            tuple(d["failure_categories"]),
            d["overall_severity"],
            d["overall_verdict"],
            d["primary_category"],
            d.get("divergence_summary"),
            tuple(d.get("diagnostic_hints", ())),
            d.get("excerpt", ""),
        )


def combine_findings(findings: Sequence[DimensionFinding]) -> Combined:
    """Merge one finding per dimension into the case-level verdict fields.

    fail when any dimension is high or two or more are medium; otherwise
    marginal when one is medium or any is low; otherwise acceptable. The
    primary category is the most severe dimension, ties going to the earlier
    of knowledge, tool, clarification, style.
    """
    dims = [f.dimension for f in findings]
    if sorted(dims) != sorted(DIMENSIONS):
        raise AnalysisError("malformed_findings", f"expected one finding per dimension, got {dims}")
    by_dim = {f.dimension: f.severity for f in findings}
    sev = [by_dim[d] for d in DIMENSIONS]
    highs, mediums, lows = sev.count("high"), sev.count("medium"), sev.count("low")
    if highs >= 1 or mediums >= 2:
        verdict = FAIL
    elif mediums == 1 or lows >= 1:
        verdict = MARGINAL
    else:
        verdict = ACCEPTABLE
    overall = max(sev, key=SEVERITY_RANK.__getitem__)
    primary = NONE
    if verdict != ACCEPTABLE:
        # max() keeps the first maximal element, and DIMENSIONS is in priority order
        primary = max(DIMENSIONS, key=lambda d: SEVERITY_RANK[by_dim[d]])
    categories = tuple(d for d in DIMENSIONS if by_dim[d] != NONE)
    return Combined(categories, overall, verdict, primary)


# --------------------------------------------------------------------------
# LLM-facing analysis


@dataclass(frozen=True)
class CaseBundle:
    case_id: str
    summary: str
    history: str
    reference: str
    actual: str
    trace: Mapping[str, Any] = field(default_factory=dict)
    verdict: str = ""
    skill_version: int = 0

    def payload(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "ticket_summary": self.summary,
            "dialogue_history": self.history,
            "reference_response": self.reference,
            "actual_response": self.actual,
            "judge_verdict": self.verdict,
            "execution_trace": self.trace,
        }


def dimension_system(dimension: str) -> str:
    vocab = ", ".join(VOCAB[dimension])
    return (
        f"You analyse why a support agent's reply diverged from an expert reply. Look only at {dimension}: "
        f"{DIMENSION_FOCUS[dimension]}.\n"
        f"Rate severity as high, medium, low or none and list issue types drawn only from: {vocab}. "
        "Severity none means no issue types. Quote trace or reply excerpts as evidence and give one concrete "
        "hint for improving the skill.\n"
        'Reply with JSON: {"severity": ..., "issue_types": [...], "evidence": [...], "hint": "..."}'
    )


def _canonical_types(dimension: str, parsed: Mapping[str, Any]) -> tuple[str, ...]:
    out: list[str] = []
    for t in parsed.get("issue_types", []):
        c = canonical_issue(dimension, t)
        if c not in out:
            out.append(c)
    return tuple(out)


def analyze_dimension(gateway: Gateway, bundle: CaseBundle, dimension: str, tag: str | None = None) -> DimensionFinding:
    if dimension not in DIMENSIONS:
        raise AnalysisError("unknown_dimension", dimension)
    user = f"Case for {dimension} analysis.\n```json\n" + json.dumps(bundle.payload(), ensure_ascii=False, indent=1) + "\n```"

    def consistent(p: Mapping[str, Any]) -> str | None:
        if p["severity"] == NONE and p["issue_types"]:
            return "severity none must list no issue types"
        if p["severity"] != NONE and not p["issue_types"]:
            return "a non-none severity needs at least one issue type"
        return None

    try:
        resp = gateway.ask(
            tag or f"analyze:{dimension}:{bundle.case_id}",
            dimension_system(dimension),
            user,
            f"finding:{dimension}",
            validator=consistent,
        )
    except LLMError as exc:
        if exc.code != "schema_violation":
            raise
        logger.warning("%s analysis of %s unusable; recording none with audit flag", dimension, bundle.case_id)
        return DimensionFinding(dimension, NONE, audit=True)
    p = resp.parsed
    return DimensionFinding(
        dimension,
        p["severity"],
        _canonical_types(dimension, p),
        tuple(p.get("evidence", [])),
        p.get("hint", ""),
    )


SUMMARY_SYSTEM = (
    "You condense a four-dimension failure analysis of one support case. Explain in a few sentences how the "
    "agent's reply diverged from the expert reply and list actionable hints for improving the skill.\n"
    'Reply with JSON: {"divergence_summary": "...", "diagnostic_hints": ["..."]}'
)


def dimension_hints(findings: Sequence[DimensionFinding]) -> tuple[str, ...]:
    return tuple(f.hint for f in findings if f.hint and f.severity != NONE)


def summarize_case(
    gateway: Gateway | None,
    combined: Combined,
    findings: Sequence[DimensionFinding],
    bundle: CaseBundle | None = None,
    deterministic: bool = False,
    tag: str | None = None,
) -> tuple[str | None, tuple[str, ...]]:
    """Optional natural-language summary; falls back to the per-dimension hints."""
    fallback = dimension_hints(findings)
    if deterministic or gateway is None or combined.overall_verdict == ACCEPTABLE:
        return None, fallback
    payload = {
        "case_id": bundle.case_id if bundle else "",
        "overall_verdict": combined.overall_verdict,
        "primary_category": combined.primary_category,
        "findings": [f.to_dict() for f in findings],
        "reference_response": bundle.reference if bundle else "",
        "actual_response": bundle.actual if bundle else "",
    }
    try:
        resp = gateway.ask(
            tag or f"summarize:{payload['case_id']}",
            SUMMARY_SYSTEM,
            "```json\n" + json.dumps(payload, ensure_ascii=False, indent=1) + "\n```",
            "case_summary",
        )
    except LLMError as exc:
        logger.warning("case summary failed (%s); keeping dimension hints", exc.code)
        return None, fallback
    hints = tuple(h for h in resp.parsed["diagnostic_hints"] if h.strip()) or fallback
    return resp.parsed["divergence_summary"] or None, hints


def analyze_case(
    gateway: Gateway,
    bundle: CaseBundle,
    deterministic: bool = True,
    tag_prefix: str = "",
) -> FailureRecord:
    """Run the four dimension analyses concurrently and combine them."""
    prefix = tag_prefix or f"v{bundle.skill_version}"

    def run(dim: str) -> DimensionFinding:
        return analyze_dimension(gateway, bundle, dim, f"analyze:{prefix}:{dim}:{bundle.case_id}")

    with ThreadPoolExecutor(max_workers=len(DIMENSIONS)) as pool:
        findings = tuple(pool.map(run, DIMENSIONS))
    combined = combine_findings(findings)
    summary, hints = summarize_case(
        gateway, combined, findings, bundle, deterministic, f"summarize:{prefix}:{bundle.case_id}"
    )
    excerpt = bundle.actual if len(bundle.actual) <= 240 else bundle.actual[:237] + "..."
    return FailureRecord(
        bundle.case_id,
        findings,
        combined.failure_categories,
        combined.overall_severity,
        combined.overall_verdict,
        combined.primary_category,
        summary,
        hints,
        excerpt,
    )


def record_from_severities(case_id: str, severities: Mapping[str, str], issues: Mapping[str, Sequence[str]] | None = None,
                           hints: Mapping[str, str] | None = None) -> FailureRecord:
    """Build a record directly from per-dimension severities (fixtures, replays)."""
    issues = issues or {}
    hints = hints or {}
    findings = tuple(
        DimensionFinding(d, severities.get(d, NONE), tuple(issues.get(d, ())), (), hints.get(d, "")) for d in DIMENSIONS
    )
    c = combine_findings(findings)
    return FailureRecord(
        case_id, findings, c.failure_categories, c.overall_severity, c.overall_verdict, c.primary_category,
        None, dimension_hints(findings),
    )
