"""Batch aggregation of failure records by category."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

from .analyzer import ACCEPTABLE, FailureRecord
from .schemas import DIMENSIONS, SEVERITY_RANK

DEFAULT_K = 5


class AggregationError(Exception):
    def __init__(self, code: str, message: str = "") -> None:
        super().__init__(message or code)
        self.code = code


@dataclass(frozen=True)
class Representative:
    case_id: str
    severity: str
    issue_types: tuple[str, ...]
    excerpt: str = ""
    hint: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "severity": self.severity,
            "issue_types": list(self.issue_types),
            "excerpt": self.excerpt,
            "hint": self.hint,
        }


@dataclass(frozen=True)
class CategoryAggregate:
    category: str
    case_count: int
    severity_distribution: Mapping[str, int]
    issue_type_frequencies: Mapping[str, int]
    representative_cases: tuple[Representative, ...]
    aggregated_hints: tuple[str, ...]
    hint_sources: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    case_ids: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "category": self.category,
            "case_count": self.case_count,
            "severity_distribution": dict(self.severity_distribution),
            "issue_type_frequencies": dict(self.issue_type_frequencies),
            "representative_cases": [r.to_dict() for r in self.representative_cases],
            "aggregated_hints": list(self.aggregated_hints),
            "hint_sources": {h: list(ids) for h, ids in self.hint_sources.items()},
            "case_ids": list(self.case_ids),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> CategoryAggregate:
        return cls(
            d["category"],
            d["case_count"],
            dict(d["severity_distribution"]),
            dict(d["issue_type_frequencies"]),
            tuple(
                Representative(r["case_id"], r["severity"], tuple(r["issue_types"]), r.get("excerpt", ""), r.get("hint", ""))
                for r in d["representative_cases"]
            ),
            tuple(d["aggregated_hints"]),
            {h: tuple(ids) for h, ids in d.get("hint_sources", {}).items()},
            tuple(d.get("case_ids", ())),
        )


@dataclass(frozen=True)
class AggregatedReport:
    run_id: str
    skill_version: int
    n_cases: int
    categories: tuple[CategoryAggregate, ...]
    top_issue_summary: tuple[str, ...]

    def category(self, name: str) -> CategoryAggregate | None:
        for c in self.categories:
            if c.category == name:
                return c
        return None

    def issue_counts(self) -> dict[tuple[str, str], int]:
        return {(c.category, i): n for c in self.categories for i, n in c.issue_type_frequencies.items()}

    def case_ids(self) -> set[str]:
        return {cid for c in self.categories for cid in c.case_ids}

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "skill_version": self.skill_version,
            "n_cases": self.n_cases,
            "categories": [c.to_dict() for c in self.categories],
            "top_issue_summary": list(self.top_issue_summary),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> AggregatedReport:
        return cls(
            d["run_id"],
            d["skill_version"],
            d["n_cases"],
            tuple(CategoryAggregate.from_dict(c) for c in d["categories"]),
            tuple(d["top_issue_summary"]),
        )


def normalize_hint(hint: str) -> str:
    return re.sub(r"\s+", " ", hint).strip().casefold()


def dedupe_hints(hints: Iterable[str]) -> list[str]:
    """Drop hints equal to an earlier one after case and whitespace folding."""
    seen: set[str] = set()
    out = []
    for h in hints:
        key = normalize_hint(h)
        if not key or key in seen:
            continue
        seen.add(key)
        out.append(h)
    return out


def greedy_coverage(candidates: Sequence[FailureRecord], category: str, k: int) -> list[str]:
    """Pick ``k`` cases by (severity, newly covered issue types, case id)."""
    pool = list(candidates)
    chosen: list[str] = []
    covered: set[str] = set()
    while pool and len(chosen) < k:
        def key(r: FailureRecord) -> tuple[int, int, str]:
            f = r.finding(category)
            return (-SEVERITY_RANK[f.severity], -len(set(f.issue_types) - covered), r.case_id)

        best = min(pool, key=key)
        pool.remove(best)
        chosen.append(best.case_id)
        covered.update(best.finding(category).issue_types)
    return chosen


# swappable: any callable (records, category, k) -> case ids
DiversityStrategy = Callable[[Sequence[FailureRecord], str, int], list[str]]


def select_representatives(
    records: Sequence[FailureRecord], category: str, k: int = DEFAULT_K, strategy: DiversityStrategy = greedy_coverage
) -> list[str]:
    members = [r for r in records if category in r.failure_categories]
    return strategy(members, category, k)


def aggregate(
    records: Sequence[FailureRecord],
    k: int = DEFAULT_K,
    run_id: str = "",
    skill_version: int = 0,
    strategy: DiversityStrategy = greedy_coverage,
) -> AggregatedReport:
    if not records:
        raise AggregationError("empty_input", "no failure records to aggregate")
    if k < 1:
        raise AggregationError("bad_k", "k must be at least 1")
    ordered = sorted(records, key=lambda r: r.case_id)
    bad = [r for r in ordered if r.overall_verdict != ACCEPTABLE]
    categories = []
    totals: Counter[tuple[str, str]] = Counter()
    for dim in DIMENSIONS:
        members = [r for r in bad if dim in r.failure_categories]
        if not members:
            continue
        sev = Counter(r.finding(dim).severity for r in members)
        issues: Counter[str] = Counter()
        sources: dict[str, list[str]] = {}
        raw_hints = []
        for r in members:
            f = r.finding(dim)
            issues.update(f.issue_types)
            if f.hint:
                raw_hints.append(f.hint)
                sources.setdefault(normalize_hint(f.hint), []).append(r.case_id)
        hints = dedupe_hints(raw_hints)
        by_id = {r.case_id: r for r in members}
        reps = []
        for cid in strategy(members, dim, k):
            f = by_id[cid].finding(dim)
            reps.append(Representative(cid, f.severity, f.issue_types, by_id[cid].excerpt, f.hint))
        freq = dict(sorted(issues.items(), key=lambda kv: (-kv[1], kv[0])))
        for issue, n in freq.items():
            totals[(dim, issue)] = n
        categories.append(
            CategoryAggregate(
                dim,
                len(members),
                {s: sev.get(s, 0) for s in ("high", "medium", "low")},
                freq,
                tuple(reps),
                tuple(hints),
                {h: tuple(sources[normalize_hint(h)]) for h in hints},
                tuple(r.case_id for r in members),
            )
        )
    ranked = sorted(totals.items(), key=lambda kv: (-kv[1], DIMENSIONS.index(kv[0][0]), kv[0][1]))
    summary = tuple(f"{c}:{i} occurred {n} times" for (c, i), n in ranked)
    return AggregatedReport(run_id, skill_version, len(records), tuple(categories), summary)


def category_file(agg: CategoryAggregate, report: AggregatedReport) -> dict[str, Any]:
    """Per-category analysis document handed to the diagnostician."""
    d = agg.to_dict()
    d["run_id"] = report.run_id
    d["skill_version"] = report.skill_version
    return d
