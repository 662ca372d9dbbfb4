from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillforge.aggregator import (
    AggregatedReport,
    AggregationError,
    aggregate,
    dedupe_hints,
    select_representatives,
)
from skillforge.analyzer import record_from_severities
from skillforge.schemas import DIMENSIONS, VOCAB

from failure_fixture import EXPECTED, N_CASES, build_records


def test_108_case_distribution():
    report = aggregate(build_records(), k=5, run_id="r", skill_version=0)
    assert report.n_cases == N_CASES
    assert [c.category for c in report.categories] == list(DIMENSIONS)
    for cat, want in EXPECTED.items():
        agg = report.category(cat)
        assert agg.case_count == want["case_count"]
        assert dict(agg.severity_distribution) == want["sev"]
        assert dict(agg.issue_type_frequencies) == want["issues"]
        assert len(agg.representative_cases) == 5
    assert report.top_issue_summary[0] == "style:verbose occurred 78 times"
    assert AggregatedReport.from_dict(json.loads(json.dumps(report.to_dict()))) == report


def test_hints_deduplicated_with_sources():
    report = aggregate(build_records())
    style = report.category("style")
    assert style.aggregated_hints.count("Keep replies under five sentences") == 1
    assert "keep replies under  five sentences" not in style.aggregated_hints
    assert len(style.hint_sources["Keep replies under five sentences"]) == 78


def test_representatives_cover_issue_types():
    recs = [
        record_from_severities("c1", {"knowledge": "high"}, {"knowledge": ["missing"]}),
        record_from_severities("c2", {"knowledge": "high"}, {"knowledge": ["missing"]}),
        record_from_severities("c3", {"knowledge": "high"}, {"knowledge": ["incorrect"]}),
    ]
    assert select_representatives(recs, "knowledge", k=2) == ["c1", "c3"]


def test_representatives_prefer_severity():
    recs = [
        record_from_severities("a", {"tool": "medium"}, {"tool": ["wrong_tool"]}),
        record_from_severities("b", {"tool": "high"}, {"tool": ["missed_call"]}),
    ]
    assert select_representatives(recs, "tool", k=1) == ["b"]


def test_dedupe_hints():
    assert dedupe_hints(["Add rule X", "add  rule x", "", "Other"]) == ["Add rule X", "Other"]


def test_acceptable_records_excluded():
    recs = [record_from_severities("ok", {}), record_from_severities("bad", {"style": "low"}, {"style": ["cold"]})]
    report = aggregate(recs)
    assert report.case_ids() == {"bad"}
    assert report.n_cases == 2


@pytest.mark.parametrize("records,k,code", [([], 5, "empty_input"), ([record_from_severities("x", {})], 0, "bad_k")])
def test_aggregate_errors(records, k, code):
    with pytest.raises(AggregationError) as exc:
        aggregate(records, k=k)
    assert exc.value.code == code


severity = st.sampled_from(["none", "low", "medium", "high"])


@st.composite
def records(draw):
    out = []
    for i in range(draw(st.integers(1, 25))):
        sev = {d: draw(severity) for d in DIMENSIONS}
        issues = {d: draw(st.lists(st.sampled_from(VOCAB[d]), min_size=1, max_size=2, unique=True)) for d in DIMENSIONS if sev[d] != "none"}
        out.append(record_from_severities(f"c{i:02d}", sev, issues))
    return out


@settings(max_examples=80, deadline=None)
@given(records(), st.integers(1, 6))
def test_aggregate_properties(recs, k):
    report = aggregate(recs, k=k)
    bad = [r for r in recs if r.overall_verdict != "acceptable"]
    for agg in report.categories:
        members = [r for r in bad if agg.category in r.failure_categories]
        assert agg.case_count == len(members) == sum(agg.severity_distribution.values())
        assert len(agg.representative_cases) == min(k, len(members))
        assert {r.case_id for r in agg.representative_cases} <= set(agg.case_ids)
        counts = list(agg.issue_type_frequencies.values())
        assert counts == sorted(counts, reverse=True)
    assert report.case_ids() == {r.case_id for r in bad}
