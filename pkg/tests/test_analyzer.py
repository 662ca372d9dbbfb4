from __future__ import annotations

import itertools
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from skillforge.analyzer import (
    AnalysisError,
    CaseBundle,
    DimensionFinding,
    FailureRecord,
    analyze_case,
    analyze_dimension,
    combine_findings,
    record_from_severities,
)
from skillforge.schemas import DIMENSIONS, SEVERITIES

from conftest import scripted
from oracles import combine_oracle

ISSUE = {"knowledge": "missing", "tool": "missed_call", "clarification": "over_clarification", "style": "verbose"}


def findings_for(sev: dict[str, str]) -> list[DimensionFinding]:
    return [DimensionFinding(d, sev[d], () if sev[d] == "none" else (ISSUE[d],)) for d in DIMENSIONS]


@pytest.mark.parametrize(
    "sev,expected",
    [
        (dict(knowledge="high", tool="none", clarification="none", style="none"), ("high", "fail", "knowledge")),
        (dict(knowledge="none", tool="medium", clarification="medium", style="none"), ("medium", "fail", "tool")),
        (dict(knowledge="none", tool="none", clarification="medium", style="low"), ("medium", "marginal", "clarification")),
        (dict(knowledge="none", tool="none", clarification="none", style="low"), ("low", "marginal", "style")),
        (dict(knowledge="none", tool="none", clarification="none", style="none"), ("none", "acceptable", "none")),
        (dict(knowledge="low", tool="high", clarification="high", style="high"), ("high", "fail", "tool")),
        (dict(knowledge="low", tool="low", clarification="low", style="low"), ("low", "marginal", "knowledge")),
    ],
)
def test_combine_examples(sev, expected):
    c = combine_findings(findings_for(sev))
    assert (c.overall_severity, c.overall_verdict, c.primary_category) == expected


def test_combine_all_256_match_oracle():
    for combo in itertools.product(SEVERITIES, repeat=4):
        sev = dict(zip(DIMENSIONS, combo))
        c = combine_findings(findings_for(sev))
        assert (c.overall_severity, c.overall_verdict, c.primary_category) == combine_oracle(sev)
        assert c.failure_categories == tuple(d for d in DIMENSIONS if sev[d] != "none")


@given(st.permutations(DIMENSIONS), st.tuples(*[st.sampled_from(SEVERITIES)] * 4))
def test_combine_ignores_input_order(order, sevs):
    sev = dict(zip(DIMENSIONS, sevs))
    f = findings_for(sev)
    shuffled = [next(x for x in f if x.dimension == d) for d in order]
    assert combine_findings(shuffled) == combine_findings(f)


@pytest.mark.parametrize("dims", [DIMENSIONS[:3], DIMENSIONS + ("knowledge",)])
def test_combine_malformed(dims):
    with pytest.raises(AnalysisError) as exc:
        combine_findings([DimensionFinding(d, "none") for d in dims])
    assert exc.value.code == "malformed_findings"


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(dimension="mood", severity="none"),
        dict(dimension="tool", severity="dire"),
        dict(dimension="tool", severity="none", issue_types=("missed_call",)),
        dict(dimension="tool", severity="high", issue_types=("verbose",)),
    ],
)
def test_finding_validation(kwargs):
    with pytest.raises(ValueError):
        DimensionFinding(**kwargs)


BUNDLE = CaseBundle("T1#2", "summary", "[customer] hi", "ref reply", "actual reply", {"steps": []}, "partial", 0)


def test_analyze_dimension_canonicalizes_aliases():
    gw = scripted({"a": {"severity": "high", "issue_types": ["missing_call", "missed_call"], "evidence": ["e"], "hint": "h"}})
    f = analyze_dimension(gw, BUNDLE, "tool", tag="a")
    assert f.issue_types == ("missed_call",) and f.severity == "high" and not f.audit


def test_analyze_dimension_inconsistent_output_becomes_audit():
    gw = scripted({"a": {"severity": "none", "issue_types": ["verbose"]}})
    f = analyze_dimension(gw, BUNDLE, "style", tag="a")
    assert f == DimensionFinding("style", "none", audit=True)


def test_analyze_case_with_summary():
    script = {
        "analyze:v0:knowledge:T1#2": {"severity": "high", "issue_types": ["missing"], "hint": "add endpoints"},
        "analyze:v0:tool:T1#2": {"severity": "none", "issue_types": []},
        "analyze:v0:clarification:T1#2": {"severity": "low", "issue_types": ["over_asking"], "hint": "ask less"},
        "analyze:v0:style:T1#2": {"severity": "none", "issue_types": []},
        "summarize:v0:T1#2": {"divergence_summary": "missed the endpoint", "diagnostic_hints": ["add endpoints table"]},
    }
    rec = analyze_case(scripted(script), BUNDLE, deterministic=False)
    assert rec.overall_verdict == "fail" and rec.primary_category == "knowledge"
    assert rec.failure_categories == ("knowledge", "clarification")
    assert rec.finding("clarification").issue_types == ("over_clarification",)
    assert rec.divergence_summary == "missed the endpoint"
    assert rec.diagnostic_hints == ("add endpoints table",)
    det = analyze_case(scripted(script), BUNDLE, deterministic=True)
    assert det.divergence_summary is None and det.diagnostic_hints == ("add endpoints", "ask less")
    assert FailureRecord.from_dict(json.loads(json.dumps(rec.to_dict()))) == rec


def test_record_from_severities():
    rec = record_from_severities("x", {"style": "medium"}, {"style": ["cold"]})
    assert (rec.overall_verdict, rec.primary_category, rec.failure_categories) == ("marginal", "style", ("style",))
