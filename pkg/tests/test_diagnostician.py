from __future__ import annotations

import json

import pytest

from skillforge import diagnostician as D
from skillforge.aggregator import aggregate
from skillforge.analyzer import record_from_severities
from skillforge.llm import Gateway, ScriptedProvider
from skillforge.vfs import Vfs

from plan_fixture import EXPECTED_PLAN, KNOWLEDGE_LOC, TOOL_LOC, build_records, plan_summary, run_scripted_diagnosis


@pytest.fixture
def report():
    return aggregate(build_records(), k=5, run_id="fixture", skill_version=0)


@pytest.mark.parametrize(
    "cat,issue,kind,target",
    [
        ("knowledge", "missing", "missing", "BackgroundKnowledge"),
        ("knowledge", "not_surfaced", "insufficient", "BackgroundKnowledge"),
        ("tool", "missed_call", "missing", "CaseTypeHandling"),
        ("tool", "missing_call", "missing", "CaseTypeHandling"),
        ("tool", "wrong_params", "insufficient", "CaseTypeHandling"),
        ("clarification", "over_clarification", "insufficient", "CaseTypeHandling"),
        ("style", "verbose", "missing", "Response Guidelines"),
        ("knowledge", "incorrect", "incorrect", "BackgroundKnowledge"),
    ],
)
def test_default_attribution_rows(cat, issue, kind, target):
    t = D.default_attribution(cat, issue)
    assert (t.defect_kind, t.target) == (kind, target)


def test_default_attribution_unknown_pair(caplog):
    assert D.default_attribution("style", "sarcastic") is D.GENERIC_DEFECT
    assert "no attribution pattern" in caplog.text


def test_table_covers_vocabulary():
    from skillforge.schemas import VOCAB

    for cat, issues in VOCAB.items():
        for issue in issues:
            assert (cat, issue) in D.ATTRIBUTION_TABLE


def test_scripted_three_item_plan(template_skill, report):
    diag = run_scripted_diagnosis(template_skill, report)
    assert plan_summary(diag) == EXPECTED_PLAN
    assert diag.steps == 5
    assert [a.category_issue for a in diag.attributions] == [("knowledge", "missing"), ("knowledge", "incorrect"), ("tool", "missed_call")]
    assert diag.attributions[2].evidence_case_ids == ("T000#1",)
    assert diag.audit == []
    assert D.DiagnosticReport.from_dict(json.loads(json.dumps(diag.to_dict()))).plan == diag.plan
    assert [a["category"] for a in diag.analyses] == ["knowledge", "tool", "clarification", "style"]


def test_bad_items_bounced_once_then_audited(template_skill, report):
    bad_item = {
        "priority": 1,
        "addresses": [{"issue": "knowledge:outdated", "count": 3}],
        "locations": [{"file": "SKILL.md", "section": "Nope"}],
        "change_description": "x",
        "risk": "low",
    }
    good_item = {
        "priority": 2,
        "addresses": [{"issue": "knowledge:missing"}],
        "locations": [KNOWLEDGE_LOC],
        "change_description": "add facts",
        "risk": "low",
    }
    step = {"action": "submit_plan", "plan": [bad_item, good_item]}
    gw = Gateway(ScriptedProvider.from_mapping({"diagnose:v0": [step]}))
    diag = D.diagnose(gw, report, template_skill)
    assert diag.steps == 2
    assert [p.addresses for p in diag.plan] == [(("knowledge:missing", 48),)]
    assert diag.plan[0].priority == 1
    assert len(diag.audit) == 1 and diag.audit[0]["kind"] == "plan_item"


def test_all_items_invalid_is_empty_plan(template_skill, report):
    step = {
        "action": "submit_plan",
        "plan": [{"priority": 1, "addresses": [{"issue": "tool:wrong_tool"}], "locations": [TOOL_LOC], "change_description": "x", "risk": "low"}],
    }
    gw = Gateway(ScriptedProvider.from_mapping({"diagnose:v0": [step]}))
    with pytest.raises(D.DiagnoseError) as exc:
        D.diagnose(gw, report, template_skill)
    assert exc.value.code == "empty_plan"


def test_step_limit(template_skill, report):
    gw = Gateway(ScriptedProvider.from_mapping({"diagnose:v0": {"action": "list", "path": "/skill"}}))
    with pytest.raises(D.DiagnoseError) as exc:
        D.diagnose(gw, report, template_skill, max_steps=3)
    assert exc.value.code == "step_limit"


def test_schema_violation(template_skill, report):
    gw = Gateway(ScriptedProvider.from_mapping({"diagnose:v0": {"action": "dance"}}))
    with pytest.raises(D.DiagnoseError) as exc:
        D.diagnose(gw, report, template_skill)
    assert exc.value.code == "schema_violation"


@pytest.mark.parametrize(
    "loc,ok",
    [
        ({"file": "SKILL.md", "section": "FAQ"}, True),
        ({"file": "SKILL.md", "section": "faq"}, True),
        ({"file": "SKILL.md", "section": "Missing"}, False),
        ({"file": "SKILL.md", "lines": [1, 5]}, True),
        ({"file": "SKILL.md", "lines": [40, 999]}, False),
        ({"file": "references/new.md", "section": "X", "new_section": True}, True),
        ({"file": "SKILL.md", "new_section": True}, False),
        ({"file": "../etc/passwd"}, False),
        ({"file": "references/tools.json"}, True),
    ],
)
def test_validate_location(template_skill, loc, ok):
    vfs = Vfs()
    template_skill.write_to(vfs)
    assert (D.validate_location(vfs, loc) is None) is ok


def test_default_plan_orders_by_case_count(template_skill, report):
    plan = D.load_plan(D.default_plan(report, template_skill))
    assert [p.categories for p in plan] == [["style"], ["clarification"], ["knowledge"], ["tool"]]
    assert plan[0].locations[0].new_section


def test_empty_report(template_skill):
    rep = aggregate([record_from_severities("ok", {})])
    with pytest.raises(D.DiagnoseError) as exc:
        D.diagnose(Gateway(ScriptedProvider.from_mapping({})), rep, template_skill)
    assert exc.value.code == "empty_plan"


def test_plan_item_validation():
    with pytest.raises(ValueError):
        D.PlanItem(0, (("a:b", 1),), (), "x")
    with pytest.raises(ValueError):
        D.PlanItem(1, (), (), "x")
    with pytest.raises(ValueError):
        D.PlanItem(1, (("a:b", 1),), (), "x", risk="extreme")
