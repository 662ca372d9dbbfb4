from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillforge import optimizer as O
from skillforge.aggregator import aggregate
from skillforge.diagnostician import Location, PlanItem
from skillforge.llm import Gateway, ScriptedProvider
from skillforge.search import FailingSearch, FixtureSearch
from skillforge.skill import parse_skill_md
from skillforge.vfs import Vfs

from failure_fixture import build_records
from oracles import as_text, lcs_length, random_edit_script
from skill_fixtures import TEMPLATE

BG = Location("SKILL.md", "Background Knowledge")
AD = Location("SKILL.md", "Case Type: Access Denied")


def item(priority=1, addresses=(("knowledge:missing", 48),), loc=BG, **kw):
    return PlanItem(priority, addresses, (loc,), kw.pop("desc", "change"), **kw)


@pytest.fixture
def report():
    return aggregate(build_records(), k=5)


def run(template_skill, report, plan, script, **kw):
    vfs = Vfs()
    template_skill.write_to(vfs)
    gw = Gateway(ScriptedProvider.from_mapping(script))
    result, new = O.apply_plan(gw, plan, template_skill, vfs, report=report, **kw)
    return result, new, vfs


# -- additivity ------------------------------------------------------------


def test_additivity_pure_insertion_passes():
    old = "a\nb\nc\n"
    assert O.enforce_additivity(old, "a\nx\nb\nc\ny\n").passed


def test_additivity_deletion_fails_with_span():
    res = O.enforce_additivity("a\nb\nc\nd\n", "a\nd\n")
    assert not res.passed
    assert res.violations == (O.DiffSpan(2, 3, ("b", "c")),)


def test_additivity_authorized_replace():
    old, new = "a\nwrong fact\nc\n", "a\nright fact\nc\n"
    act = O.EditAction(O.REPLACE_SPAN, "SKILL.md", "", "right fact", 1, ("T1",), "knowledge", "wrong fact")
    assert O.enforce_additivity(old, new, [act], [item(defect_kind="incorrect")]).passed
    assert not O.enforce_additivity(old, new, [act], [item(defect_kind="missing")]).passed
    assert not O.enforce_additivity(old, new, [], [item(defect_kind="incorrect")]).passed


def test_additivity_moved_lines_allowed():
    assert O.enforce_additivity("a\nb\n", "a\n", moved_lines=["b"]).passed
    # multiplicity matters: one allowance covers one copy
    assert not O.enforce_additivity("b\nb\n", "", moved_lines=["b"]).passed


@pytest.mark.parametrize("seed", range(25))
def test_additivity_random_scripts_match_lcs(seed):
    rng = random.Random(seed)
    old = [rng.choice(("- a", "- b", "## X", "", "1. c")) for _ in range(rng.randint(0, 25))]
    new = random_edit_script(rng, old, rng.randint(0, 8), allow_delete=seed % 2 == 1)
    res = O.enforce_additivity(as_text(old), as_text(new))
    removed = len(old) - lcs_length(old, new)
    assert res.passed == (removed == 0)
    assert sum(len(v.lines) for v in res.violations) == removed


@given(st.lists(st.sampled_from(["a", "b", "c", ""]), max_size=15), st.data())
def test_insert_only_always_passes(old, data):
    new = list(old)
    for _ in range(data.draw(st.integers(0, 5))):
        new.insert(data.draw(st.integers(0, len(new))), data.draw(st.sampled_from(["a", "z", ""])))
    assert O.enforce_additivity("\n".join(old), "\n".join(new)).passed
    assert O.is_subsequence(old, new)


# -- placement ---------------------------------------------------------------


def test_place_knowledge_in_background():
    text, p = O.place_content(TEMPLATE, "knowledge")
    assert p.section == "Background Knowledge" and not p.created
    assert text.splitlines()[p.line - 1] == "- Signed URLs expire after the time set at signing."


def test_place_faq_entry():
    _, p = O.place_content(TEMPLATE, "faq_entry")
    assert p.section == "FAQ"


def test_place_style_rule_creates_guidelines_before_faq():
    text, p = O.place_content(TEMPLATE, "style_rule")
    assert p.created and p.section == "Response Guidelines"
    titles = [s.title for s in parse_skill_md(text).sections]
    assert titles.index("Response Guidelines") == titles.index("FAQ") - 1


def test_place_tool_rule_after_tool_line():
    text, p = O.place_content(TEMPLATE, "tool_rule", tool="request_log_lookup")
    lines = text.splitlines()
    assert p.section == "Case Type: Access Denied"
    # after the step and its nested condition line
    assert lines[p.line - 1].strip().startswith("- If the request id is missing")
    assert p.indent == "   "


def test_place_clarification_rule_after_gather():
    _, p = O.place_content(TEMPLATE, "clarification_rule", section="Case Type: Upload Failure")
    lines = TEMPLATE.splitlines()
    assert p.section == "Case Type: Upload Failure"
    assert "EntityTooLarge" in lines[p.line - 1]


def test_place_knowledge_creates_background():
    text, p = O.place_content("## FAQ\n- q\n", "knowledge")
    assert p.created and text.startswith("## Background Knowledge")


def test_place_bad_kind():
    with pytest.raises(O.OptimizerError) as exc:
        O.place_content(TEMPLATE, "poem")
    assert exc.value.code == "bad_content_kind"


@pytest.mark.parametrize(
    "auth,count,cls,placement",
    [
        (True, 1, O.OFFICIAL_DOC, "link_citation"),
        (False, 5, O.HIGH_FREQUENCY_STABLE, "skill_section"),
        (False, 4, O.LONG_TAIL, "faq"),
    ],
)
def test_classify_knowledge(auth, count, cls, placement):
    assert O.classify_knowledge(auth, count) == cls
    assert O.KnowledgeItem("x", cls).placement == placement


def test_merge_items_shared_location():
    a = item(1, (("knowledge:missing", 48),))
    b = item(3, (("knowledge:not_surfaced", 19),), risk="medium")
    c = item(2, (("tool:missed_call", 34),), loc=AD)
    merged, notes = O.merge_items([a, b, c])
    assert [m.priority for m in merged] == [1, 2]
    assert merged[0].addresses == (("knowledge:missing", 48), ("knowledge:not_surfaced", 19))
    assert merged[0].risk == "medium"
    assert notes == [{"merged_into": 1, "priorities": [1, 3]}]


# -- apply_plan --------------------------------------------------------------


def test_apply_inserts_knowledge(template_skill, report):
    plan = [item()]
    script = {"optimize:v0:p1": {"edits": [{"content_kind": "knowledge", "content": "Endpoints follow oss-<region>.", "case_ids": ["T000#1"]}]}}
    result, new, vfs = run(template_skill, report, plan, script)
    assert new.version == 1 and result.new_version == 1
    bg = new.skill_md.find("Background Knowledge")
    assert "- Endpoints follow oss-<region>." in bg.body_lines
    assert O.is_subsequence(TEMPLATE.splitlines(), new.skill_md.render().splitlines())
    assert result.applied[0].justification == ("T000#1",)
    assert "+- Endpoints follow oss-<region>." in result.diff
    assert vfs.versions() == ["pre-edit-v0", "v1"]


def test_apply_skips_duplicate_and_falls_back_to_representatives(template_skill, report):
    script = {
        "optimize:v0:p1": {
            "edits": [
                {"content_kind": "knowledge", "content": "Buckets are regional; the endpoint must match the bucket region.", "case_ids": []},
                {"content_kind": "knowledge", "content": "Use the internal endpoint inside the VPC.", "case_ids": ["unknown-id"]},
            ]
        },
    }
    result, new, _ = run(template_skill, report, [item()], script)
    assert [s.reason for s in result.skipped] == [O.DUPLICATE]
    assert len(result.applied) == 1
    assert result.applied[0].justification  # representatives of the knowledge category


def test_apply_replace_requires_incorrect(template_skill, report):
    old = "Signed URLs expire after the time set at signing."
    edit = {"content_kind": "knowledge", "content": "Signed URLs expire at the time set at signing, at most 7 days.", "replace": old, "case_ids": ["T067#1"]}
    script = {"optimize:v0:p1": {"edits": [edit]}}
    result, new, _ = run(template_skill, report, [item(defect_kind="incorrect", addresses=(("knowledge:incorrect", 13),))], script)
    assert result.applied[0].kind == O.REPLACE_SPAN
    assert old not in new.skill_md.render()


def test_replace_on_missing_item_is_skipped(template_skill, report):
    old = "Signed URLs expire after the time set at signing."
    script = {
        "optimize:v0:p1": {
            "edits": [
                {"content_kind": "knowledge", "content": "new", "replace": old, "case_ids": ["T000#1"]},
                {"content_kind": "knowledge", "content": "Lifecycle runs daily.", "case_ids": ["T000#1"]},
            ]
        }
    }
    result, new, _ = run(template_skill, report, [item(defect_kind="missing")], script)
    assert [s.reason for s in result.skipped] == [O.VALIDATION_FAILURE]
    assert old in new.skill_md.render()


def test_validation_failure_skips_unknown_tool(template_skill, report):
    script = {
        "optimize:v0:p1": {
            "edits": [
                {"content_kind": "tool_rule", "content": "Then call `ghost_tool` for details.", "tool": "bucket_info", "case_ids": ["T000#1"]},
                {"content_kind": "tool_rule", "content": "Always call `bucket_info` before quoting a policy.", "tool": "bucket_info", "case_ids": ["T000#1"]},
            ]
        }
    }
    plan = [item(addresses=(("tool:missed_call", 34),), loc=AD)]
    result, new, _ = run(template_skill, report, plan, script)
    assert [s.reason for s in result.skipped] == [O.VALIDATION_FAILURE]
    assert "   - Always call `bucket_info` before quoting a policy." in new.skill_md.render().splitlines()


def test_risk_gate(template_skill, report):
    plan = [item(risk="high")]
    script = {"optimize:v0:p1": {"edits": [{"content_kind": "knowledge", "content": "fact", "case_ids": ["T000#1"]}]}}
    with pytest.raises(O.OptimizerError) as exc:
        run(template_skill, report, plan, script)
    assert exc.value.code == "plan_unexecutable"
    result, new, _ = run(template_skill, report, plan, script, allow_high_risk=True)
    assert new.version == 1 and not result.skipped


def test_style_and_example_go_to_guidelines(template_skill, report):
    plan = [item(addresses=(("style:verbose", 78),), loc=Location("SKILL.md", "Response Guidelines", new_section=True))]
    script = {
        "optimize:v0:p1": {
            "edits": [
                {"content_kind": "style_rule", "content": "Keep replies under five sentences.", "case_ids": ["T000#1"]},
                {"content_kind": "example", "content": "\"Your bucket is in cn-east; use that endpoint.\"", "case_ids": ["T000#1"]},
            ]
        }
    }
    result, new, _ = run(template_skill, report, plan, script)
    sec = new.skill_md.find("Response Guidelines")
    assert sec.body_lines[:2] == ["- Keep replies under five sentences.", "   - Example: \"Your bucket is in cn-east; use that endpoint.\""]
    assert result.applied[0].kind == O.APPEND_SECTION


def test_failure_restores_vfs_byte_exact(template_skill, report):
    vfs = Vfs()
    template_skill.write_to(vfs)
    before = dict(vfs.nodes)
    gw = Gateway(ScriptedProvider.from_mapping({"optimize:v0:p1": {"edits": [{"content_kind": "knowledge", "content": "x fact", "case_ids": ["T000#1"]}]}}))
    with pytest.raises(O.OptimizerError) as exc:
        O.apply_plan(gw, [item()], template_skill, vfs, report=report, max_lines=20)
    assert exc.value.code == "budget_unresolvable"
    assert dict(vfs.nodes) == before
    assert vfs.files() == {"/skill/" + k: v for k, v in template_skill.files().items()}


def test_search_results_and_failures_recorded(template_skill, report):
    articles = [{"title": "Endpoints", "url": "https://docs.example/endpoints", "snippet": "regional endpoints", "body": "oss regional endpoints", "authoritative": True}]
    edit = {"content_kind": "knowledge", "content": "Regional endpoints", "title": "Endpoint list", "source_url": "https://docs.example/endpoints", "case_ids": ["T000#1"]}
    plan = [item(needs_knowledge_search=True, search_queries=("regional endpoints",))]
    vfs = Vfs()
    template_skill.write_to(vfs)
    gw = Gateway(ScriptedProvider.from_mapping({"optimize:v0:p1": {"edits": [edit]}}))
    result, new = O.apply_plan(gw, plan, template_skill, vfs, search=FixtureSearch(articles), report=report)
    assert result.searches[0]["results"] == ["https://docs.example/endpoints"]
    assert "- Endpoint list: see https://docs.example/endpoints" in new.skill_md.render()
    vfs2 = Vfs()
    template_skill.write_to(vfs2)
    gw2 = Gateway(ScriptedProvider.from_mapping({"optimize:v0:p1": {"edits": [edit]}}))
    result2, _ = O.apply_plan(gw2, plan, template_skill, vfs2, search=FailingSearch(), report=report)
    assert "error" in result2.searches[0]


def test_long_tail_knowledge_goes_to_faq(template_skill, report):
    plan = [item(addresses=(("knowledge:missing", 2),))]
    script = {"optimize:v0:p1": {"edits": [{"content_kind": "knowledge", "content": "Rare: archive restore takes 1 minute.", "case_ids": ["T000#1"]}]}}
    result, new, _ = run(template_skill, report, plan, script)
    assert "- Rare: archive restore takes 1 minute." in new.skill_md.find("FAQ").body_lines
    assert result.applied[0].content_kind == "faq_entry"


@settings(max_examples=30, deadline=None)
@given(st.lists(st.text(alphabet="abcdefgh ", min_size=3, max_size=30).filter(lambda s: s.strip()), min_size=1, max_size=6))
def test_apply_plan_is_additive(contents):
    from skillforge.skill import parse_skill_files
    from skill_fixtures import TEMPLATE_FILES

    skill = parse_skill_files(TEMPLATE_FILES)
    rep = aggregate(build_records(), k=5)
    edits = [{"content_kind": "knowledge", "content": c, "case_ids": ["T000#1"]} for c in contents]
    vfs = Vfs()
    skill.write_to(vfs)
    gw = Gateway(ScriptedProvider.from_mapping({"optimize:v0:p1": {"edits": edits}}))
    _, new = O.apply_plan(gw, [item()], skill, vfs, report=rep)
    assert O.is_subsequence(TEMPLATE.splitlines(), new.skill_md.render().splitlines())
