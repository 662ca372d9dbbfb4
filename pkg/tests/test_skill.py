from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from skillforge import layout
from skillforge import skill as S
from skillforge.vfs import Vfs

from oracles import count_budget
from skill_fixtures import TEMPLATE, TEMPLATE_FILES, TOOLS, fixture_skills

SKILLS = fixture_skills()


def test_fixture_corpus_is_large_enough():
    assert len(SKILLS) >= 20


@pytest.mark.parametrize("name", sorted(SKILLS))
def test_round_trip_is_byte_exact(name):
    text = SKILLS[name]
    doc = S.parse_skill_md(text)
    assert S.serialize_skill_md(doc) == text
    again = S.parse_skill_md(S.serialize_skill_md(doc))
    assert again.structure() == doc.structure()
    assert (doc.line_count, doc.char_count) == count_budget(text)


def test_template_sections_classified():
    doc = S.parse_skill_md(TEMPLATE)
    kinds = [s.kind for s in doc.sections]
    assert kinds == [S.BACKGROUND, S.TRIAGE, S.HANDLING, S.HANDLING, S.FAQ, S.REFERENCE_INDEX]
    assert doc.frontmatter["name"] == "oss-support"
    assert doc.find("case type:  access denied").title == "Case Type: Access Denied"
    assert doc.section_start_lines()[0] == 8


def test_fenced_heading_is_not_a_section():
    doc = S.parse_skill_md(SKILLS["variant_04"])
    assert [s.title for s in doc.sections] == ["Case Type: Code"]


def test_chinese_headings_classified():
    doc = S.parse_skill_md(SKILLS["variant_05"])
    assert [s.kind for s in doc.sections] == [S.BACKGROUND, S.TRIAGE, S.FAQ, S.REFERENCE_INDEX]


@pytest.mark.parametrize(
    "title,kind",
    [
        ("Background Knowledge", S.BACKGROUND),
        ("Case-Type Triage", S.TRIAGE),
        ("Case Type: Refund", S.HANDLING),
        ("FAQ", S.FAQ),
        ("Reference Index", S.REFERENCE_INDEX),
        ("Response Guidelines", S.OTHER),
    ],
)
def test_classify_heading(title, kind):
    assert S.classify_heading(title) == kind


@pytest.mark.parametrize(
    "lines,chars,within,over_l,over_c",
    [
        (499, 9000, True, 0, 0),
        (500, 9000, True, 0, 0),
        (501, 9000, False, 1, 0),
        (400, 10001, False, 0, 1),
        (400, 10000, True, 0, 0),
    ],
)
def test_check_budget_boundaries(lines, chars, within, over_l, over_c):
    body = "x" * (chars - lines)  # every line ends with a newline
    text = body + "\n" * lines
    res = S.check_budget(text)
    assert (res.line_count, res.char_count) == (lines, chars)
    assert (res.within_budget, res.overflow_lines, res.overflow_chars) == (within, over_l, over_c)


def test_exactly_500_line_fixture_passes_and_501_fails():
    text = SKILLS["exactly_500_lines"]
    assert S.check_budget(text).within_budget
    assert not S.check_budget(text + "- one more\n").within_budget


@given(st.text(alphabet="ab\n", max_size=60))
def test_count_lines_matches_oracle(text):
    assert S.count_lines(text) == count_budget(text)[0]


def test_template_package_is_valid(template_skill):
    assert S.validate_package(template_skill) == []
    assert template_skill.name == "oss-support"
    assert template_skill.scenario == "oss"
    assert template_skill.files() == dict(sorted(TEMPLATE_FILES.items()))


@pytest.mark.parametrize(
    "mutate,rule",
    [
        (lambda f: f.update({"SKILL.md": "no sections\n"}), "no_sections"),
        (lambda f: f.update({"SKILL.md": f["SKILL.md"] + "## FAQ\n- again\n"}), "duplicate_section"),
        (lambda f: f.update({"SKILL.md": f["SKILL.md"] + "## Case Type: Quota\n1. Explain the limit\n"}), "missing_escalation"),
        (lambda f: f.update({"references/tools.json": json.dumps(TOOLS + TOOLS[:1])}), "duplicate_tool"),
        (lambda f: f.update({"SKILL.md": f["SKILL.md"] + "## Case Type: Z\n1. call `ghost_tool`, else escalate\n"}), "unknown_tool"),
        (lambda f: f.pop("references/knowledge_endpoints.md"), "missing_reference"),
        (
            lambda f: f.update(
                {"references/tools.json": json.dumps([{"name": "t", "parameters": [{"name": "p", "required": True}]}])}
            ),
            "undocumented_parameter",
        ),
    ],
)
def test_validation_rules(mutate, rule):
    files = dict(TEMPLATE_FILES)
    mutate(files)
    pkg = S.parse_skill_files(files)
    assert rule in {v.rule for v in S.validate_package(pkg)}


def test_bad_tools_json():
    files = dict(TEMPLATE_FILES, **{"references/tools.json": "{not json"})
    with pytest.raises(S.SkillError) as exc:
        S.parse_skill_files(files)
    assert exc.value.code == "bad_tools_json"


def test_tool_schema_round_trip():
    tools = S.load_tools(json.dumps(TOOLS))
    assert json.loads(S.dump_tools(tools)) == TOOLS


def test_missing_skill_md():
    with pytest.raises(S.SkillError) as exc:
        S.parse_skill(Vfs(), "/skill")
    assert exc.value.code == "missing_skill_md"


def test_commit_version_snapshots(template_skill):
    fs = Vfs()
    template_skill.write_to(fs)
    fs.write_file("/skill/SKILL.md", TEMPLATE + "\n## Response Guidelines\n- Keep it short.\n")
    new = S.commit_version(template_skill, fs)
    assert new.version == 1 and fs.versions() == ["v1"]
    fs.write_file("/skill/SKILL.md", "nothing here\n")
    with pytest.raises(S.SkillError) as exc:
        S.commit_version(new, fs)
    assert exc.value.code == "invalid_skill"


def test_load_skill_dir(tmp_path, template_skill):
    fs = Vfs()
    template_skill.write_to(fs)
    fs.export_tree("/skill", tmp_path / "s")
    pkg, _ = S.load_skill_dir(str(tmp_path / "s"))
    assert pkg.files() == template_skill.files()


def test_offload_details_moves_exemplars():
    handling = "## Case Type: Big\n### Workflow\n1. step, escalate if stuck\n### Exemplars\n" + "".join(
        f"- exemplar line {i}\n" for i in range(60)
    )
    text = "## Background\n- fact\n" + handling + "## Reference Index\n- `references/tools.json`\n"
    res = layout.offload_details(text, {}, max_lines=30)
    assert S.check_budget(res.text, 30).within_budget
    assert res.new_files == ("details_case_type_big.md",)
    assert "references/details_case_type_big.md" in res.text
    assert "- exemplar line 59" in res.references["details_case_type_big.md"]


def test_offload_unresolvable():
    text = "## Background\n" + "- fact\n" * 40
    with pytest.raises(S.SkillError) as exc:
        layout.offload_details(text, {}, max_lines=10)
    assert exc.value.code == "budget_unresolvable"
