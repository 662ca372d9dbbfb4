from __future__ import annotations

import json

import pytest

from skillforge import agent as A
from skillforge.corpus import Task, Turn
from skillforge.llm import Gateway, LLMError, ScriptedProvider
from skillforge.skill import parse_skill_files

from conftest import scripted
from skill_fixtures import TEMPLATE_FILES


def task(tid: str = "T1", turn: int = 1, scenario: str = "oss") -> Task:
    return Task(tid, turn, (Turn("customer", "My upload returns 403"),), "Check the bucket policy.", scenario)


def run(steps, skill, tools=None, **kw):
    gw = scripted({"exec:v0:T1#1": steps})
    return A.execute_task(gw, task(), skill, tools or A.ToolSimulator(), **kw)


def test_tool_then_final(template_skill):
    steps = [
        {"action": "thought", "thought": "need logs"},
        {"action": "tool_call", "tool": "request_log_lookup", "args": {"request_id": "r1"}},
        {"action": "final", "response": "The policy denies PutObject."},
    ]
    reply, trace = run(steps, template_skill)
    assert reply == "The policy denies PutObject."
    assert [s.kind for s in trace.steps] == [A.THOUGHT, A.TOOL_CALL, A.TOOL_RESULT, A.FINAL]
    assert json.loads(trace.steps[2].text) == {"tool": "request_log_lookup", "args": {"request_id": "r1"}}
    assert not trace.degraded
    assert A.check_trace(trace, template_skill.tool_names()) == []


def test_unknown_tool_is_error_and_loop_continues(template_skill):
    steps = [{"action": "tool_call", "tool": "delete_everything", "args": {}}, {"action": "final", "response": "Done."}]
    reply, trace = run(steps, template_skill)
    assert reply == "Done."
    result = trace.steps[1]
    assert (result.ok, result.error) == (False, "unknown_tool")
    assert A.check_trace(trace, template_skill.tool_names()) == []


def test_step_limit_marks_degraded(template_skill):
    reply, trace = run({"action": "thought", "thought": "still thinking"}, template_skill, max_steps=3)
    assert trace.degraded
    assert reply == "still thinking"
    assert len(trace.steps) == 4 and trace.steps[-1].kind == A.FINAL


def test_empty_final_falls_back(template_skill):
    reply, trace = run({"action": "final", "response": "   "}, template_skill)
    assert reply == A.DEGRADED_REPLY and trace.degraded


def test_read_file_loads_reference(template_skill):
    steps = [
        {"action": "read_file", "path": "references/knowledge_endpoints.md"},
        {"action": "read_file", "path": "references/knowledge_endpoints.md"},
        {"action": "read_file", "path": "references/absent.md"},
        {"action": "final", "response": "Use the regional endpoint."},
    ]
    _, trace = run(steps, template_skill)
    assert trace.loaded_refs == ["references/knowledge_endpoints.md"]
    assert "# Endpoints" in trace.steps[1].text
    assert trace.steps[5].ok is False


def test_unparseable_step_is_degraded(template_skill):
    reply, trace = run("not json at all", template_skill)
    assert trace.degraded and reply == A.DEGRADED_REPLY
    assert trace.steps[0].error == "schema_violation"


def test_transport_error_propagates(template_skill):
    class Down:
        name = "down"

        def chat(self, request):
            raise LLMError("transport", "offline")

    with pytest.raises(LLMError):
        A.execute_task(Gateway(Down()), task(), template_skill, A.ToolSimulator())


def test_system_context_contains_skill_but_not_references(template_skill):
    ctx = A.build_system_context(template_skill)
    assert template_skill.skill_md.render() in ctx
    assert "references/knowledge_endpoints.md" in ctx
    assert "oss-<REGION_1>" not in ctx


@pytest.mark.parametrize(
    "steps,problem",
    [
        ([A.TraceStep(A.FINAL, "a"), A.TraceStep(A.FINAL, "b")], "exactly one final response must close the trace"),
        ([A.TraceStep(A.TOOL_CALL, tool="bucket_info"), A.TraceStep(A.FINAL, "a")], "tool call at step 0 lacks a result"),
        (
            [A.TraceStep(A.TOOL_CALL, tool="ghost"), A.TraceStep(A.TOOL_RESULT, "ok", tool="ghost"), A.TraceStep(A.FINAL, "a")],
            "unknown tool 'ghost' returned a successful result",
        ),
        ([A.TraceStep(A.FINAL, " ")], "empty final response"),
        ([A.TraceStep(A.THOUGHT, "x")], "exactly one final response must close the trace"),
    ],
)
def test_check_trace_violations(steps, problem):
    assert problem in A.check_trace(A.ExecutionTrace("t", 0, steps), ["bucket_info"])


def test_tool_simulator_behaviors(tmp_path):
    fp = A.args_fingerprint({"b": 1, "a": 2})
    assert fp == A.args_fingerprint({"a": 2, "b": 1})
    sim = A.ToolSimulator(
        {
            "lookup": A.ToolBehavior("canned", "generic", {fp: "specific"}),
            "broken": A.ToolBehavior("error"),
            "any": A.ToolBehavior(responses={"*": "wild"}),
        }
    )
    assert sim.call("lookup", {"a": 2, "b": 1}) == (True, "specific")
    assert sim.call("lookup", {}) == (True, "generic")
    assert sim.call("broken", {}) == (False, "broken failed")
    assert sim.call("any", {"q": 1}) == (True, "wild")
    assert sim.call("other", {"q": 1}) == (True, '{"args": {"q": 1}, "tool": "other"}')
    path = tmp_path / "tools.json"
    path.write_text(json.dumps(sim.to_dict()))
    assert A.ToolSimulator.load(path).to_dict() == sim.to_dict()


def test_select_skill():
    a = parse_skill_files(TEMPLATE_FILES)
    b_files = dict(TEMPLATE_FILES, **{"SKILL.md": TEMPLATE_FILES["SKILL.md"].replace("scenario: oss", "scenario: dns")})
    b = parse_skill_files(b_files)
    assert A.select_skill(task(scenario="dns"), [a, b]) is b
    assert A.select_skill(task(scenario="cdn"), [a]) is a
    for skills in ([], [a, b]):
        with pytest.raises(A.ExecError) as exc:
            A.select_skill(task(scenario="cdn"), skills)
        assert exc.value.code == "no_matching_skill"


def test_trace_round_trip_and_save(tmp_path, template_skill):
    _, trace = run([{"action": "tool_call", "tool": "bucket_info", "args": {"b": "x"}}, {"action": "final", "response": "ok"}], template_skill)
    assert A.ExecutionTrace.from_dict(json.loads(json.dumps(trace.to_dict()))) == trace
    path = trace.save(tmp_path)
    assert path.name == "T1__1.json"
    assert A.ExecutionTrace.from_dict(json.loads(path.read_text())) == trace


@pytest.mark.parametrize("tid,name", [("T1#2", "T1__2"), ("a/b#3", "a_b__3"), ("plain", "plain")])
def test_safe_name(tid, name):
    assert A.safe_name(tid) == name


def test_deterministic_replay(template_skill):
    steps = [{"action": "tool_call", "tool": "bucket_info", "args": {"b": "x"}}, {"action": "final", "response": "ok"}]
    one = run(steps, template_skill)[1].to_dict()
    two = run(steps, template_skill)[1].to_dict()
    assert one == two


def test_scripted_provider_strict_miss(template_skill):
    gw = Gateway(ScriptedProvider.from_mapping({}, strict=True))
    with pytest.raises(LLMError):
        A.execute_task(gw, task(), template_skill, A.ToolSimulator())
