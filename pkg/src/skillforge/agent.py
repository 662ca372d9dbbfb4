"""Task execution with a skill loaded as a meta-tool.

The skill's SKILL.md sits in the system context on every step; reference files
enter the context only when the agent reads them through the VFS.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .corpus import Task
from .judge import format_history
from .llm import ChatRequest, Gateway, LLMError, Message
from .skill import SkillPackage
from .vfs import Vfs, normalize_path

logger = logging.getLogger(__name__)

DEFAULT_MAX_STEPS = 12
READ_FILE = "read_file"
SKILL_ROOT = "/skill"
DEGRADED_REPLY = "I'm still checking this for you and will follow up with the details shortly."

THOUGHT = "thought"
TOOL_CALL = "tool_call"
TOOL_RESULT = "tool_result"
FINAL = "final_response"


class ExecError(Exception):
    def __init__(self, code: str, message: str = "") -> None:
        super().__init__(message or code)
        self.code = code


@dataclass(frozen=True)
class TraceStep:
    kind: str
    text: str = ""
    tool: str | None = None
    args: Mapping[str, Any] | None = None
    ok: bool = True
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind, "text": self.text}
        if self.tool is not None:
            d["tool"] = self.tool
        if self.args is not None:
            d["args"] = dict(self.args)
        if not self.ok:
            d["ok"] = False
        if self.error is not None:
            d["error"] = self.error
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TraceStep:
        return cls(d["kind"], d.get("text", ""), d.get("tool"), d.get("args"), d.get("ok", True), d.get("error"))


@dataclass
class ExecutionTrace:
    task_id: str
    skill_version: int
    steps: list[TraceStep] = field(default_factory=list)
    loaded_refs: list[str] = field(default_factory=list)
    token_usage: dict[str, int] = field(default_factory=dict)
    degraded: bool = False

    @property
    def response(self) -> str:
        return self.steps[-1].text if self.steps and self.steps[-1].kind == FINAL else ""

    def tool_calls(self) -> list[TraceStep]:
        return [s for s in self.steps if s.kind == TOOL_CALL]

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "skill_version": self.skill_version,
            "steps": [s.to_dict() for s in self.steps],
            "loaded_refs": list(self.loaded_refs),
            "token_usage": dict(self.token_usage),
            "degraded": self.degraded,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ExecutionTrace:
        return cls(
            d["task_id"],
            d["skill_version"],
            [TraceStep.from_dict(s) for s in d["steps"]],
            list(d.get("loaded_refs", [])),
            dict(d.get("token_usage", {})),
            bool(d.get("degraded", False)),
        )

    def save(self, directory: str | Path) -> Path:
        path = Path(directory) / (safe_name(self.task_id) + ".json")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), ensure_ascii=False, indent=1) + "\n", encoding="utf-8")
        return path


def safe_name(task_id: str) -> str:
    return task_id.replace("#", "__").replace("/", "_")


def check_trace(trace: ExecutionTrace, tool_names: Iterable[str]) -> list[str]:
    """Return violated trace invariants."""
    problems = []
    allowed = set(tool_names) | {READ_FILE}
    finals = [i for i, s in enumerate(trace.steps) if s.kind == FINAL]
    if len(finals) != 1 or finals[0] != len(trace.steps) - 1:
        problems.append("exactly one final response must close the trace")
    for i, s in enumerate(trace.steps):
        if s.kind == TOOL_CALL:
            nxt = trace.steps[i + 1] if i + 1 < len(trace.steps) else None
            if nxt is None or nxt.kind != TOOL_RESULT:
                problems.append(f"tool call at step {i} lacks a result")
            elif s.tool not in allowed and nxt.ok:
                problems.append(f"unknown tool {s.tool!r} returned a successful result")
    if trace.response.strip() == "":
        problems.append("empty final response")
    return problems


def args_fingerprint(args: Mapping[str, Any] | None) -> str:
    return hashlib.sha256(json.dumps(args or {}, sort_keys=True, ensure_ascii=False).encode()).hexdigest()[:12]


@dataclass
class ToolBehavior:
    default: str = "echo"  # echo | canned | error
    canned: str = ""
    responses: dict[str, str] = field(default_factory=dict)  # args fingerprint -> result


class ToolSimulator:
    """Deterministic stand-in for the verified production tools."""

    def __init__(self, tools: Mapping[str, ToolBehavior] | None = None) -> None:
        self.tools: dict[str, ToolBehavior] = dict(tools or {})

    def call(self, name: str, args: Mapping[str, Any] | None) -> tuple[bool, str]:
        b = self.tools.get(name)
        if b is None:
            b = ToolBehavior()
        fp = args_fingerprint(args)
        if fp in b.responses:
            return True, b.responses[fp]
        if "*" in b.responses:
            return True, b.responses["*"]
        if b.default == "canned":
            return True, b.canned
        if b.default == "error":
            return False, b.canned or f"{name} failed"
        return True, json.dumps({"tool": name, "args": dict(args or {})}, sort_keys=True, ensure_ascii=False)

    def to_dict(self) -> dict[str, Any]:
        return {n: {"default": b.default, "canned": b.canned, "responses": dict(b.responses)} for n, b in sorted(self.tools.items())}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ToolSimulator:
        return cls({n: ToolBehavior(v.get("default", "echo"), v.get("canned", ""), dict(v.get("responses", {}))) for n, v in d.items()})

    @classmethod
    def load(cls, path: str | Path) -> ToolSimulator:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


AGENT_SYSTEM = """\
You are a cloud technical-support agent answering a customer inside a support
ticket. Follow the loaded skill. Work step by step and reply with exactly one
JSON object per step:
  {"action": "thought", "thought": "..."}
  {"action": "tool_call", "tool": "<tool name>", "args": {...}}
  {"action": "read_file", "path": "references/<file>"}
  {"action": "final", "response": "<customer-facing reply>"}
Only call tools listed below. Never suggest opening a ticket or contacting
human support, and never mention that you are an AI.
"""


def build_system_context(skill: SkillPackage) -> str:
    tools = [{"name": t.name, "description": t.description, "parameters": [p.to_dict() for p in t.parameters]} for t in skill.tools]
    refs = sorted(skill.references)
    return (
        AGENT_SYSTEM
        + f"\n=== LOADED SKILL: {skill.name} ({skill.label}) ===\n"
        + skill.skill_md.render()
        + "\n=== TOOLS ===\n"
        + json.dumps(tools, ensure_ascii=False)
        + "\n=== REFERENCE FILES ===\n"
        + ("\n".join(f"references/{r}" for r in refs) or "(none)")
        + "\n"
    )


def task_message(task: Task) -> str:
    payload = {
        "task_id": task.id,
        "scenario": task.scenario,
        "dialogue_history": format_history(task.history),
        "customer_message": task.query,
    }
    return "Handle the customer's latest message.\n```json\n" + json.dumps(payload, ensure_ascii=False, indent=1) + "\n```"


def select_skill(task: Task, skills: Sequence[SkillPackage]) -> SkillPackage:
    if not skills:
        raise ExecError("no_matching_skill", "no candidate skills")
    if len(skills) == 1:
        return skills[0]
    for s in skills:
        if s.scenario and s.scenario == task.scenario:
            return s
    raise ExecError("no_matching_skill", f"no skill tagged for scenario {task.scenario!r}")


def execute_task(
    gateway: Gateway,
    task: Task,
    skill: SkillPackage,
    tools: ToolSimulator,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> tuple[str, ExecutionTrace]:
    """Run the reason/act loop for one task and return (reply, trace)."""
    vfs = Vfs()
    skill.write_to(vfs, SKILL_ROOT)
    vfs.chdir(SKILL_ROOT)
    trace = ExecutionTrace(task.id, skill.version)
    system = build_system_context(skill)
    messages: list[tuple[str, str]] = [("user", task_message(task))]
    declared = skill.tool_names()
    tag = f"exec:v{skill.version}:{task.id}"
    last_thought = ""
    for _ in range(max_steps):
        req = ChatRequest(
            (Message("system", system),) + tuple(Message(r, c) for r, c in messages),
            tag,
            "agent_step",
            0.0,
        )
        try:
            resp = gateway.complete(req)
        except LLMError as exc:
            if exc.code != "schema_violation":
                raise
            trace.steps.append(TraceStep(THOUGHT, f"(unparseable step: {exc})", ok=False, error="schema_violation"))
            break
        for k, v in resp.usage.items():
            trace.token_usage[k] = trace.token_usage.get(k, 0) + v
        step = resp.parsed
        action = step["action"]
        messages.append(("assistant", json.dumps(step, ensure_ascii=False, sort_keys=True)))
        if action == "final":
            text = step["response"].strip()
            if not text:
                text = DEGRADED_REPLY
                trace.degraded = True
            trace.steps.append(TraceStep(FINAL, text))
            return text, trace
        if action == "thought":
            last_thought = step.get("thought", "")
            trace.steps.append(TraceStep(THOUGHT, last_thought))
            observation = "Noted. Continue."
        elif action == "read_file":
            path = step["path"]
            trace.steps.append(TraceStep(TOOL_CALL, tool=READ_FILE, args={"path": path}))
            res = vfs.read_file(path)
            if res.success:
                rel = normalize_path(path, SKILL_ROOT)[len(SKILL_ROOT) + 1:]
                if rel not in trace.loaded_refs:
                    trace.loaded_refs.append(rel)
                trace.steps.append(TraceStep(TOOL_RESULT, res.data, tool=READ_FILE))
                observation = f"Contents of {path}:\n{res.data}"
            else:
                trace.steps.append(TraceStep(TOOL_RESULT, res.message, tool=READ_FILE, ok=False, error=res.error))
                observation = f"read_file failed ({res.error}): {res.message}"
        else:
            name = step["tool"]
            args = step.get("args") or {}
            trace.steps.append(TraceStep(TOOL_CALL, tool=name, args=args))
            if name not in declared:
                msg = f"tool {name!r} is not available in this skill"
                trace.steps.append(TraceStep(TOOL_RESULT, msg, tool=name, ok=False, error="unknown_tool"))
                observation = f"Error: {msg}."
            else:
                ok, result = tools.call(name, args)
                trace.steps.append(TraceStep(TOOL_RESULT, result, tool=name, ok=ok, error=None if ok else "tool_error"))
                observation = f"Result of {name}: {result}" if ok else f"Error from {name}: {result}"
        messages.append(("user", observation))
    trace.degraded = True
    text = last_thought.strip() or DEGRADED_REPLY
    trace.steps.append(TraceStep(FINAL, text))
    logger.warning("task %s hit the step limit; returning degraded reply", task.id)
    return text, trace
