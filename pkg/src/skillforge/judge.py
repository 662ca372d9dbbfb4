"""Reference-consistency judging and Strict/Lenient consistency rates."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Any, Iterable, Mapping, Sequence

from .corpus import Turn
from .llm import Gateway, LLMError
from .schemas import VERDICTS

logger = logging.getLogger(__name__)

BAD_VERDICTS = ("partial", "inconsistent")
JUDGE_FAILURE = "judge_failure"

JUDGE_SYSTEM = """\
You review replies written by an AI support agent for a cloud provider. Decide
whether the agent's reply is acceptable at this point of the conversation.

Inputs: the ticket summary (problem, history and how it was finally resolved),
the dialogue so far, the reply a human expert actually sent at this turn, and
the agent's reply.

First reduce the expert reply to its core action. Ignore greetings, sign-offs
and reminders; the expert reply may span several concatenated messages.

Verdicts:
- consistent: the agent performs the same core action (asks for the same
  information, shares the same link, guides the same operation), OR it solves
  the customer's problem another way that agrees with the final resolution.
- partial: right direction without contradictions, but key details are
  missing, or the reply is padded or less direct than the expert's.
- inconsistent: the expert asked for information (a screenshot, a domain, an
  ID) and the agent skipped that in favour of a generic fix; the reply states
  something false per the expert reply or summary; it is off-topic; it tells
  the customer to open a ticket or contact human support; or it reveals that it
  is an AI.

When the expert reply is very short, a simple equivalent reply suffices and
extra detail is fine unless wrong. A polite acknowledgement answering thanks is
consistent. The expert reply is one good answer, not the only one.

Answer with one JSON object and nothing else:
{"reason": "...", "verdict": "consistent" | "partial" | "inconsistent",
 "ref_core_action": "...", "actual_action": "..."}
"""


class JudgeError(Exception):
    def __init__(self, code: str, message: str = "") -> None:
        super().__init__(message or code)
        self.code = code


@dataclass(frozen=True)
class JudgeVerdict:
    verdict: str
    ref_core_action: str
    actual_action: str
    reason: str

    def __post_init__(self) -> None:
        if self.verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}")
        for name in ("ref_core_action", "actual_action", "reason"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be non-empty")


@dataclass(frozen=True)
class CaseVerdict:
    """A judged task, as persisted one per line in verdicts.jsonl."""

    case_id: str
    verdict: str
    ref_core_action: str
    actual_action: str
    reason: str
    audit: bool = False

    @classmethod
    def of(cls, case_id: str, v: JudgeVerdict, audit: bool = False) -> CaseVerdict:
        return cls(case_id, v.verdict, v.ref_core_action, v.actual_action, v.reason, audit)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> CaseVerdict:
        return cls(d["case_id"], d["verdict"], d["ref_core_action"], d["actual_action"], d["reason"], bool(d.get("audit", False)))


def format_history(history: Sequence[Turn]) -> str:
    if not history:
        return "(no prior messages)"
    return "\n".join(f"[{t.role}] {t.text}" for t in history)


def judge_prompt(summary: str, history: Sequence[Turn], reference: str, actual: str) -> str:
    payload = {
        "ticket_summary": summary,
        "dialogue_history": format_history(history),
        "reference_response": reference,
        "actual_response": actual,
    }
    return "Evaluate this reply.\n```json\n" + json.dumps(payload, ensure_ascii=False, indent=1) + "\n```"


def judge_case(
    gateway: Gateway,
    summary: str,
    history: Sequence[Turn],
    reference: str,
    actual: str,
    tag: str = "judge",
) -> tuple[JudgeVerdict, bool]:
    """Return the verdict and whether it needs audit (judge output unusable)."""
    if not reference.strip():
        raise JudgeError("empty_reference", "reference response is empty")
    try:
        resp = gateway.ask(tag, JUDGE_SYSTEM, judge_prompt(summary, history, reference, actual), "judge_verdict")
    except LLMError as exc:
        if exc.code != "schema_violation":
            raise
        logger.warning("judge output unusable for %s; counting as inconsistent", tag)
        return JudgeVerdict("inconsistent", "(unavailable)", "(unavailable)", JUDGE_FAILURE), True
    p = resp.parsed
    return JudgeVerdict(p["verdict"], p["ref_core_action"], p["actual_action"], p["reason"]), False


def route_bad_cases(verdicts: Iterable[CaseVerdict], include_audited: bool = False) -> list[str]:
    """Case ids whose verdict is partial or inconsistent.

    Judge failures are counted as inconsistent for metrics but left out of
    failure analysis unless ``include_audited``.
    """
    return [v.case_id for v in verdicts if v.verdict in BAD_VERDICTS and (include_audited or not v.audit)]


@dataclass(frozen=True)
class CrReport:
    n_total: int
    n_consistent: int
    n_partial: int
    n_inconsistent: int
    strict_cr: float
    lenient_cr: float

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def percent(self) -> tuple[str, str]:
        return f"{100 * self.strict_cr:.2f}", f"{100 * self.lenient_cr:.2f}"


def compute_cr(verdicts: Iterable[str | CaseVerdict | JudgeVerdict]) -> CrReport:
    labels = [v if isinstance(v, str) else v.verdict for v in verdicts]
    if not labels:
        raise JudgeError("empty_input", "no verdicts to score")
    unknown = set(labels) - set(VERDICTS)
    if unknown:
        raise JudgeError("bad_verdict", f"unknown verdict labels {sorted(unknown)}")
    c = Counter(labels)
    n = len(labels)
    return CrReport(
        n,
        c["consistent"],
        c["partial"],
        c["inconsistent"],
        c["consistent"] / n,
        (c["consistent"] + c["partial"]) / n,
    )


def mean_cr(reports: Sequence[CrReport]) -> dict[str, float]:
    """Average over repeated evaluation runs."""
    if not reports:
        raise JudgeError("empty_input", "no runs to average")
    return {
        "strict_cr": sum(r.strict_cr for r in reports) / len(reports),
        "lenient_cr": sum(r.lenient_cr for r in reports) / len(reports),
        "runs": len(reports),
    }
