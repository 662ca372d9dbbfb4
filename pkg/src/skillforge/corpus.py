"""Ticket corpora: JSONL loading, task derivation, chronological splits and PII checks."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable, Mapping

logger = logging.getLogger(__name__)

CUSTOMER = "customer"
AGENT = "agent"

# A reference turn made only of these phrases cannot advance the ticket.
BOILERPLATE_PHRASES = (
    "hello",
    "hi",
    "dear customer",
    "thank you for your inquiry",
    "thank you for contacting us",
    "thanks for contacting us",
    "thank you for your patience",
    "thank you",
    "thanks",
    "you're welcome",
    "you are welcome",
    "do you have any other questions",
    "is there anything else i can help you with",
    "is there anything else",
    "have a nice day",
    "have a great day",
    "glad to help",
    "happy to help",
    "best regards",
    "goodbye",
    "ok",
    "okay",
    "sure",
    "您好",
    "你好",
    "感谢您的咨询",
    "谢谢",
    "请问还有其他问题吗",
    "祝您生活愉快",
)

PLACEHOLDER = re.compile(r"<[A-Z][A-Z_]*_\d+>")


class CorpusError(Exception):
    def __init__(self, code: str, message: str = "") -> None:
        super().__init__(message or code)
        self.code = code


@dataclass(frozen=True)
class Turn:
    role: str
    text: str
    ts: str | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"role": self.role, "text": self.text}
        if self.ts is not None:
            d["ts"] = self.ts
        return d


@dataclass(frozen=True)
class Ticket:
    id: str
    scenario: str
    created_at: str
    summary: str
    turns: tuple[Turn, ...]
    operation_log: tuple[tuple[str, str], ...] = ()
    cited_refs: tuple[str, ...] = ()
    extra: Mapping[str, Any] = field(default_factory=dict)

    @property
    def created(self) -> datetime:
        return parse_ts(self.created_at)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Ticket:
        if not isinstance(d, Mapping):
            raise ValueError("ticket record must be an object")
        for key in ("id", "scenario", "created_at", "summary", "turns"):
            if key not in d:
                raise ValueError(f"missing field {key!r}")
        if not isinstance(d["summary"], str) or not d["summary"].strip():
            raise ValueError("summary must be non-empty text")
        parse_ts(d["created_at"])
        turns = []
        for t in d["turns"]:
            if not isinstance(t, Mapping) or t.get("role") not in (CUSTOMER, AGENT) or not isinstance(t.get("text"), str):
                raise ValueError("turns need role customer|agent and text")
            turns.append(Turn(t["role"], t["text"], t.get("ts")))
        stamps = [parse_ts(t.ts) for t in turns if t.ts is not None]
        if stamps != sorted(stamps):
            raise ValueError("turns are not in time order")
        log = []
        for entry in d.get("operation_log", []) or []:
            if isinstance(entry, Mapping):
                log.append((str(entry["tool"]), str(entry.get("ts", ""))))
            else:
                tool, ts = entry
                log.append((str(tool), str(ts)))
        known = {"id", "scenario", "created_at", "summary", "turns", "operation_log", "cited_refs"}
        return cls(
            id=str(d["id"]),
            scenario=str(d["scenario"]),
            created_at=str(d["created_at"]),
            summary=d["summary"],
            turns=tuple(turns),
            operation_log=tuple(log),
            cited_refs=tuple(str(u) for u in d.get("cited_refs", []) or []),
            extra={k: v for k, v in d.items() if k not in known},
        )

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "id": self.id,
            "scenario": self.scenario,
            "created_at": self.created_at,
            "summary": self.summary,
            "turns": [t.to_dict() for t in self.turns],
            "operation_log": [{"tool": tool, "ts": ts} for tool, ts in self.operation_log],
            "cited_refs": list(self.cited_refs),
        }
        d.update(self.extra)
        return d


def parse_ts(value: Any) -> datetime:
    if isinstance(value, (int, float)):
        return datetime.utcfromtimestamp(value)
    if not isinstance(value, str):
        raise ValueError(f"bad timestamp {value!r}")
    return datetime.fromisoformat(value.replace("Z", "+00:00")).replace(tzinfo=None)


@dataclass(frozen=True)
class Task:
    ticket_id: str
    turn_index: int
    history: tuple[Turn, ...]
    reference_response: str
    scenario: str = ""
    summary: str = ""

    @property
    def id(self) -> str:
        return f"{self.ticket_id}#{self.turn_index}"

    @property
    def query(self) -> str:
        """The latest customer message before the reference turn."""
        for t in reversed(self.history):
            if t.role == CUSTOMER:
                return t.text
        return ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "ticket_id": self.ticket_id,
            "turn_index": self.turn_index,
            "history": [t.to_dict() for t in self.history],
            "reference_response": self.reference_response,
            "scenario": self.scenario,
            "summary": self.summary,
        }


@dataclass(frozen=True)
class SplitPlan:
    dev_splits: tuple[tuple[str, ...], tuple[str, ...], tuple[str, ...]]
    eval_split: tuple[str, ...]

    def all_splits(self) -> list[tuple[str, ...]]:
        return [*self.dev_splits, self.eval_split]

    def to_dict(self) -> dict[str, Any]:
        return {"dev_splits": [list(s) for s in self.dev_splits], "eval_split": list(self.eval_split)}


@dataclass
class LoadReport:
    tickets: list[Ticket]
    warnings: list[str]


def load_corpus(path: str | Path, max_error_ratio: float = 0.2) -> LoadReport:
    """Read one ticket per line; bad lines become warnings unless too many fail."""
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError("unreadable", f"{path}: {exc}") from exc
    tickets, warnings = [], []
    lines = [(n, line) for n, line in enumerate(raw.splitlines(), start=1) if line.strip()]
    for n, line in lines:
        try:
            tickets.append(Ticket.from_dict(json.loads(line)))
        except (ValueError, TypeError, KeyError) as exc:
            warnings.append(f"line {n}: {exc}")
    bad = len(warnings)
    if lines and bad / len(lines) > max_error_ratio:
        raise CorpusError("error_ratio_exceeded", f"{bad}/{len(lines)} malformed lines in {path}")
    for w in warnings:
        logger.warning("corpus %s: %s", path, w)
    return LoadReport(tickets, warnings)


def dump_corpus(tickets: Iterable[Ticket], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in tickets:
            fh.write(json.dumps(t.to_dict(), ensure_ascii=False) + "\n")


def _strip_boilerplate(text: str) -> str:
    low = text.lower()
    for phrase in sorted(BOILERPLATE_PHRASES, key=len, reverse=True):
        low = re.sub(r"(?<!\w)" + re.escape(phrase) + r"(?!\w)", " ", low)
    return re.sub(r"[\W_]+", "", low)


def is_boilerplate(text: str) -> bool:
    return _strip_boilerplate(text) == ""


def derive_tasks(ticket: Ticket) -> list[Task]:
    """One task per substantive agent turn; history is every earlier turn."""
    tasks = []
    for i, turn in enumerate(ticket.turns):
        if turn.role != AGENT or is_boilerplate(turn.text):
            continue
        tasks.append(Task(ticket.id, i, ticket.turns[:i], turn.text, ticket.scenario, ticket.summary))
    return tasks


def sort_chronologically(tickets: Iterable[Ticket]) -> list[Ticket]:
    return sorted(tickets, key=lambda t: (t.created, t.id))


def split(tickets: Iterable[Ticket]) -> SplitPlan:
    """Four chronological, size-balanced splits; earlier splits take the remainder."""
    ordered = sort_chronologically(tickets)
    n = len(ordered)
    if n < 4:
        raise CorpusError("too_few_tickets", f"need at least 4 tickets, got {n}")
    base, rem = divmod(n, 4)
    sizes = [base + (1 if i < rem else 0) for i in range(4)]
    out, pos = [], 0
    for size in sizes:
        out.append(tuple(t.id for t in ordered[pos: pos + size]))
        pos += size
    return SplitPlan((out[0], out[1], out[2]), out[3])


# --------------------------------------------------------------------------
# anonymization


@dataclass(frozen=True)
class Finding:
    kind: str
    text: str
    start: int


_TLDS = "com|net|org|cn|io|co|info|biz|xyz|top|edu|gov|cc|me|app|dev|cloud|site|online|tech|us|uk|de|jp|hk|tw|sg|ai"
_PATTERNS = (
    ("email", re.compile(r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+")),
    ("phone", re.compile(r"(?<![\w<])(?:\+\d{1,3}[ -]?)?(?:1[3-9]\d{9}|(?:\(?\d{3}\)?[ .-])?\d{3}[ .-]\d{4})(?![\w>])")),
    ("domain", re.compile(r"(?<![\w@<.-])(?:[a-z0-9](?:[a-z0-9-]*[a-z0-9])?\.)+(?:" + _TLDS + r")(?![\w-])", re.IGNORECASE)),
)


def check_anonymization(text: str, allow_domains: Iterable[str] = ()) -> list[Finding]:
    """Flag raw phone numbers, e-mail addresses and domain names.

    Typed placeholders such as ``<DOMAIN_1>`` are ignored, as are domains in
    ``allow_domains`` (e.g. official documentation hosts).
    """
    if not text:
        return []
    masked = PLACEHOLDER.sub(lambda m: " " * len(m.group(0)), text)
    allowed = {d.lower() for d in allow_domains}
    findings: list[Finding] = []
    taken: list[tuple[int, int]] = []
    for kind, rx in _PATTERNS:
        for m in rx.finditer(masked):
            span = m.span()
            if any(s < span[1] and span[0] < e for s, e in taken):
                continue
            if kind == "domain" and m.group(0).lower() in allowed:
                continue
            findings.append(Finding(kind, m.group(0), span[0]))
            taken.append(span)
    return sorted(findings, key=lambda f: f.start)


def tasks_for(tickets: Iterable[Ticket]) -> list[Task]:
    out = []
    for t in tickets:
        out.extend(derive_tasks(t))
    return out


def task_ratio(tickets: list[Ticket]) -> float:
    return len(tasks_for(tickets)) / max(1, len(tickets))


def ceil_share(n: int, share: float) -> int:
    return math.ceil(n * share)
