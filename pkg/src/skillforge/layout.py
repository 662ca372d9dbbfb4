"""Line-level SKILL.md editing helpers and budget offload to reference files."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence

from .skill import (
    FAQ,
    HANDLING,
    MAX_CHARS,
    MAX_LINES,
    REFERENCE_INDEX,
    Section,
    SkillError,
    check_budget,
    parse_skill_md,
)

# Subsection titles holding detail that may leave SKILL.md; workflow and
# escalation subsections carry decision logic and always stay.
DETAIL_HEADINGS = ("exemplar", "example", "failure cause", "experience", "note", "detail")
_SUBHEADING = re.compile(r"^(#{2,6})\s+(.*?)\s*#*\s*$")
_LIST_MARKER = re.compile(r"^\s*(?:[-*+]|\d+[.)])\s+")


def slugify(text: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "_", text.lower()).strip("_")
    return slug or "section"


def normalize_text(text: str) -> str:
    """Dedup normal form: lowercase, list markers stripped, whitespace collapsed."""
    lines = []
    for line in text.splitlines():
        line = _LIST_MARKER.sub("", line)
        line = re.sub(r"\s+", " ", line).strip().lower()
        if line:
            lines.append(line)
    return "\n".join(lines)


def is_duplicate(content: str, corpus: str) -> bool:
    want = normalize_text(content)
    return bool(want) and want in normalize_text(corpus)


@dataclass(frozen=True)
class SectionSpan:
    index: int
    section: Section
    start: int  # 0-based line of the heading
    end: int  # exclusive


def section_spans(text: str) -> list[SectionSpan]:
    doc = parse_skill_md(text)
    out = []
    for i, (s, line) in enumerate(zip(doc.sections, doc.section_start_lines())):
        n = len(s.text.splitlines())
        out.append(SectionSpan(i, s, line - 1, line - 1 + n))
    return out


def find_span(text: str, title: str | None = None, kind: str | None = None) -> SectionSpan | None:
    want = re.sub(r"\s+", " ", title.strip().lower()) if title else None
    for sp in section_spans(text):
        if want is not None and re.sub(r"\s+", " ", sp.section.title.strip().lower()) == want:
            return sp
    if kind is not None:
        for sp in section_spans(text):
            if sp.section.kind == kind:
                return sp
    return None


def insert_lines(text: str, at: int, new_lines: Sequence[str]) -> str:
    lines = text.splitlines(keepends=True)
    if lines and not lines[-1].endswith("\n"):
        lines[-1] += "\n"
    block = [ln if ln.endswith("\n") else ln + "\n" for ln in new_lines]
    return "".join(lines[:at] + block + lines[at:])


def content_end(text: str, span: SectionSpan) -> int:
    """Index just past the last non-blank line of a section."""
    lines = text.splitlines()
    i = span.end
    while i > span.start + 1 and not lines[i - 1].strip():
        i -= 1
    return i


def ensure_section(text: str, title: str, before_kinds: Sequence[str] = ()) -> tuple[str, SectionSpan, bool]:
    """Return the section called ``title``, creating it before the first section of ``before_kinds``."""
    span = find_span(text, title)
    if span is not None:
        return text, span, False
    spans = section_spans(text)
    level = spans[0].section.level if spans else 2
    heading = ["#" * level + " " + title, ""]
    at = None
    for kind in before_kinds:
        hit = next((sp for sp in spans if sp.section.kind == kind), None)
        if hit is not None:
            at = hit.start
            break
    if at is None:
        lines = text.splitlines()
        at = len(lines)
        if lines and lines[-1].strip():
            heading = [""] + heading
    new = insert_lines(text, at, heading)
    made = find_span(new, title)
    assert made is not None
    return new, made, True


def subsections(text: str, span: SectionSpan) -> list[tuple[str, int, int]]:
    """(title, start, end) of the next-level subsections inside a section."""
    lines = text.splitlines()
    level = span.section.level + 1
    heads = []
    in_fence = False
    for i in range(span.start + 1, span.end):
        if lines[i].lstrip().startswith("```"):
            in_fence = not in_fence
            continue
        m = _SUBHEADING.match(lines[i])
        if m and not in_fence and len(m.group(1)) == level:
            heads.append((m.group(2), i))
    out = []
    for n, (title, i) in enumerate(heads):
        end = heads[n + 1][1] if n + 1 < len(heads) else span.end
        out.append((title, i, end))
    return out


@dataclass(frozen=True)
class OffloadResult:
    text: str
    references: Mapping[str, str]
    moved_lines: tuple[str, ...]
    new_files: tuple[str, ...]


def _is_detail(title: str) -> bool:
    low = title.lower()
    return any(k in low for k in DETAIL_HEADINGS)


def offload_details(
    text: str,
    references: Mapping[str, str],
    max_lines: int = MAX_LINES,
    max_chars: int = MAX_CHARS,
) -> OffloadResult:
    """Move detail subsections into ``references/details_<section>.md`` until within budget.

    Largest subsections move first. Each touched section gets one pointer
    line and the Reference Index lists the new file.
    """
    refs = dict(references)
    moved: list[str] = []
    new_files: list[str] = []
    while not check_budget(text, max_lines, max_chars).within_budget:
        best = None
        for sp in section_spans(text):
            if sp.section.kind == REFERENCE_INDEX:
                continue
            for title, a, b in subsections(text, sp):
                if not _is_detail(title):
                    continue
                size = sum(len(x) + 1 for x in text.splitlines()[a:b])
                if best is None or size > best[0]:
                    best = (size, sp, title, a, b)
        if best is None:
            c = check_budget(text, max_lines, max_chars)
            raise SkillError(
                "budget_unresolvable",
                f"SKILL.md still {c.line_count} lines / {c.char_count} chars with no detail left to offload",
            )
        _, sp, title, a, b = best
        lines = text.splitlines(keepends=True)
        block = lines[a:b]
        while block and not block[-1].strip():
            block.pop()
        fname = f"details_{slugify(sp.section.title)}.md"
        rel = f"references/{fname}"
        header = f"# {sp.section.title}\n\n" if fname not in refs else ""
        body = "".join(block)
        if not body.endswith("\n"):
            body += "\n"
        refs[fname] = refs.get(fname, header) + ("\n" if fname in refs else "") + body
        if fname not in new_files and fname not in references:
            new_files.append(fname)
        moved.extend(x.rstrip("\n") for x in block)
        pointer = f"- Further detail: `{rel}`\n"
        text = "".join(lines[:a] + lines[a + len(block):])
        span = find_span(text, sp.section.title)
        assert span is not None
        if pointer not in text:
            text = insert_lines(text, content_end(text, span), [pointer])
        text = _index_reference(text, rel, f"detail moved out of \"{sp.section.title}\"")
    return OffloadResult(text, refs, tuple(moved), tuple(new_files))


def _index_reference(text: str, rel: str, description: str) -> str:
    span = find_span(text, kind=REFERENCE_INDEX)
    if span is None:
        text, span, _ = ensure_section(text, "Reference Index")
    if f"`{rel}`" in span.section.body:
        return text
    return insert_lines(text, content_end(text, span), [f"- `{rel}`: {description}"])


def index_reference(text: str, rel: str, description: str) -> str:
    """Add ``rel`` to the Reference Index (creating the section) unless listed."""
    return _index_reference(text, rel, description)


TEMPLATE_ORDER = ("BackgroundKnowledge", "CaseTypeTriage", HANDLING, FAQ, REFERENCE_INDEX)
