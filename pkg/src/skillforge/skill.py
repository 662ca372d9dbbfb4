"""Skill packages: SKILL.md parsing, validation, budget checks and versioning.

On-disk layout::

    skill_name/
      SKILL.md
      references/tools.json
      references/*.md
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Any, Mapping

from .vfs import Vfs, normalize_path

logger = logging.getLogger(__name__)

SKILL_MD = "SKILL.md"
TOOLS_JSON = "references/tools.json"

MAX_LINES = 500
MAX_CHARS = 10_000

BACKGROUND = "BackgroundKnowledge"
TRIAGE = "CaseTypeTriage"
HANDLING = "CaseTypeHandling"
FAQ = "FAQ"
REFERENCE_INDEX = "ReferenceIndex"
OTHER = "Other"

# First match wins, so more specific phrases come before generic ones.
SECTION_KEYWORDS: tuple[tuple[str, tuple[str, ...]], ...] = (
    (TRIAGE, ("triage", "routing", "分诊", "问题分类", "问题路由")),
    (REFERENCE_INDEX, ("reference index", "references", "reference", "参考索引", "参考资料", "参考文档")),
    (FAQ, ("faq", "frequently asked", "常见问题", "长尾问题")),
    (BACKGROUND, ("background", "core knowledge", "key concepts", "domain knowledge", "背景知识", "核心知识")),
    (HANDLING, ("case type", "case-type", "handling", "case:", "场景处理", "问题处理", "处理流程")),
)

ESCALATION_KEYWORDS = ("escalat", "fallback", "hand off to", "升级", "转人工", "兜底")

# `call `tool_name`` style mentions inside SKILL.md prose
TOOL_MENTION = re.compile(
    r"\b(?:call|calls|invoke|invokes|use tool|run|query tool|trigger)\s+`([A-Za-z_][\w.-]*)`", re.IGNORECASE
)
REFERENCE_MENTION = re.compile(r"references/[\w./-]*[\w-]")

STRUCTURAL = "structural"
CONTENT = "content"


class SkillError(Exception):
    """Raised for unrecoverable skill package problems; ``code`` is machine readable."""

    def __init__(self, code: str, message: str = "") -> None:
        super().__init__(message or code)
        self.code = code


# --------------------------------------------------------------------------
# SKILL.md document model


@dataclass(frozen=True)
class Section:
    kind: str
    title: str
    level: int
    heading: str  # raw heading line, newline included when present
    body: str  # raw text up to the next section heading

    @property
    def text(self) -> str:
        return self.heading + self.body

    @property
    def body_lines(self) -> list[str]:
        return self.body.splitlines()


@dataclass(frozen=True)
class SkillDoc:
    preamble: str
    sections: tuple[Section, ...]
    frontmatter: Mapping[str, str] = field(default_factory=dict)

    def render(self) -> str:
        return self.preamble + "".join(s.text for s in self.sections)

    @property
    def line_count(self) -> int:
        return count_lines(self.render())

    @property
    def char_count(self) -> int:
        return len(self.render())

    def by_kind(self, kind: str) -> list[Section]:
        return [s for s in self.sections if s.kind == kind]

    def find(self, title: str) -> Section | None:
        want = _norm_title(title)
        for s in self.sections:
            if _norm_title(s.title) == want:
                return s
        return None

    def section_start_lines(self) -> list[int]:
        """1-based line number of each section heading."""
        line = count_lines(self.preamble) + 1
        out = []
        for s in self.sections:
            out.append(line)
            line += count_lines(s.text)
        return out

    def structure(self) -> list[tuple[str, str, int]]:
        """(kind, title, level) summary used for structural equality checks."""
        return [(s.kind, s.title, s.level) for s in self.sections]


def count_lines(text: str) -> int:
    if not text:
        return 0
    return text.count("\n") + (0 if text.endswith("\n") else 1)


def _norm_title(title: str) -> str:
    return re.sub(r"\s+", " ", title.strip().lower())


def classify_heading(title: str) -> str:
    low = title.lower()
    for kind, words in SECTION_KEYWORDS:
        if any(w in low for w in words):
            return kind
    return OTHER


_HEADING = re.compile(r"^(#{1,6})\s+(.*?)\s*#*\s*$")


def _split_frontmatter(text: str) -> tuple[str, dict[str, str], str]:
    if not text.startswith("---\n"):
        return "", {}, text
    end = text.find("\n---\n", 4)
    if end < 0:
        return "", {}, text
    block = text[: end + 5]
    meta: dict[str, str] = {}
    for line in text[4:end].splitlines():
        if ":" in line and not line.startswith((" ", "\t", "#")):
            k, v = line.split(":", 1)
            meta[k.strip()] = v.strip().strip('"').strip("'")
    return block, meta, text[end + 5:]


def parse_skill_md(text: str) -> SkillDoc:
    """Split SKILL.md into a preamble and top-level sections.

    Sections are ``##`` headings when any exist, otherwise ``#`` headings.
    Fenced code blocks are never scanned for headings.
    """
    fm_block, meta, rest = _split_frontmatter(text)
    lines = rest.splitlines(keepends=True)
    headings: list[tuple[int, int, str]] = []
    in_fence = False
    for i, line in enumerate(lines):
        if line.lstrip().startswith("```"):
            in_fence = not in_fence
            continue
        if in_fence:
            continue
        m = _HEADING.match(line.rstrip("\n"))
        if m:
            headings.append((i, len(m.group(1)), m.group(2)))
    level = 2 if any(h[1] == 2 for h in headings) else 1
    starts = [(i, title) for i, lv, title in headings if lv == level]
    if not starts:
        return SkillDoc(fm_block + rest, (), meta)
    preamble = fm_block + "".join(lines[: starts[0][0]])
    sections = []
    for n, (i, title) in enumerate(starts):
        end = starts[n + 1][0] if n + 1 < len(starts) else len(lines)
        body = "".join(lines[i + 1: end])
        sections.append(Section(classify_heading(title), title, level, lines[i], body))
    return SkillDoc(preamble, tuple(sections), meta)


def serialize_skill_md(doc: SkillDoc) -> str:
    return doc.render()


# --------------------------------------------------------------------------
# tools.json


@dataclass(frozen=True)
class ToolParam:
    name: str
    type: str = "string"
    required: bool = False
    description: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "type": self.type, "required": self.required, "description": self.description}


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str = ""
    parameters: tuple[ToolParam, ...] = ()
    returns: str = ""
    usage_scenarios: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ToolSchema:
        if not isinstance(d, Mapping) or not isinstance(d.get("name"), str) or not d["name"]:
            raise ValueError("tool entry needs a non-empty string 'name'")
        params = []
        for p in d.get("parameters", []) or []:
            if not isinstance(p, Mapping) or not isinstance(p.get("name"), str):
                raise ValueError(f"tool {d['name']}: parameter entries need a 'name'")
            params.append(
                ToolParam(p["name"], str(p.get("type", "string")), bool(p.get("required", False)), str(p.get("description", "")))
            )
        return cls(
            name=d["name"],
            description=str(d.get("description", "")),
            parameters=tuple(params),
            returns=str(d.get("returns", "")),
            usage_scenarios=tuple(str(s) for s in d.get("usage_scenarios", []) or []),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "parameters": [p.to_dict() for p in self.parameters],
            "returns": self.returns,
            "usage_scenarios": list(self.usage_scenarios),
        }


def dump_tools(tools: list[ToolSchema] | tuple[ToolSchema, ...]) -> str:
    return json.dumps([t.to_dict() for t in tools], indent=2, ensure_ascii=False) + "\n"


def load_tools(text: str) -> tuple[ToolSchema, ...]:
    try:
        data = json.loads(text)
        if not isinstance(data, list):
            raise ValueError("tools.json must hold a JSON array")
        return tuple(ToolSchema.from_dict(d) for d in data)
    except ValueError as exc:
        raise SkillError("bad_tools_json", str(exc)) from exc


# --------------------------------------------------------------------------
# package


@dataclass(frozen=True)
class SkillPackage:
    skill_md: SkillDoc
    tools: tuple[ToolSchema, ...] = ()
    references: Mapping[str, str] = field(default_factory=dict)
    version: int = 0
    tools_text: str | None = None  # raw tools.json, kept so export is byte-exact

    @property
    def name(self) -> str:
        return self.skill_md.frontmatter.get("name", "skill")

    @property
    def scenario(self) -> str | None:
        return self.skill_md.frontmatter.get("scenario")

    @property
    def label(self) -> str:
        return f"v{self.version}"

    def tool_names(self) -> set[str]:
        return {t.name for t in self.tools}

    def files(self) -> dict[str, str]:
        """Relative path -> text for every file in the package."""
        out = {SKILL_MD: self.skill_md.render()}
        if self.tools or self.tools_text is not None:
            out[TOOLS_JSON] = self.tools_text if self.tools_text is not None else dump_tools(self.tools)
        for name, text in self.references.items():
            out[f"references/{name}"] = text
        return dict(sorted(out.items()))

    def write_to(self, vfs: Vfs, root: str = "/skill") -> None:
        for rel, text in self.files().items():
            res = vfs.write_file(normalize_path(rel, root), text)
            if not res.success:
                raise SkillError("vfs_error", res.message)


def parse_skill(vfs: Vfs, root: str = "/skill", version: int = 0) -> SkillPackage:
    """Load a package from the VFS subtree at ``root``."""
    root = normalize_path(root)
    res = vfs.read_file(normalize_path(SKILL_MD, root))
    if not res.success:
        raise SkillError("missing_skill_md", f"{root}/SKILL.md: {res.message}")
    doc = parse_skill_md(res.data)
    tools: tuple[ToolSchema, ...] = ()
    tools_text = None
    tools_path = normalize_path(TOOLS_JSON, root)
    if vfs.is_file(tools_path):
        tools_text = vfs.read_file(tools_path).data
        tools = load_tools(tools_text)
    refs = {}
    ref_root = normalize_path("references", root)
    for path, text in vfs.files(ref_root).items():
        rel = path[len(ref_root) + 1:]
        if rel != "tools.json":
            refs[rel] = text
    return SkillPackage(doc, tools, refs, version, tools_text)


def load_skill_dir(path: str, version: int = 0) -> tuple[SkillPackage, Vfs]:
    vfs = Vfs()
    res = vfs.import_tree(path, "/skill")
    if not res.success:
        raise SkillError("missing_skill_md", res.message)
    return parse_skill(vfs, "/skill", version), vfs


def parse_skill_files(files: Mapping[str, str], version: int = 0) -> SkillPackage:
    vfs = Vfs()
    for rel, text in files.items():
        vfs.write_file(normalize_path(rel, "/skill"), text)
    return parse_skill(vfs, "/skill", version)


# --------------------------------------------------------------------------
# checks


@dataclass(frozen=True)
class BudgetCheck:
    within_budget: bool
    overflow_lines: int
    overflow_chars: int
    line_count: int
    char_count: int


def check_budget(doc: SkillDoc | str, max_lines: int = MAX_LINES, max_chars: int = MAX_CHARS) -> BudgetCheck:
    text = doc if isinstance(doc, str) else doc.render()
    lines, chars = count_lines(text), len(text)
    over_l, over_c = max(0, lines - max_lines), max(0, chars - max_chars)
    return BudgetCheck(over_l == 0 and over_c == 0, over_l, over_c, lines, chars)


@dataclass(frozen=True)
class Violation:
    rule: str
    where: str
    message: str
    severity: str = CONTENT


def has_escalation(section: Section) -> bool:
    low = section.text.lower()
    return any(k in low for k in ESCALATION_KEYWORDS)


def tool_mentions(text: str) -> list[str]:
    return TOOL_MENTION.findall(text)


def validate_package(pkg: SkillPackage) -> list[Violation]:
    out: list[Violation] = []
    doc = pkg.skill_md
    if not doc.sections:
        out.append(Violation("no_sections", SKILL_MD, "SKILL.md has no top-level sections", STRUCTURAL))
    for kind in (TRIAGE, FAQ, REFERENCE_INDEX):
        found = doc.by_kind(kind)
        if len(found) > 1:
            out.append(
                Violation("duplicate_section", kind, f"{len(found)} sections of kind {kind}: " + ", ".join(s.title for s in found), STRUCTURAL)
            )
    for s in doc.by_kind(HANDLING):
        if not has_escalation(s):
            out.append(Violation("missing_escalation", s.title, "handling section lacks an escalation fallback"))
    seen: set[str] = set()
    for t in pkg.tools:
        if t.name in seen:
            out.append(Violation("duplicate_tool", t.name, "tool declared twice", STRUCTURAL))
        seen.add(t.name)
        for p in t.parameters:
            if p.required and not p.description.strip():
                out.append(Violation("undocumented_parameter", f"{t.name}.{p.name}", "required parameter lacks a description"))
    names = pkg.tool_names()
    for s in doc.sections:
        for tool in tool_mentions(s.text):
            if tool not in names:
                out.append(Violation("unknown_tool", s.title, f"workflow references undeclared tool {tool!r}"))
    for s in doc.by_kind(REFERENCE_INDEX):
        for ref in REFERENCE_MENTION.findall(s.body):
            rel = ref[len("references/"):]
            if rel == "tools.json":
                if not pkg.tools and pkg.tools_text is None:
                    out.append(Violation("missing_reference", s.title, "references/tools.json is cited but absent"))
            elif rel not in pkg.references:
                out.append(Violation("missing_reference", s.title, f"{ref} is cited but absent"))
    return out


def commit_version(pkg: SkillPackage, vfs: Vfs, root: str = "/skill") -> SkillPackage:
    """Re-read the skill tree from ``vfs`` as version n+1 and snapshot it as ``v{n+1}``."""
    try:
        new = parse_skill(vfs, root, pkg.version + 1)
    except SkillError as exc:
        raise SkillError("invalid_skill", str(exc)) from exc
    structural = [v for v in validate_package(new) if v.severity == STRUCTURAL]
    if structural:
        raise SkillError("invalid_skill", "; ".join(f"{v.rule}@{v.where}" for v in structural))
    res = vfs.snapshot(new.label)
    if not res.success:
        raise SkillError(res.error or "snapshot_failed", res.message)
    return new
