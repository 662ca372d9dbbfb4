"""Knowledge-search interface and the local JSON article store used offline."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Protocol


class SearchError(Exception):
    """Transport-level search failure; callers degrade rather than abort."""


@dataclass(frozen=True)
class SearchResult:
    title: str
    url: str
    snippet: str
    body: str
    authoritative: bool = False

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class KnowledgeSearch(Protocol):
    def search(self, query: str, limit: int = 5) -> list[SearchResult]: ...


def _tokens(text: str) -> set[str]:
    return {t for t in re.findall(r"[a-z0-9]+", text.lower()) if len(t) > 2}


class FixtureSearch:
    """Ranks stored articles by query-token overlap with title, tags and body.

    Article records: ``{"title", "url", "body", "snippet"?, "tags"?, "authoritative"?}``.
    """

    def __init__(self, articles: Iterable[dict[str, Any]]) -> None:
        self.articles = list(articles)

    @classmethod
    def load(cls, path: str | Path) -> FixtureSearch:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data["articles"] if isinstance(data, dict) else data)

    def search(self, query: str, limit: int = 5) -> list[SearchResult]:
        q = _tokens(query)
        if not q:
            return []
        scored = []
        for i, a in enumerate(self.articles):
            title_hits = len(q & _tokens(a["title"] + " " + " ".join(a.get("tags", []))))
            body_hits = len(q & _tokens(a.get("body", "")))
            score = 3 * title_hits + body_hits
            if score:
                scored.append((-score, i, a))
        scored.sort(key=lambda t: (t[0], t[1]))
        return [
            SearchResult(
                a["title"],
                a.get("url", ""),
                a.get("snippet") or a.get("body", "")[:160],
                a.get("body", ""),
                bool(a.get("authoritative", False)),
            )
            for _, _, a in scored[:limit]
        ]


class NullSearch:
    def search(self, query: str, limit: int = 5) -> list[SearchResult]:
        return []


class FailingSearch:
    """Always raises; exercises degraded modes."""

    def search(self, query: str, limit: int = 5) -> list[SearchResult]:
        raise SearchError("search backend unavailable")
