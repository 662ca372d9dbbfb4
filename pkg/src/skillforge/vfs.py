"""In-memory virtual file system used by every skill-bearing agent.

Paths are absolute, ``/``-separated and normalized; nodes live in a flat
mapping keyed by path. Operations never raise: they return an
:class:`OpResult` carrying either a payload or a machine-readable error code.
"""

from __future__ import annotations

import fnmatch
import logging
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Mapping

logger = logging.getLogger(__name__)

FILE = "file"
DIRECTORY = "directory"

# Error codes returned in OpResult.error.
BAD_PATH = "bad_path"
NOT_FOUND = "not_found"
IS_DIRECTORY = "is_directory"
NOT_DIRECTORY = "not_directory"
EXISTS = "exists"
NOT_EMPTY = "not_empty"
BAD_PATTERN = "bad_pattern"
DUPLICATE_VERSION = "duplicate_version"
INVALID_MOVE = "invalid_move"
ROOT_PROTECTED = "root_protected"
IO_ERROR = "io_error"


class PathError(ValueError):
    """Raised by :func:`normalize_path` for malformed input."""


def normalize_path(path: str, cwd: str = "/") -> str:
    """Resolve ``path`` against ``cwd`` into an absolute normalized path.

    ``..`` above the root clamps to ``/``.
    """
    if not isinstance(path, str) or path == "":
        raise PathError("empty path")
    if "\x00" in path:
        raise PathError("NUL byte in path")
    if not cwd.startswith("/"):
        raise PathError(f"cwd must be absolute: {cwd!r}")
    raw = path if path.startswith("/") else cwd + "/" + path
    stack: list[str] = []
    for seg in raw.split("/"):
        if seg in ("", "."):
            continue
        if seg == "..":
            if stack:
                stack.pop()
            continue
        stack.append(seg)
    return "/" + "/".join(stack)


def parent_of(path: str) -> str:
    if path == "/":
        return "/"
    head = path.rsplit("/", 1)[0]
    return head or "/"


def basename(path: str) -> str:
    return "" if path == "/" else path.rsplit("/", 1)[1]


def is_under(path: str, prefix: str) -> bool:
    """True when ``path`` equals ``prefix`` or lies beneath it."""
    if prefix == "/":
        return True
    return path == prefix or path.startswith(prefix + "/")


@dataclass(frozen=True)
class VfsNode:
    name: str
    kind: str
    created_at: int
    modified_at: int
    size: int = 0
    content: str | None = None

    @property
    def is_dir(self) -> bool:
        return self.kind == DIRECTORY


@dataclass(frozen=True)
class OpResult:
    success: bool
    data: Any = None
    error: str | None = None
    message: str = ""

    @classmethod
    def ok(cls, data: Any = None, message: str = "ok") -> OpResult:
        return cls(True, data, None, message)

    @classmethod
    def fail(cls, error: str, message: str) -> OpResult:
        return cls(False, None, error, message)

    def to_dict(self) -> dict[str, Any]:
        return {"success": self.success, "data": self.data, "error": self.error, "message": self.message}


@dataclass(frozen=True)
class VfsSnapshot:
    label: str
    nodes: Mapping[str, VfsNode]
    clock: int = 0


@dataclass(frozen=True)
class GrepHit:
    path: str
    line_number: int
    line: str


def _file_node(name: str, content: str, created: int, modified: int) -> VfsNode:
    return VfsNode(name, FILE, created, modified, len(content.encode("utf-8")), content)


class Vfs:
    """Flat path-keyed in-memory file system.

    A single instance is meant to be driven by one agent session at a time;
    snapshots are immutable and may be shared freely.
    """

    def __init__(self) -> None:
        self._clock = 0
        self._nodes: dict[str, VfsNode] = {"/": VfsNode("", DIRECTORY, 0, 0)}
        self.cwd = "/"
        self._versions: dict[str, VfsSnapshot] = {}

    # -- helpers -----------------------------------------------------------

    def _tick(self) -> int:
        self._clock += 1
        return self._clock

    def _resolve(self, path: str) -> str:
        return normalize_path(path, self.cwd)

    def _children(self, path: str) -> list[str]:
        prefix = "/" if path == "/" else path + "/"
        return sorted(
            p for p in self._nodes if p != "/" and p.startswith(prefix) and "/" not in p[len(prefix):]
        )

    def _subtree(self, path: str) -> list[str]:
        return sorted(p for p in self._nodes if is_under(p, path))

    def _ensure_parents(self, path: str) -> OpResult | None:
        """Create missing ancestors of ``path``; return a failure if one is a file."""
        parts = path.strip("/").split("/")[:-1]
        cur = ""
        for seg in parts:
            cur = f"{cur}/{seg}"
            node = self._nodes.get(cur)
            if node is None:
                t = self._tick()
                self._nodes[cur] = VfsNode(seg, DIRECTORY, t, t)
            elif not node.is_dir:
                return OpResult.fail(NOT_DIRECTORY, f"{cur} is a file")
        return None

    def _check_parents(self, path: str) -> OpResult | None:
        """Fail if an existing ancestor of ``path`` is a file (no mutation)."""
        cur = parent_of(path)
        while cur != "/":
            node = self._nodes.get(cur)
            if node is not None and not node.is_dir:
                return OpResult.fail(NOT_DIRECTORY, f"{cur} is a file")
            cur = parent_of(cur)
        return None

    def _touch_dir(self, path: str) -> None:
        node = self._nodes.get(path)
        if node is not None and node.is_dir:
            self._nodes[path] = replace(node, modified_at=self._tick())

    def exists(self, path: str) -> bool:
        try:
            return self._resolve(path) in self._nodes
        except PathError:
            return False

    def is_dir(self, path: str) -> bool:
        try:
            node = self._nodes.get(self._resolve(path))
        except PathError:
            return False
        return node is not None and node.is_dir

    def is_file(self, path: str) -> bool:
        try:
            node = self._nodes.get(self._resolve(path))
        except PathError:
            return False
        return node is not None and not node.is_dir

    def stat(self, path: str) -> OpResult:
        try:
            p = self._resolve(path)
        except PathError as exc:
            return OpResult.fail(BAD_PATH, str(exc))
        node = self._nodes.get(p)
        if node is None:
            return OpResult.fail(NOT_FOUND, f"{p} does not exist")
        return OpResult.ok(node)

    @property
    def nodes(self) -> Mapping[str, VfsNode]:
        return MappingProxyType(self._nodes)

    def files(self, prefix: str = "/") -> dict[str, str]:
        """Path -> content for every file under ``prefix``."""
        return {p: n.content or "" for p, n in sorted(self._nodes.items()) if not n.is_dir and is_under(p, prefix)}

    # -- file operations ---------------------------------------------------

    def read_file(self, path: str) -> OpResult:
        try:
            p = self._resolve(path)
        except PathError as exc:
            return OpResult.fail(BAD_PATH, str(exc))
        node = self._nodes.get(p)
        if node is None:
            return OpResult.fail(NOT_FOUND, f"{p} does not exist")
        if node.is_dir:
            return OpResult.fail(IS_DIRECTORY, f"{p} is a directory")
        return OpResult.ok(node.content, f"read {node.size} bytes from {p}")

    def write_file(self, path: str, content: str) -> OpResult:
        try:
            p = self._resolve(path)
        except PathError as exc:
            return OpResult.fail(BAD_PATH, str(exc))
        if not isinstance(content, str):
            return OpResult.fail(BAD_PATH, "content must be text")
        existing = self._nodes.get(p)
        if p == "/" or (existing is not None and existing.is_dir):
            return OpResult.fail(IS_DIRECTORY, f"{p} is a directory")
        err = self._check_parents(p)
        if err:
            return err
        self._ensure_parents(p)
        t = self._tick()
        created = existing.created_at if existing else t
        self._nodes[p] = _file_node(basename(p), content, created, t)
        if existing is None:
            self._touch_dir(parent_of(p))
        return OpResult.ok(p, f"wrote {len(content.encode('utf-8'))} bytes to {p}")

    def mkdir(self, path: str) -> OpResult:
        try:
            p = self._resolve(path)
        except PathError as exc:
            return OpResult.fail(BAD_PATH, str(exc))
        node = self._nodes.get(p)
        if node is not None:
            if node.is_dir:
                return OpResult.ok({"path": p, "created": False}, f"{p} already exists")
            return OpResult.fail(EXISTS, f"{p} exists and is a file")
        err = self._check_parents(p)
        if err:
            return err
        self._ensure_parents(p)
        t = self._tick()
        self._nodes[p] = VfsNode(basename(p), DIRECTORY, t, t)
        self._touch_dir(parent_of(p))
        return OpResult.ok({"path": p, "created": True}, f"created {p}")

    def delete(self, path: str, recursive: bool = False) -> OpResult:
        try:
            p = self._resolve(path)
        except PathError as exc:
            return OpResult.fail(BAD_PATH, str(exc))
        if p == "/":
            return OpResult.fail(ROOT_PROTECTED, "cannot delete the root directory")
        node = self._nodes.get(p)
        if node is None:
            return OpResult.fail(NOT_FOUND, f"{p} does not exist")
        doomed = self._subtree(p)
        if node.is_dir and len(doomed) > 1 and not recursive:
            return OpResult.fail(NOT_EMPTY, f"{p} is not empty")
        for q in doomed:
            del self._nodes[q]
        if is_under(self.cwd, p):
            self.cwd = parent_of(p)
            while self.cwd not in self._nodes:
                self.cwd = parent_of(self.cwd)
        self._touch_dir(parent_of(p))
        return OpResult.ok(doomed, f"deleted {len(doomed)} node(s)")

    def _relocate(self, src: str, dst: str, move: bool) -> OpResult:
        if src == "/":
            return OpResult.fail(ROOT_PROTECTED, "cannot move or copy the root directory")
        node = self._nodes.get(src)
        if node is None:
            return OpResult.fail(NOT_FOUND, f"{src} does not exist")
        if dst in self._nodes:
            return OpResult.fail(EXISTS, f"{dst} already exists")
        if node.is_dir and is_under(dst, src):
            return OpResult.fail(INVALID_MOVE, f"cannot place {src} inside itself")
        err = self._check_parents(dst)
        if err:
            return err
        self._ensure_parents(dst)
        moved = self._subtree(src)
        t = self._tick()
        new_nodes = {}
        for q in moved:
            old = self._nodes[q]
            target = dst + q[len(src):]
            if move:
                new_nodes[target] = replace(old, name=basename(target))
            else:
                new_nodes[target] = replace(old, name=basename(target), created_at=t, modified_at=t)
        if move:
            for q in moved:
                del self._nodes[q]
            if is_under(self.cwd, src):
                self.cwd = dst + self.cwd[len(src):]
            self._touch_dir(parent_of(src))
        self._nodes.update(new_nodes)
        self._touch_dir(parent_of(dst))
        return OpResult.ok(sorted(new_nodes), f"{'moved' if move else 'copied'} {len(new_nodes)} node(s) to {dst}")

    def rename(self, src: str, dst: str) -> OpResult:
        try:
            s, d = self._resolve(src), self._resolve(dst)
        except PathError as exc:
            return OpResult.fail(BAD_PATH, str(exc))
        return self._relocate(s, d, move=True)

    def copy(self, src: str, dst: str) -> OpResult:
        try:
            s, d = self._resolve(src), self._resolve(dst)
        except PathError as exc:
            return OpResult.fail(BAD_PATH, str(exc))
        return self._relocate(s, d, move=False)

    def list(self, path: str = ".") -> OpResult:
        try:
            p = self._resolve(path)
        except PathError as exc:
            return OpResult.fail(BAD_PATH, str(exc))
        node = self._nodes.get(p)
        if node is None:
            return OpResult.fail(NOT_FOUND, f"{p} does not exist")
        if not node.is_dir:
            return OpResult.fail(NOT_DIRECTORY, f"{p} is not a directory")
        names = [basename(c) for c in self._children(p)]
        return OpResult.ok(names, f"{len(names)} entries in {p}")

    def chdir(self, path: str) -> OpResult:
        try:
            p = self._resolve(path)
        except PathError as exc:
            return OpResult.fail(BAD_PATH, str(exc))
        node = self._nodes.get(p)
        if node is None:
            return OpResult.fail(NOT_FOUND, f"{p} does not exist")
        if not node.is_dir:
            return OpResult.fail(NOT_DIRECTORY, f"{p} is not a directory")
        self.cwd = p
        return OpResult.ok(p, f"cwd is now {p}")

    def head(self, path: str, n: int = 10) -> OpResult:
        res = self.read_file(path)
        if not res.success:
            return res
        if n < 0:
            return OpResult.fail(BAD_PATH, "line count must be non-negative")
        return OpResult.ok(res.data.splitlines()[:n])

    def tail(self, path: str, n: int = 10) -> OpResult:
        res = self.read_file(path)
        if not res.success:
            return res
        if n < 0:
            return OpResult.fail(BAD_PATH, "line count must be non-negative")
        lines = res.data.splitlines()
        return OpResult.ok(lines[max(0, len(lines) - n):])

    def find(self, path: str = ".", name: str | None = None, kind: str | None = None) -> OpResult:
        """List paths under ``path`` (inclusive), optionally filtered by glob ``name`` and ``kind``."""
        try:
            p = self._resolve(path)
        except PathError as exc:
            return OpResult.fail(BAD_PATH, str(exc))
        if p not in self._nodes:
            return OpResult.fail(NOT_FOUND, f"{p} does not exist")
        if kind not in (None, FILE, DIRECTORY):
            return OpResult.fail(BAD_PATTERN, f"unknown kind {kind!r}")
        out = []
        for q in self._subtree(p):
            node = self._nodes[q]
            if kind is not None and node.kind != kind:
                continue
            if name is not None and not fnmatch.fnmatchcase(basename(q), name):
                continue
            out.append(q)
        return OpResult.ok(out, f"{len(out)} match(es)")

    def grep(self, pattern: str, path_prefix: str = "/", fixed: bool = False, ignore_case: bool = False) -> OpResult:
        """Search file lines under ``path_prefix``; hits ordered by path then line number."""
        try:
            rx = re.compile(re.escape(pattern) if fixed else pattern, re.IGNORECASE if ignore_case else 0)
        except (re.error, TypeError) as exc:
            return OpResult.fail(BAD_PATTERN, f"invalid pattern: {exc}")
        try:
            p = self._resolve(path_prefix)
        except PathError as exc:
            return OpResult.fail(BAD_PATH, str(exc))
        hits: list[GrepHit] = []
        for q in self._subtree(p):
            node = self._nodes[q]
            if node.is_dir:
                continue
            for i, line in enumerate((node.content or "").splitlines(), start=1):
                if rx.search(line):
                    hits.append(GrepHit(q, i, line))
        return OpResult.ok(hits, f"{len(hits)} hit(s)")

    # -- versioning --------------------------------------------------------

    def snapshot(self, label: str) -> OpResult:
        if label in self._versions:
            return OpResult.fail(DUPLICATE_VERSION, f"version {label!r} already captured")
        snap = VfsSnapshot(label, MappingProxyType(dict(self._nodes)), self._clock)
        self._versions[label] = snap
        return OpResult.ok(snap, f"captured {label}")

    def restore(self, snapshot: VfsSnapshot | str) -> OpResult:
        if isinstance(snapshot, str):
            snap = self._versions.get(snapshot)
            if snap is None:
                return OpResult.fail(NOT_FOUND, f"no version {snapshot!r}")
        else:
            snap = snapshot
        self._nodes = dict(snap.nodes)
        # the clock never runs backwards, so later writes still get fresh stamps
        self._clock = max(self._clock, snap.clock)
        if self.cwd not in self._nodes or not self._nodes[self.cwd].is_dir:
            self.cwd = "/"
        return OpResult.ok(snap.label, f"restored {snap.label}")

    def versions(self) -> list[str]:
        return list(self._versions)

    def get_version(self, label: str) -> VfsSnapshot | None:
        return self._versions.get(label)

    # -- host import/export ------------------------------------------------

    def import_tree(self, src: str | os.PathLike[str], dest: str = "/") -> OpResult:
        """Copy a host directory of UTF-8 text files into the VFS under ``dest``."""
        root = Path(src)
        if not root.is_dir():
            return OpResult.fail(NOT_FOUND, f"{root} is not a directory")
        res = self.mkdir(dest)
        if not res.success:
            return res
        base = self._resolve(dest)
        written = []
        try:
            for host in sorted(root.rglob("*")):
                rel = host.relative_to(root).as_posix()
                target = normalize_path(rel, base)
                if host.is_dir():
                    r = self.mkdir(target)
                else:
                    r = self.write_file(target, host.read_text(encoding="utf-8"))
                    written.append(target)
                if not r.success:
                    return r
        except (OSError, UnicodeDecodeError) as exc:
            return OpResult.fail(IO_ERROR, str(exc))
        return OpResult.ok(written, f"imported {len(written)} file(s)")

    def export_tree(self, src: str, dest: str | os.PathLike[str]) -> OpResult:
        """Write the subtree at ``src`` to a host directory (LF newlines, UTF-8)."""
        try:
            p = self._resolve(src)
        except PathError as exc:
            return OpResult.fail(BAD_PATH, str(exc))
        if not self.is_dir(p):
            return OpResult.fail(NOT_DIRECTORY, f"{p} is not a directory")
        out = Path(dest)
        written = []
        try:
            out.mkdir(parents=True, exist_ok=True)
            for q in self._subtree(p):
                if q == p:
                    continue
                target = out / q[len(p):].lstrip("/")
                node = self._nodes[q]
                if node.is_dir:
                    target.mkdir(parents=True, exist_ok=True)
                else:
                    target.parent.mkdir(parents=True, exist_ok=True)
                    with open(target, "w", encoding="utf-8", newline="\n") as fh:
                        fh.write(node.content or "")
                    written.append(str(target))
        except OSError as exc:
            return OpResult.fail(IO_ERROR, str(exc))
        return OpResult.ok(written, f"exported {len(written)} file(s)")

    @classmethod
    def from_files(cls, files: Mapping[str, str] | Iterable[tuple[str, str]]) -> Vfs:
        vfs = cls()
        items = files.items() if isinstance(files, Mapping) else files
        for path, content in items:
            res = vfs.write_file(path, content)
            if not res.success:
                raise ValueError(f"cannot seed {path}: {res.message}")
        return vfs

    # -- tool dispatch -----------------------------------------------------

    def dispatch(self, op: str, args: Mapping[str, Any]) -> OpResult:
        """Run a named operation with keyword arguments, as issued by an agent."""
        table = {
            "read_file": self.read_file,
            "write_file": self.write_file,
            "delete": self.delete,
            "rename": self.rename,
            "copy": self.copy,
            "mkdir": self.mkdir,
            "list": self.list,
            "chdir": self.chdir,
            "head": self.head,
            "tail": self.tail,
            "find": self.find,
            "grep": self.grep,
        }
        fn = table.get(op)
        if fn is None:
            return OpResult.fail("unknown_operation", f"no VFS operation {op!r}")
        try:
            return fn(**dict(args))
        except TypeError as exc:
            return OpResult.fail("bad_arguments", str(exc))


def check_invariants(vfs: Vfs) -> list[str]:
    """Return descriptions of every structural invariant the VFS violates."""
    problems = []
    nodes = vfs.nodes
    if "/" not in nodes or not nodes["/"].is_dir:
        problems.append("root missing or not a directory")
    for p, node in nodes.items():
        try:
            if normalize_path(p) != p:
                problems.append(f"unnormalized key {p!r}")
        except PathError:
            problems.append(f"bad key {p!r}")
        if p != "/":
            par = nodes.get(parent_of(p))
            if par is None or not par.is_dir:
                problems.append(f"parent of {p} missing or not a directory")
            if node.name != basename(p):
                problems.append(f"name mismatch at {p}")
        if node.is_dir:
            if node.content is not None:
                problems.append(f"directory {p} has content")
        else:
            if node.size != len((node.content or "").encode("utf-8")):
                problems.append(f"size mismatch at {p}")
        if node.modified_at < node.created_at:
            problems.append(f"timestamps inverted at {p}")
    if vfs.cwd not in nodes or not nodes[vfs.cwd].is_dir:
        problems.append(f"cwd {vfs.cwd} invalid")
    return problems
