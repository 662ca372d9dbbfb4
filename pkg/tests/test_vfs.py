from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillforge import vfs as V
from skillforge.vfs import Vfs, normalize_path

from oracles import model_norm, run_vfs_sequence, vfs_state


@pytest.mark.parametrize(
    "path,cwd,expected",
    [
        ("/a/b/../c", "/", "/a/c"),
        ("docs/x.md", "/skill", "/skill/docs/x.md"),
        ("../../..", "/a", "/"),
        ("./x", "/", "/x"),
        ("//a//b/", "/", "/a/b"),
        ("/", "/deep/dir", "/"),
        (".", "/deep", "/deep"),
    ],
)
def test_normalize_examples(path, cwd, expected):
    assert normalize_path(path, cwd) == expected


@pytest.mark.parametrize("bad", ["", "a\x00b"])
def test_normalize_rejects(bad):
    with pytest.raises(V.PathError):
        normalize_path(bad)


segment = st.sampled_from(["a", "b", "..", ".", "", "x.md", "skill"])
rel_path = st.lists(segment, min_size=1, max_size=6).map("/".join).filter(bool)


@given(rel_path, st.sampled_from(["/", "/a", "/a/b", "/skill/references"]))
def test_normalize_matches_posix_model(path, cwd):
    assert normalize_path(path, cwd) == model_norm(path, cwd)


@given(rel_path)
def test_normalize_idempotent(path):
    once = normalize_path(path, "/w")
    assert normalize_path(once) == once
    assert once.startswith("/")
    assert once == "/" or not once.endswith("/")


def test_write_onto_directory_fails():
    fs = Vfs()
    fs.mkdir("/skill")
    res = fs.write_file("/skill", "x")
    assert not res.success and res.error == "is_directory"


def test_grep_bad_pattern_and_empty():
    fs = Vfs()
    assert fs.grep("(").error == "bad_pattern"
    res = fs.grep("anything")
    assert res.success and res.data == []


def test_write_creates_parents_and_read_back():
    fs = Vfs()
    assert fs.write_file("/skill/references/tools.json", "[]").success
    assert fs.is_dir("/skill/references")
    assert fs.read_file("/skill/references/tools.json").data == "[]"
    assert fs.list("/skill").data == ["references"]


def test_write_under_file_is_not_directory():
    fs = Vfs.from_files({"/a": "x"})
    assert fs.write_file("/a/b", "y").error == "not_directory"


def test_delete_nonempty_requires_recursive():
    fs = Vfs.from_files({"/d/x": "1", "/d/y": "2"})
    assert fs.delete("/d").error == "not_empty"
    res = fs.delete("/d", recursive=True)
    assert res.success and res.data == ["/d", "/d/x", "/d/y"]
    assert fs.delete("/").error == "root_protected"


def test_rename_into_self_rejected():
    fs = Vfs.from_files({"/d/x": "1"})
    assert fs.rename("/d", "/d/sub").error == "invalid_move"


def test_head_tail_and_negative_n():
    fs = Vfs.from_files({"/f": "1\n2\n3\n4"})
    assert fs.head("/f", 2).data == ["1", "2"]
    assert fs.tail("/f", 2).data == ["3", "4"]
    assert fs.tail("/f", 0).data == []
    assert fs.head("/f", -1).error == "bad_path"


def test_find_and_grep_hits():
    fs = Vfs.from_files({"/s/SKILL.md": "## FAQ\nEscalation here\n", "/s/r/a.md": "escalation"})
    assert fs.find("/s", name="*.md", kind="file").data == ["/s/SKILL.md", "/s/r/a.md"]
    assert fs.find("/s", kind="socket").error == "bad_pattern"
    hits = fs.grep("escalation", "/s", ignore_case=True).data
    assert [(h.path, h.line_number) for h in hits] == [("/s/SKILL.md", 2), ("/s/r/a.md", 1)]
    fixed = fs.grep("(", fixed=True)
    assert fixed.success and fixed.data == []


def test_snapshot_delete_restore_keeps_timestamps():
    fs = Vfs.from_files({"/skill/SKILL.md": "v0"})
    before = dict(fs.nodes)
    assert fs.snapshot("v0").success
    fs.delete("/skill", recursive=True)
    assert not fs.exists("/skill/SKILL.md")
    assert fs.restore("v0").success
    assert dict(fs.nodes) == before
    assert fs.snapshot("v0").error == "duplicate_version"
    assert fs.restore("nope").error == "not_found"
    assert fs.versions() == ["v0"]


def test_snapshot_is_isolated_from_later_writes():
    fs = Vfs.from_files({"/f": "a"})
    snap = fs.snapshot("v0").data
    fs.write_file("/f", "b")
    assert snap.nodes["/f"].content == "a"
    fs.restore(snap)
    assert fs.read_file("/f").data == "a"
    fs.write_file("/f", "c")
    assert fs.nodes["/f"].modified_at > snap.nodes["/f"].modified_at


def test_dispatch_errors():
    fs = Vfs()
    assert fs.dispatch("explode", {}).error == "unknown_operation"
    assert fs.dispatch("read_file", {"nope": 1}).error == "bad_arguments"


def test_import_export_round_trip(tmp_path):
    src = tmp_path / "in"
    (src / "references").mkdir(parents=True)
    (src / "SKILL.md").write_text("## FAQ\n", encoding="utf-8")
    (src / "references" / "tools.json").write_text("[]", encoding="utf-8")
    fs = Vfs()
    assert fs.import_tree(src, "/skill").success
    assert fs.files("/skill") == {"/skill/SKILL.md": "## FAQ\n", "/skill/references/tools.json": "[]"}
    out = tmp_path / "out"
    assert fs.export_tree("/skill", out).success
    assert (out / "references" / "tools.json").read_text(encoding="utf-8") == "[]"


@pytest.mark.parametrize("seed", range(40))
def test_random_sequences_agree_with_model(seed):
    assert run_vfs_sequence(random.Random(seed), 60) == []


@settings(max_examples=60, deadline=None)
@given(st.dictionaries(st.sampled_from(["/a", "/b/c", "/b/d.md", "/s/x"]), st.text(max_size=20), min_size=1))
def test_restore_is_exact(files):
    fs = Vfs.from_files(files)
    fs.snapshot("base")
    files_before, dirs_before = vfs_state(fs)
    for p in list(files):
        fs.delete(p)
    fs.write_file("/new", "x")
    fs.restore("base")
    assert vfs_state(fs) == (files_before, dirs_before)
    assert V.check_invariants(fs) == []
