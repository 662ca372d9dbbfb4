from __future__ import annotations

import json

import pytest

from skillforge.cli import EXIT_CONFIG, EXIT_OK, EXIT_PHASE, build_parser, main


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run each phase subcommand in sequence against a 60-ticket corpus."""
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen-corpus", "--out", str(d / "data"), "--n", "60", "--seed", "3"]) == EXIT_OK
    corpus = str(d / "data" / "corpus.jsonl")
    sim = ["--concurrency", "1"]
    assert main(["create", "--corpus", corpus, "--registry", str(d / "data" / "tools_registry.json"),
                 "--articles", str(d / "data" / "articles.json"), "--out", str(d / "skill"), *sim]) == EXIT_OK
    assert main(["exec", "--corpus", corpus, "--skill", str(d / "skill"), "--split", "dev1", "--out", str(d / "exec"), *sim]) == EXIT_OK
    assert main(["judge", "--corpus", corpus, "--exec-dir", str(d / "exec"), "--out", str(d / "verdicts.jsonl"), *sim]) == EXIT_OK
    assert main(["analyze", "--corpus", corpus, "--exec-dir", str(d / "exec"), "--verdicts", str(d / "verdicts.jsonl"),
                 "--out", str(d / "failures.jsonl"), *sim]) == EXIT_OK
    assert main(["aggregate", "--failures", str(d / "failures.jsonl"), "--out", str(d / "aggregate.json")]) == EXIT_OK
    assert main(["diagnose", "--aggregate", str(d / "aggregate.json"), "--skill", str(d / "skill"), "--out", str(d / "diag"), *sim]) == EXIT_OK
    assert main(["optimize", "--plan", str(d / "diag" / "plan.json"), "--aggregate", str(d / "aggregate.json"),
                 "--failures", str(d / "failures.jsonl"), "--skill", str(d / "skill"), "--out", str(d / "opt"), *sim]) == EXIT_OK
    return d


def test_phase_artifacts(pipeline):
    d = pipeline
    assert (d / "skill" / "SKILL.md").exists() and (d / "skill" / "references" / "tools.json").exists()
    replies = [json.loads(x) for x in (d / "exec" / "replies.jsonl").read_text().splitlines()]
    assert replies and len(list((d / "exec" / "traces").iterdir())) == len(replies)
    assert len((d / "verdicts.jsonl").read_text().splitlines()) == len(replies)
    assert json.loads((d / "aggregate.json").read_text())["categories"]
    assert (d / "diag" / "plan.json").exists() and (d / "diag" / "diagnosis.json").exists()
    assert (d / "opt" / "optimization.json").exists()
    assert (d / "opt" / "skill" / "SKILL.md").read_text() != (d / "skill" / "SKILL.md").read_text()


def test_judge_prints_cr(pipeline, capsys):
    d = pipeline
    corpus = str(d / "data" / "corpus.jsonl")
    assert main(["judge", "--corpus", corpus, "--exec-dir", str(d / "exec"), "--out", str(d / "v2.jsonl")]) == EXIT_OK
    assert capsys.readouterr().out.startswith("strict CR ")


def test_evolve_record_then_replay(pipeline, tmp_path, capsys):
    data = pipeline / "data"
    base = ["evolve", "--corpus", str(data / "corpus.jsonl"), "--registry", str(data / "tools_registry.json"),
            "--articles", str(data / "articles.json"), "--rounds", "1", "--concurrency", "1"]
    script = tmp_path / "script.json"
    assert main([*base, "--out", str(tmp_path / "a"), "--record-script", str(script)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "status: completed" in out and "v1" in out
    assert main([*base, "--out", str(tmp_path / "b"), "--provider", "scripted", "--script", str(script)]) == EXIT_OK
    for name in ("lineage.json", "status.json", "llm_calls.jsonl"):
        assert (tmp_path / "a" / "runs" / "run-s0" / name).read_bytes() == (tmp_path / "b" / "runs" / "run-s0" / name).read_bytes()
    assert (tmp_path / "a" / "runs" / "run-s0" / "report" / "cr_by_version.png").exists()


@pytest.mark.parametrize("fmt,head", [("table", "version"), ("csv", "version,round"), ("json", "{")])
def test_report_formats(pipeline, tmp_path, capsys, fmt, head):
    data = pipeline / "data"
    main(["evolve", "--corpus", str(data / "corpus.jsonl"), "--rounds", "0", "--out", str(tmp_path), "--no-figures"])
    capsys.readouterr()
    rc = main(["report", "--run-dir", str(tmp_path / "runs" / "run-s0"), "--format", fmt, "--no-figures"])
    assert rc == EXIT_OK
    assert capsys.readouterr().out.startswith(head)


@pytest.mark.parametrize(
    "argv,code",
    [
        (["evolve", "--corpus", "CORPUS", "--out", "OUT", "--rounds", "5"], EXIT_CONFIG),
        (["evolve", "--corpus", "CORPUS", "--out", "OUT", "--provider", "scripted"], EXIT_CONFIG),
        (["evolve", "--corpus", "CORPUS", "--out", "OUT", "--provider", "scripted", "--script", "MISSING"], EXIT_CONFIG),
        (["evolve", "--corpus", "MISSING", "--out", "OUT"], EXIT_CONFIG),
        (["exec", "--corpus", "CORPUS", "--skill", "MISSING", "--out", "OUT"], EXIT_CONFIG),
        (["report", "--run-dir", "OUT"], EXIT_PHASE),
        (["evolve", "--corpus", "CORPUS", "--out", "OUT", "--provider", "scripted", "--script", "EMPTY"], EXIT_PHASE),
    ],
)
def test_exit_codes(pipeline, tmp_path, argv, code, capsys):
    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps({"entries": []}))
    subst = {
        "CORPUS": str(pipeline / "data" / "corpus.jsonl"),
        "OUT": str(tmp_path / "out"),
        "MISSING": str(tmp_path / "missing"),
        "EMPTY": str(empty),
    }
    assert main([subst.get(a, a) for a in argv]) == code
    assert capsys.readouterr().err.startswith("error:")


def test_http_provider_without_env(pipeline, tmp_path, monkeypatch):
    for var in ("SKILLFORGE_LLM_URL", "SKILLFORGE_LLM_MODEL", "SKILLFORGE_LLM_KEY"):
        monkeypatch.delenv(var, raising=False)
    argv = ["evolve", "--corpus", str(pipeline / "data" / "corpus.jsonl"), "--out", str(tmp_path), "--provider", "http"]
    assert main(argv) == EXIT_CONFIG


def test_parser_lists_subcommands():
    sub = next(a for a in build_parser()._actions if a.dest == "command")
    assert sorted(sub.choices) == sorted(
        ["gen-corpus", "create", "exec", "judge", "analyze", "aggregate", "diagnose", "optimize", "evolve", "report"]
    )


def test_missing_subcommand_exits():
    with pytest.raises(SystemExit):
        main([])
