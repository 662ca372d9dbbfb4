from __future__ import annotations

import csv
import io
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from skillforge.reporting import ReportError, build_report, delta_pp, fmt_pp, write_report


@pytest.mark.parametrize(
    "value,base,text",
    [(0.726, 0.686, "+4.00pp"), (0.5, 0.5, "+0.00pp"), (0.6, 0.75, "-15.00pp"), (1.0, 0.0, "+100.00pp")],
)
def test_delta_formatting(value, base, text):
    assert fmt_pp(delta_pp(value, base)) == text


@given(st.floats(0, 1), st.floats(0, 1))
def test_delta_antisymmetric(a, b):
    assert delta_pp(a, b) == pytest.approx(-delta_pp(b, a), abs=0.011)


def test_empty_dir_is_missing_artifacts(tmp_path):
    with pytest.raises(ReportError) as exc:
        build_report(tmp_path)
    assert exc.value.code == "missing_artifacts"


def test_missing_eval_is_missing_artifacts(tmp_path):
    (tmp_path / "lineage.json").write_text(json.dumps([{"version": 0, "round": 0}]))
    with pytest.raises(ReportError):
        build_report(tmp_path)


def test_write_report_outputs(evolved, tmp_path):
    _, result, _ = evolved
    rep = write_report(result.run_dir, tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["category_trends.png", "cr_by_version.png", "report.csv", "report.json", "report.txt"]
    for png in ("category_trends.png", "cr_by_version.png"):
        assert (tmp_path / png).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    rows = list(csv.DictReader(io.StringIO((tmp_path / "report.csv").read_text())))
    assert [r["version"] for r in rows] == ["0", "1", "2", "3"]
    assert rows[0]["delta_strict_pp"] == "0.0"
    assert json.loads((tmp_path / "report.json").read_text()) == json.loads(json.dumps(rep.to_dict()))
    assert [r["round"] for r in rep.rounds] == [1, 2, 3]
    assert rep.table().splitlines()[0].split() == ["version", "round", "strict_cr", "lenient_cr", "d_strict", "d_lenient"]


def test_figures_are_reproducible(evolved, tmp_path):
    _, result, _ = evolved
    write_report(result.run_dir, tmp_path / "a")
    write_report(result.run_dir, tmp_path / "b")
    for name in ("cr_by_version.png", "category_trends.png"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_no_figures(evolved, tmp_path):
    _, result, _ = evolved
    write_report(result.run_dir, tmp_path, figures=False)
    assert not list(tmp_path.glob("*.png"))
