"""Summaries of a finished run: CR per version, deltas against v0, failure trends.

Outputs are ``report.json``, ``report.csv``, an aligned ``report.txt`` and two
PNG figures. Figures carry no timestamp metadata so reruns stay byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .schemas import DIMENSIONS  # noqa: E402

logger = logging.getLogger(__name__)

PNG_METADATA = {"Software": None}


class ReportError(Exception):
    def __init__(self, code: str, message: str = "") -> None:
        super().__init__(message or code)
        self.code = code


def delta_pp(value: float, base: float) -> float:
    """Difference in percentage points, rounded to two decimals."""
    return round(100 * (value - base), 2)


def fmt_pp(d: float) -> str:
    return f"{d:+.2f}pp"


@dataclass
class RunReport:
    run_id: str
    versions: list[dict[str, Any]]
    rounds: list[dict[str, Any]]

    def to_dict(self) -> dict[str, Any]:
        return {"run_id": self.run_id, "versions": self.versions, "rounds": self.rounds}

    def table(self) -> str:
        header = ("version", "round", "strict_cr", "lenient_cr", "d_strict", "d_lenient")
        rows = [
            (
                f"v{v['version']}",
                str(v["round"]),
                f"{100 * v['strict_cr']:.2f}",
                f"{100 * v['lenient_cr']:.2f}",
                fmt_pp(v["delta_strict_pp"]),
                fmt_pp(v["delta_lenient_pp"]),
            )
            for v in self.versions
        ]
        widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
        lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
        if self.rounds:
            lines.append("")
            cats = ("round",) + DIMENSIONS + ("bad_cases",)
            lines.append("  ".join(f"{c:>13}" for c in cats))
            for r in self.rounds:
                vals = [str(r["round"])] + [str(r["categories"].get(c, 0)) for c in DIMENSIONS] + [str(r["n_bad"])]
                lines.append("  ".join(f"{v:>13}" for v in vals))
        return "\n".join(lines) + "\n"

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["version", "round", "strict_cr", "lenient_cr", "delta_strict_pp", "delta_lenient_pp", "n_total"])
        for v in self.versions:
            w.writerow([v["version"], v["round"], f"{v['strict_cr']:.4f}", f"{v['lenient_cr']:.4f}", v["delta_strict_pp"], v["delta_lenient_pp"], v["n_total"]])
        return buf.getvalue()


def _read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ReportError("missing_artifacts", f"{path} not found") from exc


def category_counts(failures_path: Path) -> dict[str, int]:
    """Bad cases per failure category, recounted from failures.jsonl."""
    c: Counter[str] = Counter()
    if failures_path.exists():
        for line in failures_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                rec = json.loads(line)
                if rec["overall_verdict"] != "acceptable":
                    c.update(rec["failure_categories"])
    return {d: c.get(d, 0) for d in DIMENSIONS}


def build_report(run_dir: str | Path) -> RunReport:
    run_dir = Path(run_dir)
    lineage = _read_json(run_dir / "lineage.json")
    if not lineage:
        raise ReportError("missing_artifacts", "lineage.json lists no versions")
    versions = []
    base = None
    for entry in lineage:
        cr = _read_json(run_dir / "eval" / f"v{entry['version']}" / "cr.json")
        base = base or cr
        versions.append(
            {
                "version": entry["version"],
                "round": entry["round"],
                "strict_cr": cr["strict_cr"],
                "lenient_cr": cr["lenient_cr"],
                "n_total": cr["n_total"],
                "delta_strict_pp": delta_pp(cr["strict_cr"], base["strict_cr"]),
                "delta_lenient_pp": delta_pp(cr["lenient_cr"], base["lenient_cr"]),
            }
        )
    rounds = []
    for rdir in sorted(run_dir.glob("round_*"), key=lambda p: int(p.name.split("_")[1])):
        verdicts = rdir / "verdicts.jsonl"
        if not verdicts.exists():
            continue
        n_bad = sum(
            1 for line in verdicts.read_text(encoding="utf-8").splitlines() if line.strip() and json.loads(line)["verdict"] != "consistent"
        )
        rounds.append({"round": int(rdir.name.split("_")[1]), "n_bad": n_bad, "categories": category_counts(rdir / "failures.jsonl")})
    return RunReport(run_dir.name, versions, rounds)


def plot_cr(report: RunReport, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2), dpi=100)
    xs = [f"v{v['version']}" for v in report.versions]
    ax.plot(xs, [100 * v["strict_cr"] for v in report.versions], marker="o", label="strict CR")
    ax.plot(xs, [100 * v["lenient_cr"] for v in report.versions], marker="s", linestyle="--", label="lenient CR")
    ax.set_ylabel("held-out consistency (%)")
    ax.set_ylim(0, 100)
    ax.legend(loc="lower right")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=PNG_METADATA)
    plt.close(fig)


def plot_categories(report: RunReport, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2), dpi=100)
    width = 0.8 / len(DIMENSIONS)
    xs = list(range(len(report.rounds)))
    for i, dim in enumerate(DIMENSIONS):
        ax.bar([x + i * width for x in xs], [r["categories"][dim] for r in report.rounds], width, label=dim)
    ax.set_xticks([x + 0.4 - width / 2 for x in xs], [f"round {r['round']}" for r in report.rounds])
    ax.set_ylabel("bad cases")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=PNG_METADATA)
    plt.close(fig)


def write_report(run_dir: str | Path, out_dir: str | Path | None = None, figures: bool = True) -> RunReport:
    report = build_report(run_dir)
    out = Path(out_dir) if out_dir else Path(run_dir) / "report"
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    (out / "report.csv").write_text(report.csv(), encoding="utf-8", newline="\n")
    (out / "report.txt").write_text(report.table(), encoding="utf-8", newline="\n")
    if figures:
        plot_cr(report, out / "cr_by_version.png")
        if report.rounds:
            plot_categories(report, out / "category_trends.png")
    return report
