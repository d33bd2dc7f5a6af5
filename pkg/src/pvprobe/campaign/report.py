"""Campaign report: JSON, text summary, per-fault CSV and figures."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .dedup import FaultEntry


@dataclass
class CampaignReport:
    config: dict
    total_cases: int
    expected_cases: int
    per_level: dict
    wall_time_s: float
    templates: dict
    per_scenario: dict  # scenario_id -> {outcome: n}
    unique_faults: list[FaultEntry]
    faulting_cases: int
    prefix_errors: int
    warnings: list = field(default_factory=list)
    stopped: str = "exhausted"
    fault_rows: list = field(default_factory=list)

    def signatures(self) -> set[tuple[str, str]]:
        return {e.signature for e in self.unique_faults}

    @property
    def exit_code(self) -> int:
        return 1 if self.unique_faults else 0

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "totals": {"test_cases": self.total_cases, "expected_test_cases": self.expected_cases,
                       "per_level": {str(k): v for k, v in sorted(self.per_level.items())},
                       "wall_time_s": round(self.wall_time_s, 3), "faulting_cases": self.faulting_cases,
                       "prefix_errors": self.prefix_errors, "stopped": self.stopped},
            "templates": self.templates,
            "per_scenario": self.per_scenario,
            "unique_faults": [{
                "signature": {"kind": e.report.kind.value, "site": e.report.site},
                "first_test_case_id": e.report.test_case_id, "count": e.count,
                "reproducer": e.reproducer,
                "plan": e.test_case.plan if e.test_case else None,
                "frame_hex": e.test_case.frame_hex if e.test_case else None,
                "detail": e.report.detail,
            } for e in self.unique_faults],
            "warnings": self.warnings,
        }

    def to_text(self) -> str:
        lines = [
            "pvprobe campaign report",
            f"test cases: {self.total_cases} (expected {self.expected_cases}), "
            f"wall time {self.wall_time_s:.1f} s, stopped: {self.stopped}",
            "per level: " + ", ".join(f"N={k}: {v}" for k, v in sorted(self.per_level.items())),
            "",
            f"{'template':<10} {'count_plans':>11} {'emitted':>8} {'suppressed':>10} {'scenarios':>9}",
        ]
        for key, t in self.templates.items():
            lines.append(f"{key:<10} {t['count_plans']:>11} {t['emitted']:>8} {t['suppressed']:>10} "
                         f"{t['scenarios']:>9}")
        lines += ["", "per scenario:"]
        for sid, outcomes in self.per_scenario.items():
            lines.append(f"  {sid:<16} " + ", ".join(f"{k}={v}" for k, v in sorted(outcomes.items())))
        lines += ["", f"unique faults: {len(self.unique_faults)} "
                      f"({self.faulting_cases} faulting test cases)"]
        for e in self.unique_faults:
            lines.append(f"  {e.report.kind.value:<18} {e.report.site:<18} x{e.count:<6} "
                         f"first {e.report.test_case_id}")
            if e.reproducer:
                lines.append(f"      reproducer: {e.reproducer}")
        if self.prefix_errors:
            lines += ["", f"prefix errors: {self.prefix_errors}"] + [f"  {w}" for w in self.warnings[:10]]
        return "\n".join(lines) + "\n"


def write_report(report: CampaignReport, out_dir: str | Path, figures: bool = True) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / "report.json", "text": out / "report.txt", "csv": out / "faults.csv"}
    paths["json"].write_text(json.dumps(report.to_dict(), indent=2))
    paths["text"].write_text(report.to_text())
    with paths["csv"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["test_case_id", "kind", "site", "scenario", "level", "plan"])
        w.writerows(report.fault_rows)
    if figures:
        paths.update(render_figures(report, out / "figures"))
    return paths


def render_figures(report: CampaignReport, fig_dir: str | Path) -> dict[str, Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    paths = {}

    scen = list(report.per_scenario)
    outcomes = sorted({o for v in report.per_scenario.values() for o in v})
    fig, ax = plt.subplots(figsize=(8, 4))
    bottom = [0] * len(scen)
    for o in outcomes:
        vals = [report.per_scenario[s].get(o, 0) for s in scen]
        ax.bar(scen, vals, bottom=bottom, label=o)
        bottom = [b + v for b, v in zip(bottom, vals)]
    ax.set_ylabel("test cases")
    ax.set_title("Outcomes per scenario")
    ax.tick_params(axis="x", rotation=30)
    if outcomes:
        ax.legend(fontsize=8)
    fig.tight_layout()
    paths["outcomes_png"] = fig_dir / "outcomes_by_scenario.png"
    fig.savefig(paths["outcomes_png"], dpi=100)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(8, 4))
    labels = [f"{e.report.kind.value}\n{e.report.site}" for e in report.unique_faults]
    ax.bar(range(len(labels)), [e.count for e in report.unique_faults], color="tab:red")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, fontsize=7, rotation=30, ha="right")
    ax.set_ylabel("faulting test cases")
    ax.set_title(f"Unique fault signatures ({len(labels)})")
    fig.tight_layout()
    paths["faults_png"] = fig_dir / "faults_by_signature.png"
    fig.savefig(paths["faults_png"], dpi=100)
    plt.close(fig)
    return paths
