from __future__ import annotations

import time
from pathlib import Path
from typing import Callable

from ..scenario import scenario_by_id
from .config import CampaignConfig, ConfigError, TargetSpec, config_from_dict, load_config
from .dedup import FaultCollector, FaultEntry, TestCase, case_id, dedupe
from .report import CampaignReport, render_figures, write_report
from .reproducer import (
    ReplayMismatch, ReplayResult, Reproducer, ReproducerError, parse_reproducer, replay,
    write_reproducer,
)
from .runner import CampaignState, execute, execute_batch, make_target, produce_batches


def _repro_name(entry: FaultEntry) -> str:
    return f"{entry.report.kind.value}__{entry.report.site}.repro"


def run_campaign(config: CampaignConfig, resume: bool = True, figures: bool = True,
                 progress: Callable[[CampaignState], None] | None = None) -> CampaignReport:
    """Run every emitted plan under every scenario of its protocol.

    With ``config.output`` set, writes the report files, one reproducer per
    unique fault signature and a resumable checkpoint into that directory.
    """
    out = Path(config.output) if config.output else None
    checkpoint = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        checkpoint = out / "checkpoint.json"
    t0 = time.monotonic()
    state, stats, stopped = execute(config, checkpoint, resume, progress)
    wall = time.monotonic() - t0

    entries = state.collector.sorted()
    if out is not None:
        for e in entries:
            if e.test_case is None:
                continue
            path = write_reproducer(e.test_case, scenario_by_id(e.test_case.scenario_id),
                                    out / "reproducers" / _repro_name(e), config.target.bugs, e.signature)
            e.reproducer = str(path)

    per_scenario: dict = {}
    for (sid, outcome), n in sorted(state.outcomes.items()):
        per_scenario.setdefault(sid, {})[outcome] = n
    expected = sum(t["emitted"] * t["scenarios"] for t in stats.values())
    report = CampaignReport(
        config=config.to_dict(), total_cases=state.cases, expected_cases=expected,
        per_level=dict(state.levels), wall_time_s=wall, templates=stats, per_scenario=per_scenario,
        unique_faults=entries, faulting_cases=state.faulting_cases, prefix_errors=state.prefix_errors,
        warnings=state.warnings, stopped=stopped, fault_rows=state.fault_rows)
    if out is not None:
        write_report(report, out, figures=figures)
    return report


__all__ = [
    "CampaignConfig", "ConfigError", "TargetSpec", "config_from_dict", "load_config",
    "FaultCollector", "FaultEntry", "TestCase", "case_id", "dedupe", "CampaignReport",
    "render_figures", "write_report", "ReplayMismatch", "ReplayResult", "Reproducer",
    "ReproducerError", "parse_reproducer", "replay", "write_reproducer", "CampaignState",
    "execute", "execute_batch", "make_target", "produce_batches", "run_campaign",
]
