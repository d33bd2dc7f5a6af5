"""Producer/consumer campaign execution.

The producer walks the plan stream of each template and ships plans in
numbered batches over a bounded queue; each consumer owns a private target and
runs every plan of a batch under every scenario of the template's protocol.
Batch results are folded back in batch order, which makes the report, the
fault representatives and the checkpoints independent of the worker count.
"""

from __future__ import annotations

import json
import multiprocessing as mp
import queue
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

from ..generator import count_plans, generate
from ..harness.agent import AgentTarget
from ..harness.target import Target, TargetUnreachable
from ..mutation import parse_plan
from ..packet import builtin_template
from ..refstack import RefStack
from ..scenario.runner import PrefixMismatch, PrefixTimeout, bind_mutant, run_prefix
from .config import CampaignConfig
from .dedup import FaultCollector, FaultEntry, TestCase, case_id

MAX_WARNINGS = 50


def make_target(config: CampaignConfig) -> Target:
    spec = config.target
    if spec.kind == "refstack":
        return RefStack(spec.bugs, deadline=config.deadline, max_steps=spec.max_steps)
    host, port = spec.host_port
    return AgentTarget.connect(host, port, init={"bugs": list(spec.bugs), "deadline": config.deadline,
                                                 "max_steps": spec.max_steps})


@dataclass(frozen=True)
class Batch:
    number: int
    template: str
    plans: tuple[tuple[int, int, str], ...]  # (plan_id, level, serialized plan)


@dataclass
class BatchResult:
    number: int
    cases: int = 0
    outcomes: Counter = field(default_factory=Counter)  # (scenario_id, outcome) -> n
    levels: Counter = field(default_factory=Counter)
    faults: dict = field(default_factory=dict)  # signature -> FaultEntry
    fault_rows: list = field(default_factory=list)
    faulting_cases: int = 0
    prefix_errors: int = 0
    warnings: list = field(default_factory=list)


def execute_batch(target: Target, config: CampaignConfig, batch: Batch) -> BatchResult:
    template = builtin_template(batch.template)
    scenarios = config.scenario_set(template.transport)
    res = BatchResult(batch.number)
    index = 0
    for plan_id, level, text in batch.plans:
        plan = parse_plan(text, plan_id)
        for scenario in scenarios:
            order = (batch.number, index)
            index += 1
            tcid = case_id(batch.template, plan_id, scenario.id)
            res.cases += 1
            res.levels[level] += 1
            target.reset()
            try:
                ctx = run_prefix(scenario, target, template, config.prefix_timeout)
            except (PrefixMismatch, PrefixTimeout) as exc:
                res.prefix_errors += 1
                res.outcomes[(scenario.id, "prefix_error")] += 1
                if len(res.warnings) < MAX_WARNINGS:
                    res.warnings.append(f"{tcid}: {exc}")
                continue
            frame = bind_mutant(ctx, template, plan).data
            result = target.deliver(frame)
            res.outcomes[(scenario.id, result.outcome.value)] += 1
            if result.fault is None:
                continue
            report = type(result.fault)(result.fault.kind, result.fault.site, result.fault.detail, tcid)
            res.faulting_cases += 1
            res.fault_rows.append((tcid, report.kind.value, report.site, scenario.id, level,
                                   plan.describe()))
            entry = res.faults.get(report.signature)
            if entry is None:
                tc = TestCase(tcid, batch.template, scenario.id, text, frame.hex(), plan_id, level)
                res.faults[report.signature] = FaultEntry(report, 1, order, tc)
            else:
                entry.count += 1
    return res


def produce_batches(config: CampaignConfig, stats: dict) -> Iterator[Batch]:
    """The single plan stream, chunked.  Fills ``stats`` per template as it goes."""
    number = 0
    for key in config.template_keys():
        template = builtin_template(key)
        n_scen = len(config.scenario_set(template.transport))
        stream = generate(template, config.generator)
        entry = stats[key] = {"count_plans": count_plans(template, config.generator),
                              "emitted": 0, "suppressed": 0, "scenarios": n_scen}
        chunk: list = []
        for plan in stream:
            chunk.append((plan.plan_id, plan.level, plan.serialize()))
            if len(chunk) == config.batch_size:
                yield Batch(number, key, tuple(chunk))
                number += 1
                chunk = []
        if chunk:
            yield Batch(number, key, tuple(chunk))
            number += 1
        entry["emitted"], entry["suppressed"] = stream.emitted, stream.suppressed


@dataclass
class CampaignState:
    """Everything folded so far; the checkpoint is this state serialized."""

    next_batch: int = 0
    cases: int = 0
    levels: Counter = field(default_factory=Counter)
    outcomes: Counter = field(default_factory=Counter)
    collector: FaultCollector = field(default_factory=FaultCollector)
    fault_rows: list = field(default_factory=list)
    faulting_cases: int = 0
    prefix_errors: int = 0
    warnings: list = field(default_factory=list)

    def fold(self, r: BatchResult) -> None:
        self.next_batch = r.number + 1
        self.cases += r.cases
        self.levels.update(r.levels)
        self.outcomes.update(r.outcomes)
        self.collector.merge(r.faults)
        self.fault_rows.extend(r.fault_rows)
        self.faulting_cases += r.faulting_cases
        self.prefix_errors += r.prefix_errors
        self.warnings.extend(r.warnings[:max(0, MAX_WARNINGS - len(self.warnings))])

    def to_dict(self) -> dict:
        return {"next_batch": self.next_batch, "cases": self.cases,
                "levels": {str(k): v for k, v in self.levels.items()},
                "outcomes": [[s, o, n] for (s, o), n in self.outcomes.items()],
                "faults": [e.to_dict() for e in self.collector.sorted()],
                "fault_rows": [list(r) for r in self.fault_rows],
                "faulting_cases": self.faulting_cases, "prefix_errors": self.prefix_errors,
                "warnings": self.warnings}

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignState":
        st = cls(d["next_batch"], d["cases"], Counter({int(k): v for k, v in d["levels"].items()}),
                 Counter({(s, o): n for s, o, n in d["outcomes"]}))
        for e in d["faults"]:
            st.collector.add(FaultEntry.from_dict(e))
        st.fault_rows = [tuple(r) for r in d["fault_rows"]]
        st.faulting_cases, st.prefix_errors = d["faulting_cases"], d["prefix_errors"]
        st.warnings = list(d["warnings"])
        return st


def _config_fingerprint(config: CampaignConfig) -> dict:
    d = config.to_dict()
    for k in ("workers", "output", "checkpoint_every", "fault_budget"):
        d.pop(k)
    return d


def _load_checkpoint(path: Path, config: CampaignConfig) -> CampaignState | None:
    if not path.exists():
        return None
    data = json.loads(path.read_text())
    if data.get("config") != _config_fingerprint(config):
        return None
    return CampaignState.from_dict(data["state"])


def _save_checkpoint(path: Path, config: CampaignConfig, state: CampaignState) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps({"config": _config_fingerprint(config), "state": state.to_dict()}))
    tmp.replace(path)


def _worker_main(config: CampaignConfig, tasks, results) -> None:
    try:
        target = make_target(config)
    except Exception as exc:  # reported to the parent, which aborts the run
        results.put(("error", f"{type(exc).__name__}: {exc}"))
        return
    try:
        while True:
            batch = tasks.get()
            if batch is None:
                break
            results.put(("ok", execute_batch(target, config, batch)))
    except Exception as exc:
        results.put(("error", f"{type(exc).__name__}: {exc}"))
    finally:
        target.close()


class _Folder:
    """Folds batch results strictly in batch order; checkpoints as it goes."""

    def __init__(self, state: CampaignState, config: CampaignConfig, checkpoint: Path | None,
                 progress: Callable[[CampaignState], None] | None):
        self.state = state
        self.config = config
        self.checkpoint = checkpoint
        self.progress = progress
        self.pending: dict[int, BatchResult] = {}
        self.last_mark = state.cases // config.checkpoint_every

    def add(self, r: BatchResult) -> None:
        self.pending[r.number] = r
        while self.state.next_batch in self.pending:
            self.state.fold(self.pending.pop(self.state.next_batch))
            mark = self.state.cases // self.config.checkpoint_every
            if mark > self.last_mark:
                self.last_mark = mark
                if self.checkpoint is not None:
                    _save_checkpoint(self.checkpoint, self.config, self.state)
                if self.progress:
                    self.progress(self.state)

    @property
    def budget_spent(self) -> bool:
        b = self.config.fault_budget
        return b > 0 and self.state.faulting_cases + sum(p.faulting_cases for p in self.pending.values()) >= b


def execute(config: CampaignConfig, checkpoint: Path | None = None, resume: bool = True,
            progress: Callable[[CampaignState], None] | None = None) -> tuple[CampaignState, dict, str]:
    """Run the campaign; returns (folded state, per-template stats, stop reason)."""
    state = (_load_checkpoint(checkpoint, config) if checkpoint and resume else None) or CampaignState()
    start = state.next_batch
    folder = _Folder(state, config, checkpoint, progress)
    stats: dict = {}
    stopped = "exhausted"
    batches = (b for b in produce_batches(config, stats) if b.number >= start)

    if config.workers == 1:
        target = make_target(config)
        try:
            for batch in batches:
                folder.add(execute_batch(target, config, batch))
                if folder.budget_spent:
                    stopped = "fault_budget"
                    break
        finally:
            target.close()
    else:
        stopped = _execute_parallel(config, batches, folder)
    if stopped != "exhausted":
        for _ in produce_batches(config, stats):  # finish the stream so stats are complete
            pass
    if checkpoint is not None:
        _save_checkpoint(checkpoint, config, state)
    return state, stats, stopped


def _execute_parallel(config: CampaignConfig, batches: Iterator[Batch], folder: _Folder) -> str:
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
    tasks = ctx.Queue(maxsize=4 * config.workers)
    results = ctx.Queue()
    procs = [ctx.Process(target=_worker_main, args=(config, tasks, results), daemon=True)
             for _ in range(config.workers)]
    for p in procs:
        p.start()
    sent = received = 0
    stopped = "exhausted"

    def take(block: bool) -> bool:
        nonlocal received
        try:
            kind, payload = results.get(block=block, timeout=1.0 if block else None)
        except queue.Empty:
            if block and not any(p.is_alive() for p in procs):
                raise TargetUnreachable("all campaign workers exited")
            return False
        if kind == "error":
            raise TargetUnreachable(payload)
        received += 1
        folder.add(payload)
        return True

    try:
        for batch in batches:
            while True:
                try:
                    tasks.put(batch, timeout=0.05)
                    break
                except queue.Full:
                    while take(False):
                        pass
            sent += 1
            while take(False):
                pass
            if folder.budget_spent:
                stopped = "fault_budget"
                break
        for _ in procs:
            tasks.put(None)
        while received < sent:
            take(True)
    finally:
        for p in procs:
            p.join(timeout=5)
            if p.is_alive():
                p.terminate()
    return stopped
