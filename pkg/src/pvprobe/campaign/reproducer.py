"""Self-contained reproducer scripts and their replay.

A reproducer is plain text in four sections::

    template ipv4-tcp
    bugs B1 B2
    signature oob_read tcp_parse_options
    test_case ipv4-tcp/17/tcp-established
    [scenario]
    ...scenario file text...
    [plan]
    replace tcp data_offset 0xf
    [frame]
    02 00 00 00 00 01 ...
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from ..harness.target import DeliveryResult, Target
from ..mutation import parse_plan
from ..packet import builtin_template, hexdump, parse_hex
from ..refstack import RefStack
from ..scenario import Scenario, parse_scenario
from ..scenario.runner import PrefixMismatch, PrefixTimeout, bind_mutant, run_prefix
from .dedup import TestCase


class ReproducerError(ValueError):
    """The script is malformed."""


class ReplayMismatch(RuntimeError):
    """The frame rebuilt from scenario and plan differs from the recorded one."""


@dataclass(frozen=True)
class Reproducer:
    template: str
    bugs: tuple[str, ...]
    signature: tuple[str, str] | None
    test_case_id: str
    scenario: Scenario
    plan: str
    frame: bytes

    def to_text(self) -> str:
        head = [f"template {self.template}", "bugs " + " ".join(self.bugs)]
        if self.signature:
            head.append(f"signature {self.signature[0]} {self.signature[1]}")
        head.append(f"test_case {self.test_case_id}")
        return "\n".join(head + ["[scenario]", self.scenario.to_text().rstrip("\n"),
                                 "[plan]", self.plan, "[frame]", hexdump(self.frame)]) + "\n"


def write_reproducer(test_case: TestCase, scenario: Scenario, path: str | Path,
                     bugs=(), signature: tuple[str, str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rep = Reproducer(test_case.template, tuple(bugs), signature, test_case.test_case_id, scenario,
                     test_case.plan, bytes.fromhex(test_case.frame_hex))
    path.write_text(rep.to_text())
    return path


def parse_reproducer(text: str) -> Reproducer:
    head: dict[str, str] = {}
    sections: dict[str, list[str]] = {}
    current = None
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1]
            sections[current] = []
        elif current is None:
            if stripped:
                key, _, value = stripped.partition(" ")
                head[key] = value.strip()
        else:
            sections[current].append(line)
    missing = {"scenario", "plan", "frame"} - set(sections)
    if "template" not in head or missing:
        raise ReproducerError(f"reproducer lacks {', '.join(sorted(missing)) or 'template'}")
    sig = tuple(head["signature"].split()) if head.get("signature") else None
    if sig is not None and len(sig) != 2:
        raise ReproducerError("signature needs a kind and a site")
    try:
        frame = parse_hex(" ".join(sections["frame"]))
    except ValueError as exc:
        raise ReproducerError(f"bad frame hex: {exc}") from None
    return Reproducer(head["template"], tuple(head.get("bugs", "").split()), sig,
                      head.get("test_case", "replay"), parse_scenario("\n".join(sections["scenario"])),
                      "\n".join(sections["plan"]).strip(), frame)


@dataclass(frozen=True)
class ReplayResult:
    expected: tuple[str, str] | None
    result: DeliveryResult

    @property
    def observed(self) -> tuple[str, str] | None:
        return self.result.fault.signature if self.result.fault else None

    @property
    def matches(self) -> bool:
        return self.expected == self.observed


def replay(source: str | Path | Reproducer, target: Target | None = None) -> ReplayResult:
    """Re-run a reproducer.  Raises ReplayMismatch when the frame rebuilt
    from the scenario prefix and plan is not the recorded frame."""
    rep = source if isinstance(source, Reproducer) else parse_reproducer(Path(source).read_text())
    target = target or RefStack(rep.bugs)
    template = builtin_template(rep.template)
    plan = parse_plan(rep.plan)
    target.reset()
    try:
        ctx = run_prefix(rep.scenario, target, template)
    except (PrefixMismatch, PrefixTimeout) as exc:
        raise ReplayMismatch(f"prefix failed: {exc}") from None
    frame = bind_mutant(ctx, template, plan).data
    if frame != rep.frame:
        raise ReplayMismatch(f"frame/plan mismatch: plan builds {frame.hex()} "
                             f"but the script records {rep.frame.hex()}")
    return ReplayResult(rep.signature, target.deliver(frame))
