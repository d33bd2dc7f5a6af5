from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Iterable

from ..harness.guarded import FaultKind, FaultReport


@dataclass(frozen=True)
class TestCase:
    test_case_id: str
    template: str
    scenario_id: str
    plan: str  # serialized instructions, one per line
    frame_hex: str
    plan_id: int = 0
    level: int = 0

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "TestCase":
        return cls(**d)


def case_id(template: str, plan_id: int, scenario_id: str) -> str:
    return f"{template}/{plan_id}/{scenario_id}"


@dataclass
class FaultEntry:
    """One unique signature: its earliest occurrence and how often it was seen."""

    report: FaultReport
    count: int = 1
    order: tuple = ()
    test_case: TestCase | None = None
    reproducer: str | None = None

    @property
    def signature(self) -> tuple[str, str]:
        return self.report.signature

    def absorb(self, other: "FaultEntry") -> None:
        self.count += other.count
        if other.order < self.order:
            self.report, self.order, self.test_case = other.report, other.order, other.test_case

    def to_dict(self) -> dict:
        return {"signature": {"kind": self.report.kind.value, "site": self.report.site},
                "first_test_case_id": self.report.test_case_id, "count": self.count,
                "order": list(self.order), "report": self.report.to_dict(),
                "test_case": self.test_case.to_dict() if self.test_case else None,
                "reproducer": self.reproducer}

    @classmethod
    def from_dict(cls, d: dict) -> "FaultEntry":
        tc = TestCase.from_dict(d["test_case"]) if d.get("test_case") else None
        return cls(FaultReport.from_dict(d["report"]), d["count"], tuple(d.get("order", ())), tc,
                   d.get("reproducer"))


def dedupe(faults: Iterable[FaultReport], order_key=None) -> dict[tuple[str, str], FaultEntry]:
    """Group reports by (kind, site).  The representative is the report with
    the smallest ``order_key`` (stream position when no key is given)."""
    out: dict[tuple[str, str], FaultEntry] = {}
    for i, report in enumerate(faults):
        order = (order_key(report),) if order_key else (i,)
        entry = FaultEntry(report, 1, order)
        if report.signature in out:
            out[report.signature].absorb(entry)
        else:
            out[report.signature] = entry
    return out


@dataclass
class FaultCollector:
    """Shared sink for fault entries; safe for concurrent ``add``."""

    entries: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add(self, entry: FaultEntry) -> None:
        with self._lock:
            have = self.entries.get(entry.signature)
            if have is None:
                self.entries[entry.signature] = entry
            else:
                have.absorb(entry)

    def merge(self, entries: dict) -> None:
        for entry in entries.values():
            self.add(entry)

    def signatures(self) -> set[tuple[str, str]]:
        return set(self.entries)

    def sorted(self) -> list[FaultEntry]:
        return sorted(self.entries.values(), key=lambda e: e.order)


__all__ = ["TestCase", "case_id", "FaultEntry", "dedupe", "FaultCollector", "FaultKind"]
