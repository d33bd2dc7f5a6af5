"""Poison-checked receive buffer and cooperative watchdog.

Emulates dynamic address poisoning: after a frame is copied into the
fixed-capacity buffer, the unused tail is poisoned and any access touching it
becomes a fault report instead of a silent stray read.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field


class FaultKind(str, enum.Enum):
    OOB_READ = "oob_read"
    OOB_WRITE = "oob_write"
    DIV_BY_ZERO = "div_by_zero"
    INTEGER_WRAP_TRAP = "integer_wrap_trap"
    HANG = "hang"
    CRASH = "crash"


@dataclass(frozen=True)
class FaultReport:
    kind: FaultKind
    site: str
    detail: dict = field(default_factory=dict, compare=False)
    test_case_id: str | None = field(default=None, compare=False)

    @property
    def signature(self) -> tuple[str, str]:
        return (self.kind.value, self.site)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "site": self.site, "detail": dict(self.detail),
                "test_case_id": self.test_case_id}

    @classmethod
    def from_dict(cls, d: dict) -> "FaultReport":
        return cls(FaultKind(d["kind"]), d["site"], dict(d.get("detail") or {}), d.get("test_case_id"))


class TargetFault(Exception):
    """Raised inside a target when the oracle trips; carries the report."""

    def __init__(self, report: FaultReport):
        super().__init__(f"{report.kind.value} at {report.site}")
        self.report = report


class FrameTooLarge(ValueError):
    pass


class Watchdog:
    """Deadline plus step budget, checked cooperatively at every site entry
    and buffer access.  A deadline of 0 expires immediately."""

    def __init__(self, deadline: float = 2.0, max_steps: int = 2000):
        self.deadline = deadline
        self.max_steps = max_steps
        self.steps = 0
        self.site = "<none>"
        self._expires = 0.0

    def arm(self) -> None:
        self.steps = 0
        self.site = "<none>"
        self._expires = time.monotonic() + self.deadline

    def enter(self, site: str) -> None:
        self.site = site
        self.tick()

    def tick(self) -> None:
        self.steps += 1
        if self.deadline <= 0 or self.steps > self.max_steps or (
                self.steps % 256 == 0 and time.monotonic() > self._expires):
            raise TargetFault(FaultReport(FaultKind.HANG, self.site,
                                          {"steps": self.steps, "deadline": self.deadline}))


class GuardedBuffer:
    """Byte region with a per-byte poison map.

    ``shadow[i] == 1`` marks byte ``i`` as poisoned.  Offsets past
    ``capacity`` are out of range and fault the same way.
    """

    def __init__(self, capacity: int = 1514, watchdog: Watchdog | None = None):
        self.capacity = capacity
        self.storage = bytearray(capacity)
        self.shadow = bytearray(b"\x01" * capacity)
        self.live_len = 0
        self.watchdog = watchdog
        self.accesses: list[tuple[str, int, int, str]] = []
        self.record = False

    def load(self, frame: bytes) -> None:
        if len(frame) > self.capacity:
            raise FrameTooLarge(f"{len(frame)}-byte frame exceeds {self.capacity}-byte buffer")
        n = len(frame)
        self.storage[:n] = frame
        self.live_len = n
        self.shadow[:n] = bytes(n)
        self.shadow[n:] = b"\x01" * (self.capacity - n)

    def poison(self, start: int, end: int) -> None:
        self.shadow[start:end] = b"\x01" * (end - start)

    def unpoison(self, start: int, end: int) -> None:
        self.shadow[start:end] = bytes(end - start)

    def is_poisoned(self, offset: int) -> bool:
        return not 0 <= offset < self.capacity or bool(self.shadow[offset])

    def _check(self, kind: FaultKind, offset: int, length: int, site: str) -> None:
        if self.watchdog is not None:
            self.watchdog.site = site
            self.watchdog.tick()
        if self.record:
            self.accesses.append((kind.value, offset, length, site))
        end = offset + length
        if offset < 0 or length < 0 or end > self.capacity or self.shadow.find(1, offset, end) != -1:
            raise TargetFault(FaultReport(kind, site, {
                "offset": offset, "len": length, "live_len": self.live_len,
                "first_bad": self._first_bad(offset, end)}))

    def _first_bad(self, offset: int, end: int) -> int:
        for i in range(max(offset, 0), end):
            if self.is_poisoned(i):
                return i
        return offset

    def read(self, offset: int, length: int, site: str) -> bytes:
        self._check(FaultKind.OOB_READ, offset, length, site)
        return bytes(self.storage[offset:offset + length])

    def read_u8(self, offset: int, site: str) -> int:
        self._check(FaultKind.OOB_READ, offset, 1, site)
        return self.storage[offset]

    def read_u16(self, offset: int, site: str) -> int:
        self._check(FaultKind.OOB_READ, offset, 2, site)
        return (self.storage[offset] << 8) | self.storage[offset + 1]

    def read_u32(self, offset: int, site: str) -> int:
        self._check(FaultKind.OOB_READ, offset, 4, site)
        return int.from_bytes(self.storage[offset:offset + 4], "big")

    def write(self, offset: int, data: bytes, site: str) -> None:
        self._check(FaultKind.OOB_WRITE, offset, len(data), site)
        self.storage[offset:offset + len(data)] = data


def guarded_load(buf: GuardedBuffer, frame: bytes) -> None:
    buf.load(frame)


def checked_read(buf: GuardedBuffer, offset: int, length: int, site: str) -> bytes:
    return buf.read(offset, length, site)


def checked_write(buf: GuardedBuffer, offset: int, data: bytes, site: str) -> None:
    buf.write(offset, data, site)


def checked_div(a: int, b: int, site: str) -> int:
    if b == 0:
        raise TargetFault(FaultReport(FaultKind.DIV_BY_ZERO, site, {"dividend": a, "divisor": b}))
    return a // b


def checked_sub(a: int, b: int, site: str, bits: int = 16) -> int:
    """Unsigned subtraction that traps instead of wrapping."""
    if b > a:
        raise TargetFault(FaultReport(FaultKind.INTEGER_WRAP_TRAP, site,
                                      {"minuend": a, "subtrahend": b, "bits": bits}))
    return a - b
