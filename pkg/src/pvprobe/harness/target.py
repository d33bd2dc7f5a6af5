from __future__ import annotations

import abc
import enum
from dataclasses import dataclass

from .guarded import FaultReport


class Outcome(str, enum.Enum):
    PROCESSED = "processed"
    DROPPED = "dropped"
    FAULT = "fault"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class DeliveryResult:
    outcome: Outcome
    reason: str | None = None
    fault: FaultReport | None = None

    @classmethod
    def processed(cls) -> "DeliveryResult":
        return cls(Outcome.PROCESSED)

    @classmethod
    def dropped(cls, reason: str) -> "DeliveryResult":
        return cls(Outcome.DROPPED, reason)

    @classmethod
    def faulted(cls, report: FaultReport) -> "DeliveryResult":
        outcome = Outcome.TIMEOUT if report.kind.value == "hang" else Outcome.FAULT
        return cls(outcome, None, report)

    @property
    def is_fault(self) -> bool:
        return self.fault is not None

    def to_dict(self) -> dict:
        return {"outcome": self.outcome.value, "reason": self.reason,
                "fault": self.fault.to_dict() if self.fault else None}

    @classmethod
    def from_dict(cls, d: dict) -> "DeliveryResult":
        fault = FaultReport.from_dict(d["fault"]) if d.get("fault") else None
        return cls(Outcome(d["outcome"]), d.get("reason"), fault)


class SyscallError(Exception):
    """The target rejected a socket call (bad state, unknown descriptor, ...)."""


class TargetUnreachable(ConnectionError):
    pass


class Target(abc.ABC):
    """What the campaign drives: a stack that takes socket calls and frames."""

    @abc.abstractmethod
    def reset(self) -> None:
        """Drop every socket and pending fault."""

    @abc.abstractmethod
    def syscall(self, op: str, args: dict) -> object:
        """Run one socket call; raises SyscallError or returns its value."""

    @abc.abstractmethod
    def deliver(self, frame: bytes) -> DeliveryResult:
        ...

    @abc.abstractmethod
    def drain_outbound(self) -> list[bytes]:
        ...

    def inspect(self, key: str) -> str:
        raise NotImplementedError(f"{type(self).__name__} does not support inspection")

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
