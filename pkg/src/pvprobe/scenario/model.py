"""Scenario files: one step per line.

    scenario <id>            identifier (defaults to the file stem)
    protocol tcp|udp
    state <NAME>             protocol state the target is in at injection
    call <op> [args...]      socket call (socket, bind, listen, accept, connect, send, recv, close)
    send <FLAGS> [k=v ...]   inbound packet from the peer (seq=, ack=, data=<hex>)
    expect <FLAGS>           outbound packet the target must emit next
    inject [FLAGS]           deliver the mutant; must be the last step

Flags are TCP flag names joined with ``-`` or ``|``, e.g. ``SYN-ACK``.
Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

from ..packet.fields import TCP_FLAGS

SYSCALLS = ("socket", "bind", "listen", "accept", "connect", "send", "recv", "close")


class ScenarioError(ValueError):
    pass


class StepKind(str, enum.Enum):
    SYSCALL = "syscall"
    SEND_PACKET = "send_packet"
    EXPECT_PACKET = "expect_packet"
    INJECT_MUTANT = "inject_mutant"

    @property
    def direction(self) -> str | None:
        return {"send_packet": "inbound", "expect_packet": "outbound",
                "inject_mutant": "inbound"}.get(self.value)


def parse_flags(text: str) -> int:
    value = 0
    for name in text.replace("|", "-").split("-"):
        name = name.strip().upper()
        if not name:
            continue
        if name not in TCP_FLAGS:
            raise ScenarioError(f"unknown TCP flag {name!r}")
        value |= TCP_FLAGS[name]
    return value


def format_flags(value: int) -> str:
    order = ("SYN", "FIN", "RST", "PSH", "URG", "ECE", "CWR", "ACK")
    return "-".join(n for n in order if value & TCP_FLAGS[n]) or "NONE"


@dataclass(frozen=True)
class Step:
    kind: StepKind
    op: str = ""  # syscall name, or flags text for packet steps
    args: tuple[str, ...] = ()
    options: tuple[tuple[str, str], ...] = ()

    @property
    def flags(self) -> int:
        return parse_flags(self.op) if self.op else 0

    def option(self, key: str) -> str | None:
        return dict(self.options).get(key)

    def to_line(self) -> str:
        verb = {StepKind.SYSCALL: "call", StepKind.SEND_PACKET: "send",
                StepKind.EXPECT_PACKET: "expect", StepKind.INJECT_MUTANT: "inject"}[self.kind]
        parts = [verb] + ([self.op] if self.op else []) + list(self.args)
        parts += [f"{k}={v}" for k, v in self.options]
        return " ".join(parts)


@dataclass(frozen=True)
class Scenario:
    id: str
    protocol: str
    injection_state: str
    steps: tuple[Step, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        self.validate()

    def validate(self) -> None:
        if self.protocol not in ("tcp", "udp"):
            raise ScenarioError(f"{self.id}: protocol must be tcp or udp")
        injects = [i for i, s in enumerate(self.steps) if s.kind is StepKind.INJECT_MUTANT]
        if len(injects) != 1 or injects[0] != len(self.steps) - 1:
            raise ScenarioError(f"{self.id}: exactly one inject step, and it must be last")
        if self.protocol == "udp" and any(s.kind in (StepKind.SEND_PACKET, StepKind.EXPECT_PACKET)
                                          for s in self.steps):
            raise ScenarioError(f"{self.id}: packet exchange steps are TCP-only")

    @property
    def inject(self) -> Step:
        return self.steps[-1]

    def to_text(self) -> str:
        lines = [f"scenario {self.id}", f"protocol {self.protocol}", f"state {self.injection_state}"]
        return "\n".join(lines + [s.to_line() for s in self.steps]) + "\n"


def parse_step(line: str) -> Step:
    verb, *rest = line.split()
    opts = tuple(tuple(tok.split("=", 1)) for tok in rest if "=" in tok)
    plain = [tok for tok in rest if "=" not in tok]
    if verb == "call":
        if not plain or plain[0] not in SYSCALLS:
            raise ScenarioError(f"bad syscall step {line!r}")
        return Step(StepKind.SYSCALL, plain[0], tuple(plain[1:]), opts)
    if verb in ("send", "expect"):
        if len(plain) != 1:
            raise ScenarioError(f"{verb} needs exactly one flags word: {line!r}")
        parse_flags(plain[0])
        kind = StepKind.SEND_PACKET if verb == "send" else StepKind.EXPECT_PACKET
        return Step(kind, plain[0], (), opts)
    if verb == "inject":
        if len(plain) > 1:
            raise ScenarioError(f"bad inject step {line!r}")
        if plain:
            parse_flags(plain[0])
        return Step(StepKind.INJECT_MUTANT, plain[0] if plain else "", (), opts)
    raise ScenarioError(f"unknown step {verb!r}")


def parse_scenario(text: str, default_id: str = "scenario") -> Scenario:
    sid, protocol, state, steps = default_id, None, None, []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        try:
            if head == "scenario":
                sid = rest.strip()
            elif head == "protocol":
                protocol = rest.strip().lower()
            elif head == "state":
                state = rest.strip().upper()
            else:
                steps.append(parse_step(line))
        except ScenarioError as exc:
            raise ScenarioError(f"line {n}: {exc}") from None
    if protocol is None or state is None:
        raise ScenarioError(f"{sid}: protocol and state lines are required")
    return Scenario(sid, protocol, state, tuple(steps))


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), default_id=path.stem)
