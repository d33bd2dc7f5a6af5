"""Drive a target through a scenario prefix and bind the mutant to it."""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field

from ..harness.target import SyscallError, Target
from ..mutation import MutationPlan, Replace, apply
from ..packet import Packet, PacketTemplate, encode
from ..packet.fields import PEER_PORT, TARGET_PORT
from .model import Scenario, Step, StepKind, format_flags

PEER_ISN = 1000
PREFIX_TIMEOUT = 2.0


class PrefixMismatch(RuntimeError):
    """The target's behaviour during the prefix broke the scenario's script."""


class PrefixTimeout(RuntimeError):
    """An expected outbound packet did not arrive in time."""


@dataclass(frozen=True)
class TcpSummary:
    src_port: int
    dst_port: int
    seq: int
    ack: int
    flags: int
    window: int
    payload_len: int

    @property
    def seq_space(self) -> int:
        return self.payload_len + (1 if self.flags & 0x02 else 0) + (1 if self.flags & 0x01 else 0)


def summarize_tcp(frame: bytes) -> TcpSummary | None:
    """Ports, numbers and flags of an Ethernet/IP/TCP frame, or None."""
    if len(frame) < 14:
        return None
    ethertype = struct.unpack_from("!H", frame, 12)[0]
    if ethertype == 0x0800 and len(frame) >= 34:
        hlen = (frame[14] & 0x0F) * 4
        if frame[23] != 6:
            return None
        total = struct.unpack_from("!H", frame, 16)[0]
        off, end = 14 + hlen, 14 + total
    elif ethertype == 0x86DD and len(frame) >= 54:
        if frame[20] != 6:
            return None
        off, end = 54, 54 + struct.unpack_from("!H", frame, 18)[0]
    else:
        return None
    if len(frame) < off + 20:
        return None
    sport, dport, seq, ack, doff, flags, window = struct.unpack_from("!HHIIBBH", frame, off)
    return TcpSummary(sport, dport, seq, ack, flags, window, max(end - off - (doff >> 4) * 4, 0))


@dataclass
class InjectionContext:
    scenario_id: str
    protocol: str
    family: str
    local_port: int = TARGET_PORT  # the target's port
    remote_port: int = PEER_PORT
    seq: int | None = None  # next peer sequence number
    ack: int | None = None  # next sequence number expected from the target
    window: int | None = None  # window the target advertised last
    flags: int | None = None
    fds: dict = field(default_factory=dict)

    @property
    def bindings(self) -> dict[str, int]:
        """Template field values that make the mutant pass the target's gates."""
        t = self.protocol
        out = {f"{t}.src_port": self.remote_port, f"{t}.dst_port": self.local_port}
        if t == "tcp":
            if self.seq is not None:
                out["tcp.seq"] = self.seq
            if self.ack is not None:
                out["tcp.ack"] = self.ack
            if self.flags is not None:
                out["tcp.flags"] = self.flags
        return out


class _Peer:
    def __init__(self, scenario: Scenario, target: Target, template: PacketTemplate, timeout: float):
        self.scenario = scenario
        self.target = target
        self.template = template
        self.timeout = timeout
        self.ctx = InjectionContext(scenario.id, scenario.protocol, template.network or "ipv4")
        self.pending: list[bytes] = []
        self.snd_nxt = PEER_ISN
        self.rcv_nxt: int | None = None
        self.last_target_seq: int | None = None

    def syscall(self, step: Step) -> None:
        op, a, fds = step.op, step.args, self.ctx.fds
        args: dict = {}
        if op == "socket":
            args = {"proto": a[0] if a else self.scenario.protocol, "family": self.ctx.family}
        elif op in ("bind", "connect"):
            args = {"fd": fds["sock"], "port": int(a[0])}
            if op == "bind":
                self.ctx.local_port = int(a[0])
            else:
                self.ctx.remote_port = int(a[0])
        elif op in ("listen", "accept"):
            args = {"fd": fds["sock"]}
        elif op in ("send", "recv", "close"):
            args = {"fd": fds.get(a[0] if a else "conn", fds.get("sock"))}
            if op == "send":
                args["data"] = bytes.fromhex(step.option("data") or "")
        try:
            value = self.target.syscall(op, args)
        except SyscallError as exc:
            raise PrefixMismatch(f"{self.scenario.id}: {step.to_line()}: {exc}") from None
        if op == "socket":
            fds["sock"] = value
        elif op == "accept":
            fds["conn"] = value
        self.pending.extend(self.target.drain_outbound())

    def send(self, step: Step) -> None:
        flags = step.flags
        seq = int(step.option("seq"), 0) if step.option("seq") else self.snd_nxt
        ack = int(step.option("ack"), 0) if step.option("ack") else (self.rcv_nxt or 0)
        payload = bytes.fromhex(step.option("data") or "")
        values = {"tcp.src_port": self.ctx.remote_port, "tcp.dst_port": self.ctx.local_port,
                  "tcp.seq": seq, "tcp.ack": ack, "tcp.flags": flags}
        frame = encode(self.template.with_fields(values).with_payload(payload)).data
        result = self.target.deliver(frame)
        if result.is_fault:
            raise PrefixMismatch(f"{self.scenario.id}: prefix packet {step.to_line()} faulted: "
                                 f"{result.fault.kind.value} at {result.fault.site}")
        self.pending.extend(self.target.drain_outbound())
        self.snd_nxt = (seq + len(payload) + (1 if flags & 0x02 else 0) + (1 if flags & 0x01 else 0)) & 0xFFFF_FFFF

    def expect(self, step: Step) -> None:
        deadline = time.monotonic() + self.timeout
        while not self.pending:
            self.pending.extend(self.target.drain_outbound())
            if self.pending:
                break
            if time.monotonic() >= deadline:
                raise PrefixTimeout(f"{self.scenario.id}: no packet for {step.to_line()}")
            time.sleep(0.005)
        frame = self.pending.pop(0)
        got = summarize_tcp(frame)
        want = step.flags
        where = f"{self.scenario.id}: {step.to_line()}"
        if got is None:
            raise PrefixMismatch(f"{where}: target sent a non-TCP frame")
        if got.flags != want:
            raise PrefixMismatch(f"{where}: target sent {format_flags(got.flags)}")
        if got.src_port != self.ctx.local_port or got.dst_port != self.ctx.remote_port:
            raise PrefixMismatch(f"{where}: ports {got.src_port}->{got.dst_port}")
        if self.last_target_seq is not None and (got.seq - self.last_target_seq) & 0xFFFF_FFFF >= 0x8000_0000:
            raise PrefixMismatch(f"{where}: sequence number went backwards")
        self.last_target_seq = got.seq
        self.rcv_nxt = (got.seq + got.seq_space) & 0xFFFF_FFFF
        self.ctx.window = got.window

    def finish(self, inject: Step) -> InjectionContext:
        ctx = self.ctx
        if ctx.protocol == "tcp":
            if self.rcv_nxt is not None or self.snd_nxt != PEER_ISN:
                ctx.seq = self.snd_nxt
                ctx.ack = self.rcv_nxt
            ctx.flags = inject.flags if inject.op else None
        return ctx


def run_prefix(scenario: Scenario, target: Target, template: PacketTemplate,
               timeout: float = PREFIX_TIMEOUT) -> InjectionContext:
    """Run every step before the injection and return the live numbers.

    The target must have been reset.  ``template`` supplies the network layer
    for the prefix packets (scenarios are written independent of IP version).
    """
    if template.transport != scenario.protocol:
        raise ValueError(f"{scenario.id} is a {scenario.protocol} scenario, template is {template.key}")
    peer = _Peer(scenario, target, template, timeout)
    for step in scenario.steps[:-1]:
        if step.kind is StepKind.SYSCALL:
            peer.syscall(step)
        elif step.kind is StepKind.SEND_PACKET:
            peer.send(step)
        elif step.kind is StepKind.EXPECT_PACKET:
            peer.expect(step)
    target.drain_outbound()
    return peer.finish(scenario.inject)


def bind_mutant(context: InjectionContext, template: PacketTemplate, plan: MutationPlan) -> Packet:
    """Apply ``plan`` to ``template`` after pinning it to the live connection.

    A Replace aimed at a bound field keeps the plan's value.
    """
    planned = {ins.key for ins in plan.instructions if isinstance(ins, Replace)}
    bindings = {k: v for k, v in context.bindings.items() if k not in planned}
    return apply(template.with_fields(bindings), plan)
