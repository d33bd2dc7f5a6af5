"""Agent wire protocol: drive a stack living in another process.

Frame layout is ``length (4 bytes, big-endian) || opcode (1 byte) || payload``
where ``length`` counts the opcode byte plus the payload.
"""

from __future__ import annotations

import json
import socket
import socketserver
import struct
import subprocess
import sys
import threading
from typing import BinaryIO, Callable

from .guarded import FaultReport
from .target import DeliveryResult, Outcome, SyscallError, Target, TargetUnreachable

INIT = 0x01
SYSCALL = 0x02
PACKET = 0x03
RESULT = 0x04
FAULT = 0x05
END_TEST = 0x06
OPCODES = {INIT: "INIT", SYSCALL: "SYSCALL", PACKET: "PACKET", RESULT: "RESULT",
           FAULT: "FAULT", END_TEST: "END_TEST"}

SYSCALL_IDS = {"socket": 1, "bind": 2, "listen": 3, "accept": 4, "connect": 5,
               "send": 6, "recv": 7, "close": 8, "inspect": 0xF0}
SYSCALL_NAMES = {v: k for k, v in SYSCALL_IDS.items()}

# argument tag -> (name, type)
ARG_TAGS = {1: ("fd", int), 2: ("port", int), 3: ("proto", str), 4: ("family", str),
            5: ("data", bytes), 6: ("backlog", int), 7: ("size", int), 8: ("key", str)}
ARG_BY_NAME = {name: (tag, typ) for tag, (name, typ) in ARG_TAGS.items()}


class ShortFrame(ValueError):
    pass


class UnknownOpcode(ValueError):
    pass


def encode_frame(opcode: int, payload: bytes = b"") -> bytes:
    if opcode not in OPCODES:
        raise UnknownOpcode(f"opcode 0x{opcode:02x}")
    return struct.pack("!IB", 1 + len(payload), opcode) + bytes(payload)


def decode_frame(data: bytes) -> tuple[int, bytes]:
    """Decode exactly one frame; trailing bytes are an error."""
    if len(data) < 5:
        raise ShortFrame(f"{len(data)} bytes, need at least 5")
    length, opcode = struct.unpack_from("!IB", data)
    if length < 1 or len(data) != 4 + length:
        raise ShortFrame(f"length field {length} but {len(data) - 4} bytes follow")
    if opcode not in OPCODES:
        raise UnknownOpcode(f"opcode 0x{opcode:02x}")
    return opcode, bytes(data[5:])


def read_frame(stream: BinaryIO) -> tuple[int, bytes] | None:
    """Read one frame from a byte stream; None on clean end of stream."""
    head = _read_exact(stream, 4)
    if head is None:
        return None
    (length,) = struct.unpack("!I", head)
    body = _read_exact(stream, length) if length else b""
    if body is None or length < 1:
        raise ShortFrame("stream ended inside a frame")
    return decode_frame(head + body)


def _read_exact(stream: BinaryIO, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            if buf:
                raise ShortFrame("stream ended inside a frame")
            return None
        buf += chunk
    return bytes(buf)


def encode_syscall(op: str, args: dict | None = None) -> bytes:
    try:
        out = bytearray([SYSCALL_IDS[op]])
    except KeyError:
        raise SyscallError(f"unsupported syscall {op!r}") from None
    for name, value in (args or {}).items():
        tag, typ = ARG_BY_NAME[name]
        if typ is int:
            raw = struct.pack("!I", int(value))
        elif typ is str:
            raw = str(value).encode()
        else:
            raw = value.encode() if isinstance(value, str) else bytes(value)
        out += struct.pack("!BH", tag, len(raw)) + raw
    return bytes(out)


def decode_syscall(payload: bytes) -> tuple[str, dict]:
    if not payload:
        raise ShortFrame("empty SYSCALL payload")
    op = SYSCALL_NAMES.get(payload[0])
    if op is None:
        raise SyscallError(f"unknown syscall id {payload[0]}")
    args, p = {}, 1
    while p < len(payload):
        if p + 3 > len(payload):
            raise ShortFrame("truncated argument TLV")
        tag, length = struct.unpack_from("!BH", payload, p)
        raw = payload[p + 3:p + 3 + length]
        if len(raw) != length:
            raise ShortFrame("truncated argument value")
        name, typ = ARG_TAGS[tag]
        args[name] = struct.unpack("!I", raw)[0] if typ is int else raw.decode() if typ is str else raw
        p += 3 + length
    return op, args


def _jsonable(value):
    if isinstance(value, (bytes, bytearray)):
        return {"hex": bytes(value).hex()}
    return value


def _from_jsonable(value):
    if isinstance(value, dict) and set(value) == {"hex"}:
        return bytes.fromhex(value["hex"])
    return value


# --- server side -----------------------------------------------------------

class AgentSession:
    """Serves one connection against its own target instance."""

    def __init__(self, factory: Callable[[dict], Target]):
        self.factory = factory
        self.target = factory({})

    def handle(self, opcode: int, payload: bytes) -> bytes:
        t = self.target
        if opcode == INIT:
            config = json.loads(payload) if payload else {}
            if config:
                t.close()
                self.target = t = self.factory(config)
            t.reset()
            return encode_frame(RESULT, b"{}")
        if opcode == END_TEST:
            t.reset()
            return encode_frame(RESULT, b"{}")
        if opcode == SYSCALL:
            try:
                op, args = decode_syscall(payload)
                value = t.inspect(args["key"]) if op == "inspect" else t.syscall(op, args)
                body = {"ok": True, "value": _jsonable(value)}
            except (SyscallError, KeyError, NotImplementedError) as exc:
                body = {"ok": False, "error": str(exc)}
            body["outbound"] = [f.hex() for f in t.drain_outbound()]
            return encode_frame(RESULT, json.dumps(body).encode())
        if opcode == PACKET:
            result = t.deliver(payload)
            outbound = [f.hex() for f in t.drain_outbound()]
            if result.fault is not None:
                body = result.fault.to_dict()
                body["outcome"] = result.outcome.value
                body["outbound"] = outbound
                return encode_frame(FAULT, json.dumps(body).encode())
            body = result.to_dict()
            body["outbound"] = outbound
            return encode_frame(RESULT, json.dumps(body).encode())
        raise UnknownOpcode(f"opcode 0x{opcode:02x} is not a request")


def serve_stream(factory: Callable[[dict], Target], rfile: BinaryIO, wfile: BinaryIO) -> None:
    session = AgentSession(factory)
    try:
        while True:
            frame = read_frame(rfile)
            if frame is None:
                return
            wfile.write(session.handle(*frame))
            wfile.flush()
    finally:
        session.target.close()


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        serve_stream(self.server.factory, self.rfile, self.wfile)


class AgentServer(socketserver.ThreadingTCPServer):
    """TCP listener; every connection gets a fresh target from ``factory``."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, factory: Callable[[dict], Target], host: str = "127.0.0.1", port: int = 0):
        self.factory = factory
        super().__init__((host, port), _Handler)

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]

    def start(self) -> "AgentServer":
        threading.Thread(target=self.serve_forever, daemon=True).start()
        return self


# --- client side -----------------------------------------------------------

class AgentTarget(Target):
    """Target whose stack runs behind the agent protocol."""

    def __init__(self, rfile: BinaryIO, wfile: BinaryIO, closer: Callable[[], None] | None = None,
                 init: dict | None = None):
        self.rfile = rfile
        self.wfile = wfile
        self._closer = closer
        self._outbound: list[bytes] = []
        self._call(INIT, json.dumps(init).encode() if init else b"")

    @classmethod
    def connect(cls, host: str, port: int, init: dict | None = None, timeout: float = 5.0) -> "AgentTarget":
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TargetUnreachable(f"{host}:{port}: {exc}") from None
        sock.settimeout(None)
        rfile, wfile = sock.makefile("rb"), sock.makefile("wb")

        def closer():
            rfile.close()
            wfile.close()
            sock.close()
        return cls(rfile, wfile, closer, init)

    @classmethod
    def spawn(cls, init: dict | None = None, python: str | None = None) -> "AgentTarget":
        """Start ``pvprobe agent --stdio`` as a child process."""
        proc = subprocess.Popen([python or sys.executable, "-m", "pvprobe.cli", "agent", "--stdio"],
                                stdin=subprocess.PIPE, stdout=subprocess.PIPE)

        def closer():
            proc.stdin.close()
            proc.wait(timeout=10)
            proc.stdout.close()
        return cls(proc.stdout, proc.stdin, closer, init)

    def _call(self, opcode: int, payload: bytes) -> tuple[int, dict]:
        try:
            self.wfile.write(encode_frame(opcode, payload))
            self.wfile.flush()
            frame = read_frame(self.rfile)
        except (OSError, ValueError) as exc:
            raise TargetUnreachable(f"agent connection failed: {exc}") from None
        if frame is None:
            raise TargetUnreachable("agent closed the connection")
        reply_op, body = frame
        data = json.loads(body) if body else {}
        self._outbound.extend(bytes.fromhex(h) for h in data.pop("outbound", ()))
        return reply_op, data

    def reset(self) -> None:
        self._outbound.clear()
        self._call(INIT, b"")

    def end_test(self) -> None:
        self._outbound.clear()
        self._call(END_TEST, b"")

    def syscall(self, op: str, args: dict | None = None) -> object:
        _, data = self._call(SYSCALL, encode_syscall(op, args))
        if not data.get("ok"):
            raise SyscallError(data.get("error", "syscall failed"))
        return _from_jsonable(data.get("value"))

    def inspect(self, key: str) -> str:
        _, data = self._call(SYSCALL, encode_syscall("inspect", {"key": key}))
        if not data.get("ok"):
            raise KeyError(data.get("error"))
        return data["value"]

    def deliver(self, frame: bytes) -> DeliveryResult:
        op, data = self._call(PACKET, frame)
        if op == FAULT:
            outcome = Outcome(data.pop("outcome", "fault"))
            return DeliveryResult(outcome, None, FaultReport.from_dict(data))
        return DeliveryResult.from_dict(data)

    def drain_outbound(self) -> list[bytes]:
        out, self._outbound = self._outbound, []
        return out

    def close(self) -> None:
        if self._closer is not None:
            closer, self._closer = self._closer, None
            closer()
