"""Deterministic IPv4/IPv6/TCP/UDP stack over a guarded receive buffer.

Every byte of an inbound frame is read through the ``GuardedBuffer`` with the
name of the parsing function as the site label, so a missing bounds check
shows up as a fault report instead of a stray read.  Each seeded bug removes
exactly one check; everything else is a correct, if minimal, stack.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from ..harness.guarded import (
    GuardedBuffer, TargetFault, Watchdog, checked_div, checked_sub,
)
from ..harness.target import DeliveryResult, SyscallError, Target
from ..packet import PacketTemplate, encode, internet_checksum
from ..packet.checksum import pseudo_header
from ..packet.fields import (
    PEER_IPV4, PEER_IPV6, PEER_MAC, TARGET_IPV4, TARGET_IPV6, TARGET_MAC,
)
from ..packet.template import OptionInstance
from .bugs import BugSet

RX_CAPACITY = 1514
RX_WINDOW = 8192
DEFAULT_MSS = 536
MAX_STEPS = 2000

FIN, SYN, RST, PSH, ACK = 0x01, 0x02, 0x04, 0x08, 0x10

SYNCHRONIZED = ("SYN-RCVD", "ESTABLISHED", "FIN-WAIT-1", "FIN-WAIT-2", "CLOSE-WAIT", "LAST-ACK")


def _addr_bytes(words) -> bytes:
    return b"".join(struct.pack("!I", w) for w in words)


# Static neighbor entries stand in for ARP / neighbor discovery.
NEIGHBORS = {
    "ipv4": {"local": struct.pack("!I", TARGET_IPV4), "peer": struct.pack("!I", PEER_IPV4)},
    "ipv6": {"local": _addr_bytes(TARGET_IPV6), "peer": _addr_bytes(PEER_IPV6)},
}
LOCAL_MAC = TARGET_MAC.to_bytes(6, "big")
BROADCAST_MAC = b"\xff" * 6


def initial_sequence(port: int) -> int:
    """Fixed ISN per local port so expected packets are reproducible."""
    return (0x1000_0000 + port * 0x1_0000) & 0xFFFF_FFFF


def seq_lt(a: int, b: int) -> bool:
    return ((a - b) & 0xFFFF_FFFF) >= 0x8000_0000


def seq_le(a: int, b: int) -> bool:
    return a == b or seq_lt(a, b)


@dataclass
class Socket:
    fd: int
    proto: str
    family: str = "ipv4"
    local_port: int = 0
    remote_port: int = 0
    state: str = "CLOSED"
    iss: int = 0
    snd_una: int = 0
    snd_nxt: int = 0
    rcv_nxt: int = 0
    mss: int = DEFAULT_MSS
    parent: int | None = None
    accepted: bool = False
    rx_data: bytearray = field(default_factory=bytearray)

    def summary(self) -> dict:
        return {"fd": self.fd, "proto": self.proto, "local_port": self.local_port,
                "state": self.state, "isn": self.iss, "rcv_nxt": self.rcv_nxt, "snd_nxt": self.snd_nxt}


class Drop(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass
class _Net:
    family: str
    src: bytes
    dst: bytes


@dataclass
class _Segment:
    sport: int
    dport: int
    seq: int
    ack: int
    flags: int
    window: int
    payload: bytes
    mss: int | None


class RefStack(Target):
    def __init__(self, bugs: BugSet | list | str = (), deadline: float = 2.0, max_steps: int = MAX_STEPS):
        self.bugs = bugs if isinstance(bugs, BugSet) else BugSet.parse(bugs)
        self.watchdog = Watchdog(deadline, max_steps)
        self.rx = GuardedBuffer(RX_CAPACITY, self.watchdog)
        self.reset()

    # --- Target interface -------------------------------------------------

    def reset(self) -> None:
        self.sockets: dict[int, Socket] = {}
        self.next_fd = 3
        self.outbound: list[bytes] = []
        self.rcv_segments = RX_WINDOW // DEFAULT_MSS
        self.rx.load(b"")

    def drain_outbound(self) -> list[bytes]:
        out, self.outbound = self.outbound, []
        return out

    def deliver(self, frame: bytes) -> DeliveryResult:
        return self.process_frame(frame)

    def process_frame(self, frame: bytes) -> DeliveryResult:
        self.rx.load(frame)
        self.watchdog.arm()
        try:
            self.eth_input(len(frame))
        except Drop as d:
            return DeliveryResult.dropped(d.reason)
        except TargetFault as f:
            return DeliveryResult.faulted(f.report)
        return DeliveryResult.processed()

    def inspect(self, key: str) -> str:
        name, _, arg = key.partition(":")
        if name == "tcp_state":
            k, _, v = arg.partition("=")
            if k != "port" or not v.isdigit():
                raise KeyError(f"bad inspect argument {arg!r}")
            port = int(v)
            listener = None
            for s in self.sockets.values():
                if s.proto != "tcp" or s.local_port != port:
                    continue
                if s.state == "LISTEN":
                    listener = s
                elif s.state != "CLOSED":
                    return s.state
            return listener.state if listener else "CLOSED"
        if name == "sockets":
            return repr([s.summary() for s in self.sockets.values()])
        raise KeyError(f"unknown inspect key {key!r}")

    def syscall(self, op: str, args: dict | None = None) -> object:
        args = dict(args or {})
        handler = getattr(self, f"_sys_{op}", None)
        if handler is None:
            raise SyscallError(f"unsupported syscall {op!r}")
        return handler(**args)

    # --- socket calls -----------------------------------------------------

    def _sock(self, fd) -> Socket:
        try:
            return self.sockets[int(fd)]
        except (KeyError, ValueError, TypeError):
            raise SyscallError(f"EBADF: {fd}") from None

    def _new_fd(self) -> int:
        fd = self.next_fd
        self.next_fd += 1
        return fd

    def _sys_socket(self, proto: str = "tcp", family: str = "ipv4") -> int:
        if proto not in ("tcp", "udp") or family not in NEIGHBORS:
            raise SyscallError(f"EPROTONOSUPPORT: {family}/{proto}")
        fd = self._new_fd()
        self.sockets[fd] = Socket(fd, proto, family)
        return fd

    def _sys_bind(self, fd, port) -> int:
        s = self._sock(fd)
        port = int(port)
        for other in self.sockets.values():
            if other is not s and other.proto == s.proto and other.local_port == port and other.parent is None:
                raise SyscallError(f"EADDRINUSE: {port}")
        s.local_port = port
        return 0

    def _sys_listen(self, fd, backlog=1) -> int:
        s = self._sock(fd)
        if s.proto != "tcp" or not s.local_port:
            raise SyscallError("EINVAL: listen")
        s.state = "LISTEN"
        return 0

    def _sys_accept(self, fd) -> int:
        s = self._sock(fd)
        if s.state != "LISTEN":
            raise SyscallError("EINVAL: accept")
        for child in self.sockets.values():
            if child.parent == s.fd and not child.accepted and child.state in ("ESTABLISHED", "CLOSE-WAIT"):
                child.accepted = True
                return child.fd
        raise SyscallError("EAGAIN: accept")

    def _sys_connect(self, fd, port) -> int:
        s = self._sock(fd)
        if s.proto != "tcp" or s.state != "CLOSED":
            raise SyscallError("EISCONN")
        if not s.local_port:
            s.local_port = 49152 + s.fd
        s.remote_port = int(port)
        s.iss = initial_sequence(s.local_port)
        s.snd_una, s.snd_nxt = s.iss, s.iss + 1
        s.state = "SYN-SENT"
        self._emit(s, s.iss, 0, SYN, mss=True)
        return 0

    def _sys_send(self, fd, data=b"") -> int:
        s = self._sock(fd)
        data = data.encode() if isinstance(data, str) else bytes(data)
        if s.state not in ("ESTABLISHED", "CLOSE-WAIT"):
            raise SyscallError(f"ENOTCONN: {s.state}")
        self._emit(s, s.snd_nxt, s.rcv_nxt, PSH | ACK, payload=data)
        s.snd_nxt = (s.snd_nxt + len(data)) & 0xFFFF_FFFF
        return len(data)

    def _sys_recv(self, fd, size=65535) -> bytes:
        s = self._sock(fd)
        out = bytes(s.rx_data[:int(size)])
        del s.rx_data[:int(size)]
        return out

    def _sys_close(self, fd) -> int:
        s = self._sock(fd)
        if s.proto == "tcp" and s.state in ("SYN-RCVD", "ESTABLISHED"):
            self._emit(s, s.snd_nxt, s.rcv_nxt, FIN | ACK)
            s.snd_nxt = (s.snd_nxt + 1) & 0xFFFF_FFFF
            s.state = "FIN-WAIT-1"
            s.accepted = True
        elif s.proto == "tcp" and s.state == "CLOSE-WAIT":
            self._emit(s, s.snd_nxt, s.rcv_nxt, FIN | ACK)
            s.snd_nxt = (s.snd_nxt + 1) & 0xFFFF_FFFF
            s.state = "LAST-ACK"
        else:
            del self.sockets[s.fd]
        return 0

    # --- output -----------------------------------------------------------

    def _emit(self, s: Socket, seq: int, ack: int, flags: int, payload: bytes = b"", mss: bool = False):
        net = s.family
        values = {
            "eth.dst_hi": PEER_MAC >> 16, "eth.dst_lo": PEER_MAC & 0xFFFF,
            "eth.src_hi": TARGET_MAC >> 16, "eth.src_lo": TARGET_MAC & 0xFFFF,
            "tcp.src_port": s.local_port, "tcp.dst_port": s.remote_port,
            "tcp.seq": seq & 0xFFFF_FFFF, "tcp.ack": ack & 0xFFFF_FFFF,
            "tcp.flags": flags, "tcp.window": RX_WINDOW,
        }
        values.update(self._net_values(net))
        options = {"tcp": (OptionInstance("mss", struct.pack("!H", 1460)),)} if mss else {}
        template = PacketTemplate(("eth", net, "tcp"), values, options, payload)
        self.outbound.append(encode(template).data)

    def _emit_rst(self, net: _Net, seg: _Segment) -> None:
        if seg.flags & RST:
            return
        if seg.flags & ACK:
            seq, ack, flags = seg.ack, 0, RST
        else:
            seq = 0
            ack = seg.seq + len(seg.payload) + (1 if seg.flags & SYN else 0) + (1 if seg.flags & FIN else 0)
            flags = RST | ACK
        tmp = Socket(-1, "tcp", net.family, seg.dport, seg.sport)
        self._emit(tmp, seq, ack, flags)

    @staticmethod
    def _net_values(net: str) -> dict:
        if net == "ipv4":
            return {"ipv4.src": TARGET_IPV4, "ipv4.dst": PEER_IPV4}
        out = {}
        for i in range(4):
            out[f"ipv6.src_{i}"] = TARGET_IPV6[i]
            out[f"ipv6.dst_{i}"] = PEER_IPV6[i]
        return out

    # --- input path -------------------------------------------------------

    def eth_input(self, n: int) -> None:
        rx = self.rx
        self.watchdog.enter("eth_input")
        if n < 14:
            raise Drop("runt frame")
        dst = rx.read(0, 6, "eth_input")
        if dst != LOCAL_MAC and dst != BROADCAST_MAC:
            raise Drop("not for us")
        ethertype = rx.read_u16(12, "eth_input")
        if ethertype == 0x0800:
            self.ipv4_input(14, n)
        elif ethertype == 0x86DD:
            self.ipv6_input(14, n)
        else:
            raise Drop("unknown ethertype")

    def ipv4_input(self, off: int, n: int) -> None:
        site = "ipv4_input"
        rx = self.rx
        self.watchdog.enter(site)
        avail = n - off
        if avail < 20:
            raise Drop("ipv4 header truncated")
        vihl = rx.read_u8(off, site)
        if vihl >> 4 != 4:
            raise Drop("ipv4 version")
        hlen = (vihl & 0x0F) * 4
        if hlen < 20 or hlen > avail:
            raise Drop("ipv4 header length")
        header = rx.read(off, hlen, site)
        if internet_checksum(header) != 0:
            raise Drop("checksum")
        total = rx.read_u16(off + 2, site)
        if "B5" not in self.bugs and total < hlen:
            raise Drop("ipv4 total length below header length")
        if total > avail:
            raise Drop("ipv4 total length beyond frame")
        payload_len = checked_sub(total, hlen, site)
        if header[6] & 0x20 or (struct.unpack_from("!H", header, 6)[0] & 0x1FFF):
            raise Drop("fragment")
        if header[16:20] != NEIGHBORS["ipv4"]["local"]:
            raise Drop("not our address")
        self.ipv4_options(off + 20, off + hlen)
        net = _Net("ipv4", header[12:16], header[16:20])
        self.transport_input(header[9], off + hlen, payload_len, net)

    def ipv4_options(self, p: int, end: int) -> None:
        site = "ipv4_options"
        rx = self.rx
        self.watchdog.enter(site)
        while p < end:
            kind = rx.read_u8(p, site)
            if kind == 0:
                break
            if kind == 1:
                p += 1
                continue
            if p + 2 > end:
                raise Drop("ipv4 option truncated")
            length = rx.read_u8(p + 1, site)
            if length < 2 or p + length > end:
                raise Drop("ipv4 option length")
            p += length

    def ipv6_input(self, off: int, n: int) -> None:
        site = "ipv6_input"
        rx = self.rx
        self.watchdog.enter(site)
        if n - off < 40:
            raise Drop("ipv6 header truncated")
        header = rx.read(off, 40, site)
        if header[0] >> 4 != 6:
            raise Drop("ipv6 version")
        plen = struct.unpack_from("!H", header, 4)[0]
        if plen > n - off - 40:
            raise Drop("ipv6 payload length beyond frame")
        if header[24:40] != NEIGHBORS["ipv6"]["local"]:
            raise Drop("not our address")
        end = off + 40 + plen
        nh = header[6]
        p = off + 40
        first = True
        while nh in (0, 60):
            if nh == 0 and not first:
                raise Drop("hop-by-hop header out of place")
            p, nh = self.ipv6_ext_header(p, end)
            first = False
        net = _Net("ipv6", header[8:24], header[24:40])
        self.transport_input(nh, p, end - p, net)

    def ipv6_ext_header(self, p: int, end: int) -> tuple[int, int]:
        site = "ipv6_ext_header"
        rx = self.rx
        self.watchdog.enter(site)
        if p + 8 > end:
            raise Drop("extension header truncated")
        nh = rx.read_u8(p, site)
        size = (rx.read_u8(p + 1, site) + 1) * 8
        if "B6" not in self.bugs and p + size > end:
            raise Drop("extension header length beyond payload")
        q, ext_end = p + 2, p + size
        while q < ext_end:
            kind = rx.read_u8(q, site)
            if kind == 0:  # Pad1
                q += 1
                continue
            length = rx.read_u8(q + 1, site)
            if q + 2 + length > ext_end:
                raise Drop("extension option overruns header")
            rx.read(q + 2, length, site)  # unrecognized options are skipped
            q += 2 + length
        return ext_end, nh

    def transport_input(self, proto: int, off: int, length: int, net: _Net) -> None:
        if proto == 6:
            self.tcp_input(off, length, net)
        elif proto == 17:
            self.udp_input(off, length, net)
        else:
            raise Drop("unknown protocol")

    def _verify_transport(self, off: int, length: int, net: _Net, proto: int, site: str) -> None:
        segment = self.rx.read(off, length, site)
        if internet_checksum(pseudo_header(net.family, net.src, net.dst, proto, length) + segment) != 0:
            raise Drop("checksum")

    # --- UDP --------------------------------------------------------------

    def udp_input(self, off: int, seg_len: int, net: _Net) -> None:
        site = "udp_input"
        rx = self.rx
        self.watchdog.enter(site)
        if seg_len < 8:
            raise Drop("udp header truncated")
        sport, dport, ulen, csum = struct.unpack("!HHHH", rx.read(off, 8, site))
        if ulen < 8 or ulen > seg_len:
            raise Drop("udp length")
        if csum == 0:
            if net.family == "ipv6":
                raise Drop("checksum")
        else:
            self._verify_transport(off, ulen, net, 17, site)
        for s in self.sockets.values():
            if s.proto == "udp" and s.local_port == dport and s.family == net.family:
                s.rx_data += rx.read(off + 8, ulen - 8, site)
                return
        raise Drop("port unreachable")

    # --- TCP --------------------------------------------------------------

    def _demux(self, family: str, sport: int, dport: int) -> Socket | None:
        listener = None
        for s in self.sockets.values():
            if s.proto != "tcp" or s.family != family or s.local_port != dport:
                continue
            if s.state == "LISTEN":
                listener = s
            elif s.state != "CLOSED" and s.remote_port == sport:
                return s
        return listener

    def tcp_input(self, off: int, seg_len: int, net: _Net) -> None:
        site = "tcp_input"
        rx = self.rx
        self.watchdog.enter(site)
        if seg_len < 4:
            raise Drop("tcp segment too short for ports")
        sport = rx.read_u16(off, site)
        dport = rx.read_u16(off + 2, site)
        sock = self._demux(net.family, sport, dport)
        if sock is not None and sock.state == "ESTABLISHED":
            self.tcp_fast_path(off, seg_len)
            self.watchdog.enter(site)
        if "B4" not in self.bugs and seg_len < 20:
            raise Drop("tcp header truncated")
        header = rx.read(off, 20, site)
        self._verify_transport(off, seg_len, net, 6, site)
        seq, ack, doff_byte, flags, window = struct.unpack_from("!IIBBH", header, 4)
        hlen = (doff_byte >> 4) * 4
        if hlen < 20:
            raise Drop("tcp data offset below header size")
        if "B1" not in self.bugs and hlen > seg_len:
            raise Drop("tcp data offset beyond segment")
        mss = self.tcp_parse_options(off + 20, off + hlen, bool(flags & SYN))
        data_len = max(seg_len - hlen, 0)
        payload = rx.read(off + hlen, data_len, site) if data_len else b""
        seg = _Segment(sport, dport, seq, ack, flags, window, payload, mss)
        self.tcp_state_input(sock, seg, net)

    def tcp_fast_path(self, off: int, seg_len: int) -> None:
        """Header prediction for ESTABLISHED: peek at the flags byte."""
        site = "tcp_fast_path"
        self.watchdog.enter(site)
        if "B8" not in self.bugs and seg_len < 20:
            return
        self.rx.read_u8(off + 13, site)

    def tcp_parse_options(self, start: int, end: int, syn: bool) -> int | None:
        site = "tcp_parse_options"
        rx = self.rx
        self.watchdog.enter(site)
        mss = None
        p = start
        first = True
        b3 = "B3" in self.bugs
        b3_first_checked = self.bugs.b3_variant == "two-option"
        b7 = "B7" in self.bugs
        while p < end:
            kind = rx.read_u8(p, site)
            if kind == 0:
                break
            if kind == 1:
                p += 1
                continue
            length = rx.read_u8(p + 1, site)
            if length < 2:
                if length == 0 and b7:
                    continue
                raise Drop("tcp option length")
            check = not b3 or (b3_first_checked and first)
            if check and p + length > end:
                raise Drop("tcp option overruns options region")
            value = self.tcp_option_value(p + 2, length - 2)
            self.watchdog.enter(site)
            if kind == 2 and syn:
                if length != 4:
                    raise Drop("tcp mss option length")
                mss = self.tcp_option_mss(value)
                self.watchdog.enter(site)
            p += length
            first = False
        return mss

    def tcp_option_value(self, p: int, length: int) -> bytes:
        site = "tcp_option_value"
        self.watchdog.enter(site)
        return self.rx.read(p, length, site)

    def tcp_option_mss(self, value: bytes) -> int:
        site = "tcp_option_mss"
        self.watchdog.enter(site)
        mss = struct.unpack("!H", value)[0]
        if "B2" not in self.bugs and mss == 0:
            raise Drop("tcp mss zero")
        self.rcv_segments = checked_div(RX_WINDOW, mss, site)  # window size in segments
        return min(mss, 1460)

    def tcp_state_input(self, sock: Socket | None, seg: _Segment, net: _Net) -> None:
        self.watchdog.enter("tcp_state_input")
        if sock is None:
            self._emit_rst(net, seg)
            raise Drop("no socket")
        if sock.state == "LISTEN":
            self._tcp_listen(sock, seg, net)
        elif sock.state == "SYN-SENT":
            self._tcp_syn_sent(sock, seg, net)
        else:
            self._tcp_synchronized(sock, seg, net)

    def _tcp_listen(self, lsock: Socket, seg: _Segment, net: _Net) -> None:
        if seg.flags & RST:
            raise Drop("rst to listener")
        if seg.flags & ACK:
            self._emit_rst(net, seg)
            raise Drop("ack to listener")
        if not seg.flags & SYN:
            raise Drop("no syn")
        child = Socket(self._new_fd(), "tcp", net.family, lsock.local_port, seg.sport, "SYN-RCVD",
                       parent=lsock.fd)
        child.iss = initial_sequence(child.local_port)
        child.snd_una, child.snd_nxt = child.iss, (child.iss + 1) & 0xFFFF_FFFF
        child.rcv_nxt = (seg.seq + 1) & 0xFFFF_FFFF
        if seg.mss:
            child.mss = seg.mss
        self.sockets[child.fd] = child
        self._emit(child, child.iss, child.rcv_nxt, SYN | ACK, mss=True)

    def _tcp_syn_sent(self, s: Socket, seg: _Segment, net: _Net) -> None:
        if seg.flags & ACK and seg.ack != s.snd_nxt:
            self._emit_rst(net, seg)
            raise Drop("unacceptable ack in SYN-SENT")
        if seg.flags & RST:
            if seg.flags & ACK:
                self._close(s)
                return
            raise Drop("rst without ack in SYN-SENT")
        if not seg.flags & SYN:
            raise Drop("no syn in SYN-SENT")
        s.rcv_nxt = (seg.seq + 1) & 0xFFFF_FFFF
        if seg.mss:
            s.mss = seg.mss
        if seg.flags & ACK:
            s.snd_una = seg.ack
            s.state = "ESTABLISHED"
            self._emit(s, s.snd_nxt, s.rcv_nxt, ACK)
        else:
            s.state = "SYN-RCVD"
            self._emit(s, s.iss, s.rcv_nxt, SYN | ACK, mss=True)

    def _acceptable(self, s: Socket, seg: _Segment, seg_space: int) -> bool:
        lo, hi = s.rcv_nxt, (s.rcv_nxt + RX_WINDOW) & 0xFFFF_FFFF
        if seg_space == 0:
            return seq_le(lo, seg.seq) and seq_lt(seg.seq, hi)
        last = (seg.seq + seg_space - 1) & 0xFFFF_FFFF
        return (seq_le(lo, seg.seq) and seq_lt(seg.seq, hi)) or (seq_le(lo, last) and seq_lt(last, hi))

    def _close(self, s: Socket) -> None:
        self.sockets.pop(s.fd, None)

    def _tcp_synchronized(self, s: Socket, seg: _Segment, net: _Net) -> None:
        seg_space = len(seg.payload) + (1 if seg.flags & SYN else 0) + (1 if seg.flags & FIN else 0)
        if not self._acceptable(s, seg, seg_space):
            if not seg.flags & RST:
                self._emit(s, s.snd_nxt, s.rcv_nxt, ACK)
            raise Drop("sequence outside window")
        if seg.flags & RST:
            self._close(s)
            return
        if seg.flags & SYN:
            self._emit(s, s.snd_nxt, s.rcv_nxt, ACK)  # challenge ACK
            raise Drop("syn in synchronized state")
        if not seg.flags & ACK:
            raise Drop("no ack")
        if s.state == "SYN-RCVD":
            if seq_lt(s.snd_una, seg.ack) and seq_le(seg.ack, s.snd_nxt):
                s.snd_una = seg.ack
                s.state = "ESTABLISHED"
            else:
                self._emit_rst(net, seg)
                raise Drop("unacceptable ack in SYN-RCVD")
        else:
            if seq_lt(s.snd_nxt, seg.ack):
                self._emit(s, s.snd_nxt, s.rcv_nxt, ACK)
                raise Drop("ack for unsent data")
            if seq_lt(s.snd_una, seg.ack):
                s.snd_una = seg.ack
            fin_acked = s.snd_una == s.snd_nxt
            if s.state == "FIN-WAIT-1" and fin_acked:
                s.state = "FIN-WAIT-2"
            elif s.state == "LAST-ACK" and fin_acked:
                self._close(s)
                return
        if seg.payload and s.state in ("ESTABLISHED", "FIN-WAIT-1", "FIN-WAIT-2"):
            if seg.seq == s.rcv_nxt:
                s.rx_data += seg.payload
                s.rcv_nxt = (s.rcv_nxt + len(seg.payload)) & 0xFFFF_FFFF
            self._emit(s, s.snd_nxt, s.rcv_nxt, ACK)
        if seg.flags & FIN and (seg.seq + len(seg.payload)) & 0xFFFF_FFFF == s.rcv_nxt:
            if s.state in ("SYN-RCVD", "ESTABLISHED", "FIN-WAIT-1", "FIN-WAIT-2"):
                s.rcv_nxt = (s.rcv_nxt + 1) & 0xFFFF_FFFF
                self._emit(s, s.snd_nxt, s.rcv_nxt, ACK)
                if s.state in ("SYN-RCVD", "ESTABLISHED"):
                    s.state = "CLOSE-WAIT"
                else:
                    # TIME-WAIT and CLOSING are not modelled; the connection ends here.
                    self._close(s)
