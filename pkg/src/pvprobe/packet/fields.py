"""Field and option descriptor tables for the supported protocol layers.

Every header is described as a flat list of bit fields laid out back to back
from the start of the layer.  Fields wider than 32 bits (MAC and IPv6
addresses) are split into words so that every field fits a plain integer
sweep.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable


class FieldKind(str, enum.Enum):
    PLAIN = "plain"
    LENGTH_LIKE = "length_like"
    OFFSET_LIKE = "offset_like"
    CHECKSUM = "checksum"
    RESERVED = "reserved"


@dataclass(frozen=True)
class FieldDescriptor:
    name: str
    layer: str
    bit_offset: int
    bit_width: int
    default: int = 0
    kind: FieldKind = FieldKind.PLAIN

    def __post_init__(self):
        if not 1 <= self.bit_width <= 32:
            raise ValueError(f"{self.key}: bit width {self.bit_width} outside 1..32")
        if not 0 <= self.default <= self.max_value:
            raise ValueError(f"{self.key}: default {self.default:#x} does not fit {self.bit_width} bits")

    @property
    def key(self) -> str:
        return f"{self.layer}.{self.name}"

    @property
    def max_value(self) -> int:
        return (1 << self.bit_width) - 1


@dataclass(frozen=True)
class OptionDescriptor:
    """An insertable option.

    For TCP and IPv4 the option is a TLV whose length byte counts the whole
    option.  For IPv6 the "option" is an extension header (Hop-by-Hop or
    Destination Options) carrying one TLV; its length byte is ``hdr_ext_len``.
    """

    name: str
    layer: str
    type_code: int
    length_field: bool
    value_width: int
    default_value: bytes = b""

    def __post_init__(self):
        if len(self.default_value) != self.value_width:
            raise ValueError(f"{self.layer}.{self.name}: default value must be {self.value_width} bytes")

    @property
    def key(self) -> str:
        return f"{self.layer}.{self.name}"

    @property
    def is_padding(self) -> bool:
        return not self.length_field

    def natural_length(self) -> int:
        """Value the length byte takes when nothing overrides it."""
        if not self.length_field:
            return 0
        if self.layer == "ipv6":
            return ext_header_size(self.value_width) // 8 - 1
        return 2 + self.value_width


def ext_header_size(value_width: int) -> int:
    # next-header + hdr_ext_len + one TLV, padded to 8 octets
    raw = 2 + 2 + value_width
    return (raw + 7) // 8 * 8


@dataclass(frozen=True)
class LayerSpec:
    name: str
    role: str  # link | network | transport | custom
    fields: tuple[FieldDescriptor, ...]
    max_size: int
    options: tuple[OptionDescriptor, ...] = ()
    option_align: int = 4
    _by_name: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        limit = 8 * self.max_size
        for f in self.fields:
            if f.layer != self.name:
                raise ValueError(f"field {f.key} registered under layer {self.name}")
            if f.bit_offset + f.bit_width > limit:
                raise ValueError(f"field {f.key} overruns the {self.max_size}-byte header")
        object.__setattr__(self, "_by_name", {f.name: f for f in self.fields})

    @property
    def base_size(self) -> int:
        bits = max((f.bit_offset + f.bit_width for f in self.fields), default=0)
        return (bits + 7) // 8

    def field(self, name: str) -> FieldDescriptor:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"layer {self.name} has no field {name!r}") from None

    def has_field(self, name: str) -> bool:
        return name in self._by_name

    def option(self, name: str) -> OptionDescriptor:
        for o in self.options:
            if o.name == name:
                return o
        raise KeyError(f"layer {self.name} has no option {name!r}")

    def option_by_code(self, code: int) -> OptionDescriptor | None:
        for o in self.options:
            if o.type_code == code:
                return o
        return None

    @property
    def checksum_field(self) -> FieldDescriptor | None:
        found = [f for f in self.fields if f.kind is FieldKind.CHECKSUM]
        return found[0] if found else None


def packed_fields(layer: str, spec: Iterable[tuple]) -> tuple[FieldDescriptor, ...]:
    """Lay out ``(name, width[, default[, kind]])`` tuples contiguously."""
    out = []
    offset = 0
    for entry in spec:
        name, width, *rest = entry
        default = rest[0] if rest else 0
        kind = rest[1] if len(rest) > 1 else FieldKind.PLAIN
        out.append(FieldDescriptor(name, layer, offset, width, default, kind))
        offset += width
    return tuple(out)


L = FieldKind.LENGTH_LIKE
O = FieldKind.OFFSET_LIKE
C = FieldKind.CHECKSUM
R = FieldKind.RESERVED

# Inbound direction: the peer (tester) sends to the target.
TARGET_MAC = 0x020000000001
PEER_MAC = 0x020000000002
TARGET_IPV4 = 0xC0A80001  # 192.168.0.1
PEER_IPV4 = 0xC0A80002
TARGET_IPV6 = (0xFE800000, 0, 0, 1)  # fe80::1
PEER_IPV6 = (0xFE800000, 0, 0, 2)
TARGET_PORT = 7777
PEER_PORT = 5555

ETHERNET = LayerSpec(
    "eth", "link",
    packed_fields("eth", [
        ("dst_hi", 32, TARGET_MAC >> 16), ("dst_lo", 16, TARGET_MAC & 0xFFFF),
        ("src_hi", 32, PEER_MAC >> 16), ("src_lo", 16, PEER_MAC & 0xFFFF),
        ("ethertype", 16, 0x0800),
    ]),
    max_size=14,
)

IPV4 = LayerSpec(
    "ipv4", "network",
    packed_fields("ipv4", [
        ("version", 4, 4), ("ihl", 4, 5, L), ("dscp", 6), ("ecn", 2),
        ("total_length", 16, 20, L), ("identification", 16),
        ("reserved_flag", 1, 0, R), ("df", 1, 1), ("mf", 1), ("frag_offset", 13, 0, O),
        ("ttl", 8, 64), ("protocol", 8, 6), ("checksum", 16, 0, C),
        ("src", 32, PEER_IPV4), ("dst", 32, TARGET_IPV4),
    ]),
    max_size=60,
    options=(
        OptionDescriptor("eol", "ipv4", 0x00, False, 0),
        OptionDescriptor("nop", "ipv4", 0x01, False, 0),
        OptionDescriptor("router_alert", "ipv4", 0x94, True, 2, b"\x00\x00"),
    ),
)

IPV6 = LayerSpec(
    "ipv6", "network",
    packed_fields("ipv6", [
        ("version", 4, 6), ("traffic_class", 8), ("flow_label", 20),
        ("payload_length", 16, 0, L), ("next_header", 8, 6), ("hop_limit", 8, 64),
        *[(f"src_{i}", 32, w) for i, w in enumerate(PEER_IPV6)],
        *[(f"dst_{i}", 32, w) for i, w in enumerate(TARGET_IPV6)],
    ]),
    max_size=1500,
    options=(
        OptionDescriptor("hbh", "ipv6", 0, True, 4, b"\x00" * 4),
        OptionDescriptor("dstopt", "ipv6", 60, True, 4, b"\x00" * 4),
    ),
    option_align=8,
)

TCP = LayerSpec(
    "tcp", "transport",
    packed_fields("tcp", [
        ("src_port", 16, PEER_PORT), ("dst_port", 16, TARGET_PORT),
        ("seq", 32), ("ack", 32),
        ("data_offset", 4, 5, L), ("reserved", 4, 0, R), ("flags", 8, 0x10),
        ("window", 16, 8192), ("checksum", 16, 0, C), ("urgent_pointer", 16, 0, O),
    ]),
    max_size=60,
    options=(
        OptionDescriptor("eol", "tcp", 0, False, 0),
        OptionDescriptor("nop", "tcp", 1, False, 0),
        OptionDescriptor("mss", "tcp", 2, True, 2, b"\x05\xb4"),
        OptionDescriptor("wscale", "tcp", 3, True, 1, b"\x07"),
        OptionDescriptor("sack_perm", "tcp", 4, True, 0),
        OptionDescriptor("timestamps", "tcp", 8, True, 8, b"\x00" * 8),
    ),
)

UDP = LayerSpec(
    "udp", "transport",
    packed_fields("udp", [
        ("src_port", 16, PEER_PORT), ("dst_port", 16, TARGET_PORT),
        ("length", 16, 8, L), ("checksum", 16, 0, C),
    ]),
    max_size=8,
)

TCP_FLAGS = {"FIN": 0x01, "SYN": 0x02, "RST": 0x04, "PSH": 0x08, "ACK": 0x10, "URG": 0x20, "ECE": 0x40, "CWR": 0x80}

IP_PROTO = {"tcp": 6, "udp": 17}
ETHERTYPE = {"ipv4": 0x0800, "ipv6": 0x86DD}

_REGISTRY: dict[str, LayerSpec] = {}


def register_layer(spec: LayerSpec) -> LayerSpec:
    """Add a layer to the registry.  Custom layers are encoded verbatim."""
    _REGISTRY[spec.name] = spec
    return spec


def layer_spec(name: str) -> LayerSpec:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown layer {name!r}") from None


for _spec in (ETHERNET, IPV4, IPV6, TCP, UDP):
    register_layer(_spec)


def resolve_field(key: str) -> FieldDescriptor:
    """Look up ``"layer.field"``."""
    layer, _, name = key.partition(".")
    return layer_spec(layer).field(name)
