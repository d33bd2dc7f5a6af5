"""Byte-exact encoding and decoding of layered packets."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

from .checksum import ipv4_header_checksum, transport_checksum
from .fields import (
    ETHERTYPE, IP_PROTO, FieldDescriptor, LayerSpec, OptionDescriptor,
    ext_header_size, layer_spec,
)
from .template import LayerMismatch, OptionInstance, PacketTemplate, ValueOverflow

IPV6_EXT_TLV = 0x1E  # experimental option type, "skip if unrecognized"
TCP_OPTION_SPACE = 40
IPV4_OPTION_SPACE = 40


class UnrepresentableLength(ValueError):
    pass


class OptionSpaceExhausted(ValueError):
    pass


class FieldAbsent(KeyError):
    pass


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class OptionSpan:
    name: str
    start: int
    length: int
    length_offset: int | None  # absolute offset of the length byte, if any


@dataclass(frozen=True)
class LayerLayout:
    name: str
    start: int
    header_len: int
    fixed_len: int
    options: tuple[OptionSpan, ...] = ()

    @property
    def header_end(self) -> int:
        return self.start + self.header_len

    def spans(self) -> list[tuple[str, int, int]]:
        """``(label, bit_start, bit_len)`` tiling the header, relative to the layer."""
        spec = layer_spec(self.name)
        out = [(f.name, f.bit_offset, f.bit_width) for f in spec.fields]
        cursor = self.fixed_len
        for opt in self.options:
            if opt.start - self.start > cursor:
                out.append(("padding", cursor * 8, (opt.start - self.start - cursor) * 8))
            out.append((opt.name, (opt.start - self.start) * 8, opt.length * 8))
            cursor = opt.start - self.start + opt.length
        if cursor < self.header_len:
            out.append(("padding", cursor * 8, (self.header_len - cursor) * 8))
        return out


@dataclass(frozen=True)
class Packet:
    data: bytes
    layout: tuple[LayerLayout, ...]

    def __len__(self) -> int:
        return len(self.data)

    def layer(self, name: str) -> LayerLayout:
        for lay in self.layout:
            if lay.name == name:
                return lay
        raise FieldAbsent(f"packet has no {name} layer")

    def has_layer(self, name: str) -> bool:
        return any(lay.name == name for lay in self.layout)

    @property
    def layers(self) -> tuple[str, ...]:
        return tuple(lay.name for lay in self.layout)

    def hex(self) -> str:
        return self.data.hex()


# --- bit helpers ---------------------------------------------------------

def pack_fields(spec: LayerSpec, values: dict[str, int]) -> bytes:
    size = spec.base_size
    total_bits = size * 8
    acc = 0
    for f in spec.fields:
        acc |= (values[f.name] & f.max_value) << (total_bits - f.bit_offset - f.bit_width)
    return acc.to_bytes(size, "big")


def read_bits(data: bytes, bit_start: int, width: int) -> int:
    first = bit_start // 8
    last = (bit_start + width - 1) // 8
    chunk = int.from_bytes(data[first:last + 1], "big")
    shift = (last + 1) * 8 - (bit_start + width)
    return (chunk >> shift) & ((1 << width) - 1)


def write_bits(data: bytearray, bit_start: int, width: int, value: int) -> None:
    first = bit_start // 8
    last = (bit_start + width - 1) // 8
    nbytes = last - first + 1
    chunk = int.from_bytes(data[first:last + 1], "big")
    shift = nbytes * 8 - ((bit_start - first * 8) + width)
    mask = ((1 << width) - 1) << shift
    chunk = (chunk & ~mask) | ((value << shift) & mask)
    data[first:last + 1] = chunk.to_bytes(nbytes, "big")


# --- options -------------------------------------------------------------

def _tlv_bytes(desc: OptionDescriptor, inst: OptionInstance) -> bytes:
    if desc.is_padding:
        return bytes([desc.type_code])
    length = inst.length if inst.length is not None else 2 + len(inst.value)
    return bytes([desc.type_code, length & 0xFF]) + inst.value


def _pad_tlv_region(region: bytes, align: int) -> bytes:
    short = -len(region) % align
    if short:
        region += b"\x01" * (short - 1) + b"\x00"  # NOPs then EOL
    return region


def _ext_header(desc: OptionDescriptor, inst: OptionInstance, next_header: int) -> bytes:
    body = bytes([IPV6_EXT_TLV, len(inst.value)]) + inst.value
    size = ext_header_size(len(inst.value))
    pad = size - 2 - len(body)
    if pad == 1:
        body += b"\x00"
    elif pad >= 2:
        body += bytes([1, pad - 2]) + b"\x00" * (pad - 2)
    hel = inst.length if inst.length is not None else size // 8 - 1
    return bytes([next_header, hel & 0xFF]) + body


def _option_region(spec: LayerSpec, opts: tuple[OptionInstance, ...], base: int,
                   inner_proto: int | None) -> tuple[bytes, list[OptionSpan], int | None]:
    """Encode the option area of one layer.

    Returns the bytes, the spans (absolute from the layer start, fixed later),
    and for IPv6 the next-header value the fixed header must carry.
    """
    spans = []
    if spec.name == "ipv6":
        chunks = []
        codes = [spec.option(o.name).type_code for o in opts]
        offset = base
        for i, inst in enumerate(opts):
            desc = spec.option(inst.name)
            nxt = codes[i + 1] if i + 1 < len(opts) else (inner_proto if inner_proto is not None else 59)
            chunk = _ext_header(desc, inst, nxt)
            spans.append(OptionSpan(inst.name, offset, len(chunk), offset + 1))
            chunks.append(chunk)
            offset += len(chunk)
        first = codes[0] if codes else None
        return b"".join(chunks), spans, first
    region = b""
    for inst in opts:
        desc = spec.option(inst.name)
        chunk = _tlv_bytes(desc, inst)
        spans.append(OptionSpan(inst.name, base + len(region), len(chunk),
                                None if desc.is_padding else base + len(region) + 1))
        region += chunk
    limit = TCP_OPTION_SPACE if spec.name == "tcp" else IPV4_OPTION_SPACE
    region = _pad_tlv_region(region, spec.option_align)
    if len(region) > limit:
        raise OptionSpaceExhausted(f"{spec.name} options need {len(region)} bytes, limit {limit}")
    return region, spans, None


# --- encode --------------------------------------------------------------

def _values(spec: LayerSpec, template: PacketTemplate) -> dict[str, int]:
    out = {}
    prefix = spec.name + "."
    for f in spec.fields:
        v = template.field_values.get(prefix + f.name)
        out[f.name] = f.default if v is None else v
    return out


def encode(template: PacketTemplate) -> Packet:
    """Build the wire bytes for ``template``.

    Length, protocol-selector and checksum fields are derived from the actual
    layout unless the template sets them explicitly; explicit values are
    written verbatim even when inconsistent.
    """
    layers = template.layers
    specs = [layer_spec(n) for n in layers]
    explicit = template.field_values
    if specs[0].role == "custom":
        return _encode_custom(template, specs)

    transport = template.transport
    net = template.network
    inner_proto = IP_PROTO.get(transport) if transport else None

    # Headers are assembled inner to outer so lengths are known.
    payload = template.payload
    headers: dict[str, bytearray] = {}
    spans: dict[str, list[OptionSpan]] = {}
    fixed: dict[str, int] = {}
    values_by_layer: dict[str, dict[str, int]] = {}
    inner_len = len(payload)
    for spec in reversed(specs):
        vals = _values(spec, template)
        name = spec.name
        opts = template.options.get(name, ())
        region, ospans, first_ext = _option_region(spec, opts, spec.base_size, inner_proto)
        hdr_len = spec.base_size + len(region)

        def auto(field_name: str, value: int) -> None:
            if f"{name}.{field_name}" in explicit:
                return
            desc = spec.field(field_name)
            if value > desc.max_value:
                raise UnrepresentableLength(f"{name}.{field_name}={value} exceeds {desc.bit_width} bits")
            vals[field_name] = value

        if name == "tcp":
            if hdr_len % 4:
                raise UnrepresentableLength("TCP header not a multiple of 4 bytes")
            auto("data_offset", hdr_len // 4)
            auto("checksum", 0)
        elif name == "udp":
            auto("length", hdr_len + inner_len)
            auto("checksum", 0)
        elif name == "ipv4":
            auto("ihl", hdr_len // 4)
            auto("total_length", hdr_len + inner_len)
            if inner_proto is not None:
                auto("protocol", inner_proto)
            auto("checksum", 0)
        elif name == "ipv6":
            auto("payload_length", len(region) + inner_len)
            nh = first_ext if first_ext is not None else (inner_proto if inner_proto is not None else 59)
            auto("next_header", nh)
        elif name == "eth":
            auto("ethertype", ETHERTYPE[net])
        headers[name] = bytearray(pack_fields(spec, vals) + region)
        spans[name] = ospans
        fixed[name] = spec.base_size
        values_by_layer[name] = vals
        inner_len += hdr_len

    # Absolute offsets.
    layout = []
    offset = 0
    for name in layers:
        hdr = headers[name]
        shifted = tuple(replace(s, start=s.start + offset,
                                length_offset=None if s.length_offset is None else s.length_offset + offset)
                        for s in spans[name])
        layout.append(LayerLayout(name, offset, len(hdr), fixed[name], shifted))
        offset += len(hdr)

    # Checksums last: transport (needs final addresses), then IPv4.
    if transport and f"{transport}.checksum" not in explicit:
        segment = bytes(headers[transport]) + payload
        src, dst = _addresses(net, headers[net])
        value = transport_checksum(net, src, dst, inner_proto, segment,
                                   checksum_offset=16 if transport == "tcp" else 6)
        struct.pack_into("!H", headers[transport], 16 if transport == "tcp" else 6, value)
    if net == "ipv4" and "ipv4.checksum" not in explicit:
        hdr = headers["ipv4"]
        struct.pack_into("!H", hdr, 10, ipv4_header_checksum(bytes(hdr)))

    data = b"".join(bytes(headers[n]) for n in layers) + payload
    return Packet(data, tuple(layout))


def _encode_custom(template: PacketTemplate, specs: list[LayerSpec]) -> Packet:
    layout = []
    chunks = []
    offset = 0
    for spec in specs:
        hdr = pack_fields(spec, _values(spec, template))
        layout.append(LayerLayout(spec.name, offset, len(hdr), len(hdr)))
        chunks.append(hdr)
        offset += len(hdr)
    return Packet(b"".join(chunks) + template.payload, tuple(layout))


def _addresses(net: str, header: bytes) -> tuple[bytes, bytes]:
    if net == "ipv4":
        return bytes(header[12:16]), bytes(header[16:20])
    return bytes(header[8:24]), bytes(header[24:40])


# --- field access --------------------------------------------------------

def _field_bit(packet: Packet, field: FieldDescriptor) -> int:
    if not packet.has_layer(field.layer):
        raise FieldAbsent(f"{field.key}: layer not present")
    lay = packet.layer(field.layer)
    bit = lay.start * 8 + field.bit_offset
    if bit + field.bit_width > len(packet.data) * 8:
        raise FieldAbsent(f"{field.key}: truncated away")
    return bit


def get_field(packet: Packet, field: FieldDescriptor) -> int:
    return read_bits(packet.data, _field_bit(packet, field), field.bit_width)


def set_field(packet: Packet, field: FieldDescriptor, value: int) -> Packet:
    """Overwrite one bit span; nothing else is recomputed."""
    if not 0 <= value <= field.max_value:
        raise ValueOverflow(f"{field.key}={value:#x} does not fit {field.bit_width} bits")
    bit = _field_bit(packet, field)
    data = bytearray(packet.data)
    write_bits(data, bit, field.bit_width, value)
    return Packet(bytes(data), packet.layout)


# --- decode --------------------------------------------------------------

def _read_all(spec: LayerSpec, data: bytes, start: int, values: dict[str, int]) -> None:
    if start + spec.base_size > len(data):
        raise DecodeError(f"{spec.name} header truncated")
    for f in spec.fields:
        values[f"{spec.name}.{f.name}"] = read_bits(data, start * 8 + f.bit_offset, f.bit_width)


def _decode_tlvs(spec: LayerSpec, region: bytes) -> tuple[OptionInstance, ...]:
    out = []
    i = 0
    while i < len(region):
        code = region[i]
        if code == 0:  # EOL: rest is padding
            break
        if code == 1:
            i += 1
            continue
        if i + 1 >= len(region):
            raise DecodeError(f"{spec.name} option at {i} lacks a length byte")
        length = region[i + 1]
        if length < 2 or i + length > len(region):
            raise DecodeError(f"{spec.name} option at {i} has bad length {length}")
        desc = spec.option_by_code(code)
        if desc is None:
            raise DecodeError(f"unknown {spec.name} option type {code}")
        out.append(OptionInstance(desc.name, bytes(region[i + 2:i + length])))
        i += length
    return tuple(out)


def decode(data: bytes, layers: tuple[str, ...] | None = None) -> PacketTemplate:
    """Recover a template whose encoding is ``data``.

    Every header field comes back explicit, so ``encode(decode(b)).data == b``
    for any well-formed frame.
    """
    data = bytes(data)
    if layers is not None and layer_spec(layers[0]).role == "custom":
        values: dict[str, int] = {}
        off = 0
        for name in layers:
            spec = layer_spec(name)
            _read_all(spec, data, off, values)
            off += spec.base_size
        return PacketTemplate(tuple(layers), values, {}, data[off:])

    values = {}
    options: dict[str, tuple[OptionInstance, ...]] = {}
    stack = ["eth"]
    _read_all(layer_spec("eth"), data, 0, values)
    ethertype = values["eth.ethertype"]
    net = {v: k for k, v in ETHERTYPE.items()}.get(ethertype)
    if layers is not None:
        net = layers[1]
    if net is None:
        raise DecodeError(f"unsupported ethertype {ethertype:#06x}")
    stack.append(net)
    off = 14
    spec = layer_spec(net)
    _read_all(spec, data, off, values)
    if net == "ipv4":
        hlen = values["ipv4.ihl"] * 4
        if hlen < 20 or off + hlen > len(data):
            raise DecodeError("bad IPv4 header length")
        options["ipv4"] = _decode_tlvs(spec, data[off + 20:off + hlen])
        proto = values["ipv4.protocol"]
        off += hlen
    else:
        nh = values["ipv6.next_header"]
        off += 40
        exts = []
        while nh in (0, 60):
            if off + 8 > len(data):
                raise DecodeError("IPv6 extension header truncated")
            size = (data[off + 1] + 1) * 8
            if off + size > len(data):
                raise DecodeError("IPv6 extension header overruns frame")
            desc = spec.option_by_code(nh)
            body = data[off + 2:off + size]
            if body[0] != IPV6_EXT_TLV or 2 + body[1] > len(body):
                raise DecodeError("unexpected IPv6 extension option")
            exts.append(OptionInstance(desc.name, bytes(body[2:2 + body[1]])))
            nh = data[off]
            off += size
        options["ipv6"] = tuple(exts)
        proto = nh
    transport = {v: k for k, v in IP_PROTO.items()}.get(proto)
    if layers is not None:
        transport = layers[2] if len(layers) > 2 else None
    if transport is not None and off < len(data):
        stack.append(transport)
        spec = layer_spec(transport)
        _read_all(spec, data, off, values)
        if transport == "tcp":
            hlen = values["tcp.data_offset"] * 4
            if hlen < 20 or off + hlen > len(data):
                raise DecodeError("bad TCP data offset")
            options["tcp"] = _decode_tlvs(spec, data[off + 20:off + hlen])
            off += hlen
        else:
            off += 8
    return PacketTemplate(tuple(stack), values, options, data[off:])
