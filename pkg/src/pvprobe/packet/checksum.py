"""Internet checksum (ones-complement sum of 16-bit words) and pseudo-headers."""

from __future__ import annotations

import struct


class BadLength(ValueError):
    pass


def ones_complement_sum(data: bytes, start: int = 0) -> int:
    """Folded 16-bit ones-complement sum; odd input is padded with a zero byte."""
    if len(data) % 2:
        data = bytes(data) + b"\x00"
    total = start + sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total > 0xFFFF:
        total = (total & 0xFFFF) + (total >> 16)
    return total


def internet_checksum(data: bytes, start: int = 0) -> int:
    return ~ones_complement_sum(data, start) & 0xFFFF


def ipv4_header_checksum(header: bytes) -> int:
    """Checksum of an IPv4 header; bytes 10-11 are treated as zero."""
    if len(header) < 20 or len(header) % 2:
        raise BadLength(f"IPv4 header must be an even length >= 20, got {len(header)}")
    zeroed = bytes(header[:10]) + b"\x00\x00" + bytes(header[12:])
    return internet_checksum(zeroed)


def verify_ipv4_header(header: bytes) -> bool:
    stored = struct.unpack_from("!H", header, 10)[0]
    return ipv4_header_checksum(header) == stored


def pseudo_header(net: str, src: bytes, dst: bytes, proto: int, length: int) -> bytes:
    if net == "ipv4":
        return src + dst + struct.pack("!BBH", 0, proto, length)
    if net == "ipv6":
        return src + dst + struct.pack("!I3xB", length, proto)
    raise ValueError(f"no pseudo-header for {net!r}")


def transport_checksum(net: str, src: bytes, dst: bytes, proto: int, segment: bytes,
                       checksum_offset: int | None = None) -> int:
    """TCP/UDP checksum over pseudo-header + segment.

    ``checksum_offset`` names the position of the checksum inside ``segment``;
    those two bytes are summed as zero.  A UDP result of zero is returned as
    0xFFFF, which is how it goes on the wire.
    """
    if checksum_offset is not None and checksum_offset + 2 <= len(segment):
        segment = bytes(segment[:checksum_offset]) + b"\x00\x00" + bytes(segment[checksum_offset + 2:])
    value = internet_checksum(pseudo_header(net, src, dst, proto, len(segment)) + bytes(segment))
    if proto == 17 and value == 0:
        return 0xFFFF
    return value
