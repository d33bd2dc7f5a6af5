from __future__ import annotations

import struct
import time
from pathlib import Path
from typing import Iterable

LINKTYPE_ETHERNET = 1


def hexdump(data: bytes, per_line: int = 16) -> str:
    """Two-digit lowercase hex, space separated, ``per_line`` bytes per line."""
    lines = []
    for i in range(0, len(data), per_line):
        lines.append(" ".join(f"{b:02x}" for b in data[i:i + per_line]))
    return "\n".join(lines)


def parse_hex(text: str) -> bytes:
    return bytes.fromhex("".join(text.split()))


def write_pcap(path: str | Path, frames: Iterable[bytes], snaplen: int = 65535,
               timestamp: float | None = None) -> int:
    """Write frames as a classic (microsecond) pcap file; returns the count."""
    ts = time.time() if timestamp is None else timestamp
    count = 0
    with open(path, "wb") as fh:
        fh.write(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET))
        for frame in frames:
            sec = int(ts)
            usec = int((ts - sec) * 1_000_000) + count
            sec, usec = sec + usec // 1_000_000, usec % 1_000_000
            captured = frame[:snaplen]
            fh.write(struct.pack("<IIII", sec, usec, len(captured), len(frame)))
            fh.write(captured)
            count += 1
    return count
