"""Mutation instructions and their byte-level application.

Three operators exist: replace a header field, insert an option, truncate the
frame.  After mutation, every layer outside the innermost mutated one has its
lengths and checksums brought back in line so that outer integrity checks in
the target never silently discard the mutant.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Union

from .packet import (
    OptionInstance, Packet, PacketTemplate, encode, ipv4_header_checksum, layer_spec,
)
from .packet.codec import FieldAbsent


class PlanInvalid(ValueError):
    pass


class TruncateTooLarge(ValueError):
    pass


class OuterLayerCorrupt(ValueError):
    pass


@dataclass(frozen=True)
class Replace:
    layer: str
    target: str  # header field, or "<option>.length" for an inserted option's length byte
    value: int

    op = "replace"

    @property
    def key(self) -> str:
        return f"{self.layer}.{self.target}"

    def serialize(self) -> str:
        return f"replace {self.layer} {self.target} 0x{self.value:x}"


@dataclass(frozen=True)
class Insert:
    layer: str
    target: str  # option name
    value: bytes = b""
    length: int | None = None

    op = "insert"

    def serialize(self) -> str:
        text = f"insert {self.layer} {self.target} 0x{self.value.hex()}"
        if self.length is not None:
            text += f" length=0x{self.length:02x}"
        return text


@dataclass(frozen=True)
class Truncate:
    count: int

    op = "truncate"
    layer = None

    def serialize(self) -> str:
        return f"truncate {self.count}"


MutationInstruction = Union[Replace, Insert, Truncate]


@dataclass(frozen=True)
class MutationPlan:
    instructions: tuple[MutationInstruction, ...] = ()
    plan_id: int = 0
    scenario_id: str | None = None
    level: int = 0  # number of entities this plan varies

    def __post_init__(self):
        object.__setattr__(self, "instructions", tuple(self.instructions))

    def validate(self) -> None:
        truncs = [i for i, ins in enumerate(self.instructions) if isinstance(ins, Truncate)]
        if len(truncs) > 1:
            raise PlanInvalid("more than one truncate")
        if truncs and truncs[0] != len(self.instructions) - 1:
            raise PlanInvalid("truncate must be the last instruction")
        seen = set()
        for ins in self.instructions:
            if isinstance(ins, Replace):
                if ins.key in seen:
                    raise PlanInvalid(f"{ins.key} replaced twice")
                seen.add(ins.key)

    @property
    def truncation(self) -> Truncate | None:
        if self.instructions and isinstance(self.instructions[-1], Truncate):
            return self.instructions[-1]
        return None

    def replaced(self) -> set[str]:
        return {ins.key for ins in self.instructions if isinstance(ins, Replace)}

    def serialize(self) -> str:
        return "\n".join(ins.serialize() for ins in self.instructions)

    def describe(self) -> str:
        return "; ".join(ins.serialize() for ins in self.instructions) or "identity"


def parse_instruction(line: str) -> MutationInstruction:
    parts = line.split()
    if not parts:
        raise PlanInvalid("empty instruction")
    verb = parts[0].lower()
    try:
        if verb == "replace" and len(parts) == 4:
            return Replace(parts[1], parts[2], int(parts[3], 16))
        if verb == "insert" and len(parts) in (4, 5):
            raw = parts[3]
            if not raw.lower().startswith("0x"):
                raise ValueError(raw)
            length = None
            if len(parts) == 5:
                key, _, val = parts[4].partition("=")
                if key != "length":
                    raise ValueError(parts[4])
                length = int(val, 16)
            return Insert(parts[1], parts[2], bytes.fromhex(raw[2:]), length)
        if verb == "truncate" and len(parts) == 2:
            return Truncate(int(parts[1], 0))
    except ValueError as exc:
        raise PlanInvalid(f"bad instruction {line!r}: {exc}") from None
    raise PlanInvalid(f"bad instruction {line!r}")


def parse_plan(text: str | Iterable[str], plan_id: int = 0) -> MutationPlan:
    lines = text.splitlines() if isinstance(text, str) else list(text)
    instructions = tuple(parse_instruction(ln) for ln in lines if ln.strip() and not ln.lstrip().startswith("#"))
    return MutationPlan(instructions, plan_id=plan_id, level=len(instructions))


# --- application ---------------------------------------------------------

def mutate_template(template: PacketTemplate, plan: MutationPlan) -> PacketTemplate:
    """Fold the Replace and Insert instructions into the template."""
    t = template
    for ins in plan.instructions:
        if isinstance(ins, Truncate):
            continue
        if ins.layer not in t.layers:
            raise PlanInvalid(f"{ins.serialize()}: no {ins.layer} layer in {t.key}")
        spec = layer_spec(ins.layer)
        if isinstance(ins, Insert):
            try:
                desc = spec.option(ins.target)
            except KeyError as exc:
                raise PlanInvalid(str(exc)) from None
            if desc.is_padding and ins.length is not None:
                raise PlanInvalid(f"{desc.key} has no length byte")
            if ins.length is not None and not 0 <= ins.length <= 0xFF:
                raise PlanInvalid(f"length {ins.length} does not fit a byte")
            t = t.with_option(ins.layer, OptionInstance(ins.target, ins.value, ins.length))
        elif ins.target.endswith(".length"):
            name = ins.target[:-len(".length")]
            opts = list(t.options.get(ins.layer, ()))
            for i in range(len(opts) - 1, -1, -1):
                if opts[i].name == name:
                    break
            else:
                raise PlanInvalid(f"{ins.serialize()}: no {name} option present")
            if not 0 <= ins.value <= 0xFF:
                raise PlanInvalid(f"{ins.serialize()}: length does not fit a byte")
            opts[i] = replace(opts[i], length=ins.value)
            t = t.with_options(ins.layer, tuple(opts))
        else:
            if not spec.has_field(ins.target):
                raise PlanInvalid(f"{ins.serialize()}: unknown field")
            if not 0 <= ins.value <= spec.field(ins.target).max_value:
                raise PlanInvalid(f"{ins.serialize()}: value does not fit the field")
            t = t.with_fields({ins.key: ins.value})
    return t


def apply(template: PacketTemplate, plan: MutationPlan) -> Packet:
    """Apply ``plan`` to ``template`` and return the finished frame."""
    plan.validate()
    packet = encode(mutate_template(template, plan))
    trunc = plan.truncation
    if trunc is None:
        return packet
    if trunc.count < 1:
        raise PlanInvalid("truncate count must be >= 1")
    if trunc.count >= len(packet.data):
        raise TruncateTooLarge(f"cannot remove {trunc.count} of {len(packet.data)} bytes")
    cut = Packet(packet.data[:-trunc.count], packet.layout)
    return refix_outer_layers(cut, packet.layout[-1].name, pinned=plan.replaced())


def refix_outer_layers(packet: Packet, innermost_mutated_layer: str,
                       pinned: Iterable[str] = ()) -> Packet:
    """Recompute lengths and checksums of the layers enclosing the mutated one.

    The mutated layer and everything inside it are left byte-for-byte alone.
    Fields named in ``pinned`` (``"layer.field"``) keep their current bytes.
    """
    pinned = set(pinned)
    names = packet.layers
    if innermost_mutated_layer not in names:
        raise OuterLayerCorrupt(f"no {innermost_mutated_layer} layer")
    idx = names.index(innermost_mutated_layer)
    data = bytearray(packet.data)
    outer = packet.layout[:idx]
    for lay in outer:
        if lay.header_end > len(data):
            raise OuterLayerCorrupt(f"{lay.name} header truncated ({len(data)} < {lay.header_end})")
    if packet.layout[idx].start > len(data):
        raise OuterLayerCorrupt(f"{innermost_mutated_layer} starts beyond the frame")
    for lay in reversed(outer):
        if lay.name == "ipv4":
            if "ipv4.total_length" not in pinned:
                struct.pack_into("!H", data, lay.start + 2, min(len(data) - lay.start, 0xFFFF))
            if "ipv4.checksum" not in pinned:
                hdr = bytes(data[lay.start:lay.header_end])
                struct.pack_into("!H", data, lay.start + 10, ipv4_header_checksum(hdr))
        elif lay.name == "ipv6":
            if "ipv6.payload_length" not in pinned:
                struct.pack_into("!H", data, lay.start + 4, min(len(data) - lay.start - 40, 0xFFFF))
    return Packet(bytes(data), packet.layout)


def innermost_layer(template: PacketTemplate, plan: MutationPlan) -> str:
    """Innermost layer the plan touches (the whole frame tail for truncation)."""
    if plan.truncation is not None:
        return template.layers[-1]
    order = {name: i for i, name in enumerate(template.layers)}
    touched = [ins.layer for ins in plan.instructions if not isinstance(ins, Truncate)]
    if not touched:
        return template.layers[-1]
    return max(touched, key=order.__getitem__)


__all__ = [
    "PlanInvalid", "TruncateTooLarge", "OuterLayerCorrupt", "FieldAbsent",
    "Replace", "Insert", "Truncate", "MutationInstruction", "MutationPlan",
    "parse_instruction", "parse_plan", "mutate_template", "apply", "refix_outer_layers",
    "innermost_layer",
]
