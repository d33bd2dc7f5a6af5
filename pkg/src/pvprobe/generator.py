"""Ordered, duplicate-free enumeration of mutation plans.

Entities (header fields, insertable options, and the length byte of each
insertable option) are selected ``n`` at a time for ``n = 0 .. max_entities``.
Each selected entity is swept over an interpolated value list and the nested
product of the lists yields the plans.  Smaller ``n`` comes first; the
truncation series closes the stream.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping

from .mutation import Insert, MutationPlan, Replace, Truncate, apply
from .packet import FieldDescriptor, PacketTemplate, encode, get_field, layer_spec
from .packet.fields import FieldKind, OptionDescriptor

DEFAULT_PROTOCOLS = frozenset({"ipv4", "ipv6", "tcp", "udp"})


@dataclass(frozen=True)
class GeneratorConfig:
    max_entities: int = 1
    value_count: int = 4
    stride: int | None = None
    strides: Mapping[str, int] = field(default_factory=dict)
    include_truncation: bool = True
    protocols: frozenset = DEFAULT_PROTOCOLS
    include_reserved: bool = False
    combine_truncation: bool = True  # pair one Replace with one Truncate at n=2

    def __post_init__(self):
        object.__setattr__(self, "protocols", frozenset(self.protocols))
        object.__setattr__(self, "strides", dict(self.strides))
        if self.max_entities < 0:
            raise ValueError("max_entities must be >= 0")
        if self.stride is None and self.value_count < 2:
            raise ValueError("value_count must be >= 2")
        if self.stride is not None and self.stride < 1:
            raise ValueError("stride must be >= 1")

    def stride_for(self, key: str, max_value: int) -> int:
        if key in self.strides:
            return self.strides[key]
        if self.stride is not None:
            return self.stride
        return max(1, math.ceil(max_value / (self.value_count - 1)))


@dataclass(frozen=True)
class EntityRef:
    kind: str  # "field" or "option"
    layer: str
    name: str
    ordinal: int

    @property
    def key(self) -> str:
        return f"{self.layer}.{self.name}"

    @property
    def is_option_length(self) -> bool:
        return self.kind == "field" and self.name.endswith(".length")

    @property
    def option_name(self) -> str:
        return self.name[:-len(".length")] if self.is_option_length else self.name


def option_length_descriptor(desc: OptionDescriptor) -> FieldDescriptor:
    """The length byte of an option, as a field relative to the option start."""
    return FieldDescriptor(f"{desc.name}.length", desc.layer, 8, 8,
                           desc.natural_length(), FieldKind.LENGTH_LIKE)


def resolve(entity: EntityRef) -> FieldDescriptor | OptionDescriptor:
    spec = layer_spec(entity.layer)
    if entity.kind == "option":
        return spec.option(entity.name)
    if entity.is_option_length:
        return option_length_descriptor(spec.option(entity.option_name))
    return spec.field(entity.name)


def sweep(max_value: int, stride: int) -> list[int]:
    values = list(range(0, max_value + 1, stride))
    if values[-1] != max_value:
        values.append(max_value)
    return values


def interpolate(entity: EntityRef, config: GeneratorConfig, default: int | None = None) -> list:
    """Values an entity takes, ascending from the domain minimum to maximum.

    Field sweeps drop ``default`` (the field's value in the baseline packet,
    falling back to the descriptor default), since replacing a field with its
    own value changes nothing.  Option sweeps return byte strings.
    """
    desc = resolve(entity)
    if isinstance(desc, OptionDescriptor):
        if desc.value_width == 0:
            return [b""]
        max_value = (1 << (8 * desc.value_width)) - 1
        stride = config.stride_for(entity.key, max_value)
        return [v.to_bytes(desc.value_width, "big") for v in sweep(max_value, stride)]
    if default is None:
        default = desc.default
    stride = config.stride_for(entity.key, desc.max_value)
    return [v for v in sweep(desc.max_value, stride) if v != default]


def entities(template: PacketTemplate, config: GeneratorConfig) -> list[EntityRef]:
    out: list[EntityRef] = []
    for layer in template.layers:
        if layer not in config.protocols:
            continue
        spec = layer_spec(layer)
        for f in spec.fields:
            if f.kind is FieldKind.RESERVED and not config.include_reserved:
                continue
            out.append(EntityRef("field", layer, f.name, len(out)))
        for opt in spec.options:
            if opt.is_padding:
                continue
            out.append(EntityRef("option", layer, opt.name, len(out)))
            out.append(EntityRef("field", layer, f"{opt.name}.length", len(out)))
    return out


def next_entity_selection(template: PacketTemplate, n: int,
                          config: GeneratorConfig | None = None) -> Iterator[tuple[EntityRef, ...]]:
    """All ``n``-subsets of the template's entities in lexicographic ordinal order."""
    ents = entities(template, config or GeneratorConfig())
    if not 0 <= n <= len(ents):
        raise ValueError(f"cannot select {n} of {len(ents)} entities")
    return itertools.combinations(ents, n)


class _ValueTable:
    """Per-entity value lists resolved against a template's baseline packet."""

    def __init__(self, template: PacketTemplate, config: GeneratorConfig):
        self.template = template
        self.config = config
        self.baseline = encode(template)
        self.entities = entities(template, config)
        self.values = {e.ordinal: self._values(e) for e in self.entities}

    def _values(self, e: EntityRef) -> list:
        if e.kind == "field" and not e.is_option_length:
            desc = resolve(e)
            return interpolate(e, self.config, default=get_field(self.baseline, desc))
        return interpolate(e, self.config)


def truncation_limit(template: PacketTemplate, packet=None) -> int:
    """How many trailing bytes the series may remove (the innermost layer only)."""
    packet = packet or encode(template)
    boundary = max(packet.layout[-1].start, 1)
    return max(len(packet.data) - boundary, 0)


def truncation_series(template: PacketTemplate, start_id: int = 0) -> Iterator[MutationPlan]:
    for i, count in enumerate(range(1, truncation_limit(template) + 1)):
        yield MutationPlan((Truncate(count),), plan_id=start_id + i, level=1)


def _instructions(selection: tuple[EntityRef, ...], values: tuple) -> tuple:
    chosen = {e.key for e in selection}
    out = []
    for e, v in zip(selection, values):
        if e.kind == "option":
            out.append(Insert(e.layer, e.name, v))
        elif e.is_option_length:
            if f"{e.layer}.{e.option_name}" in chosen:
                out.append(Replace(e.layer, e.name, v))
            else:
                desc = layer_spec(e.layer).option(e.option_name)
                out.append(Insert(e.layer, desc.name, desc.default_value, length=v))
        else:
            out.append(Replace(e.layer, e.name, v))
    return tuple(out)


def _raw_plans(table: _ValueTable) -> Iterator[tuple[tuple, int]]:
    """(instructions, level) before duplicate suppression."""
    config = table.config
    yield (), 0
    k = truncation_limit(table.template, table.baseline) if config.include_truncation else 0
    for n in range(1, config.max_entities + 1):
        if n > len(table.entities):
            break
        for selection in itertools.combinations(table.entities, n):
            lists = [table.values[e.ordinal] for e in selection]
            for combo in itertools.product(*lists):
                yield _instructions(selection, combo), n
        if n == 2 and k and config.combine_truncation:
            for e in table.entities:
                if e.kind != "field" or e.is_option_length:
                    continue
                for v in table.values[e.ordinal]:
                    for count in range(1, k + 1):
                        yield (Replace(e.layer, e.name, v), Truncate(count)), 2
    for count in range(1, k + 1):
        yield (Truncate(count),), 1


class PlanStream:
    """Iterable over the generated plans with duplicate-frame suppression.

    After iteration, ``suppressed`` holds the number of plans dropped because
    their frame equalled an earlier one.
    """

    def __init__(self, template: PacketTemplate, config: GeneratorConfig):
        self.template = template
        self.config = config
        self.suppressed = 0
        self.emitted = 0

    def __iter__(self) -> Iterator[MutationPlan]:
        table = _ValueTable(self.template, self.config)
        seen: set[bytes] = set()
        self.suppressed = 0
        self.emitted = 0
        for instructions, level in _raw_plans(table):
            plan = MutationPlan(instructions, plan_id=self.emitted, level=level)
            data = apply(self.template, plan).data
            if data in seen:
                self.suppressed += 1
                continue
            seen.add(data)
            self.emitted += 1
            yield plan


def generate(template: PacketTemplate, config: GeneratorConfig) -> PlanStream:
    return PlanStream(template, config)


def count_plans(template: PacketTemplate, config: GeneratorConfig) -> int:
    """Length of the plan stream before duplicate suppression, in closed form."""
    table = _ValueTable(template, config)
    lens = [len(table.values[e.ordinal]) for e in table.entities]
    top = min(config.max_entities, len(lens))
    # elementary symmetric sums e_0..e_top of the value-list lengths
    esum = [1] + [0] * top
    for x in lens:
        for n in range(top, 0, -1):
            esum[n] += esum[n - 1] * x
    total = sum(esum)
    if config.include_truncation:
        k = truncation_limit(template, table.baseline)
        total += k
        if top >= 2 and config.combine_truncation:
            field_values = sum(len(table.values[e.ordinal]) for e in table.entities
                               if e.kind == "field" and not e.is_option_length)
            total += field_values * k
    return total
