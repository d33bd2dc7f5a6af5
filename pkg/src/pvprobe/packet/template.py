from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from .fields import FieldKind, layer_spec


class LayerMismatch(ValueError):
    """The layer stack is not physically valid."""


class ValueOverflow(ValueError):
    pass


@dataclass(frozen=True)
class OptionInstance:
    name: str
    value: bytes = b""
    length: int | None = None  # encoded length byte; None means the natural length


@dataclass(frozen=True)
class PacketTemplate:
    """A baseline packet: layer stack, explicit field values, options, payload.

    Fields missing from ``field_values`` take their descriptor default, except
    lengths, protocol selectors and checksums, which the encoder derives from
    the actual layout.  Explicit values are always written verbatim.
    """

    layers: tuple[str, ...]
    field_values: Mapping[str, int] = field(default_factory=dict)
    options: Mapping[str, tuple[OptionInstance, ...]] = field(default_factory=dict)
    payload: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "field_values", dict(self.field_values))
        object.__setattr__(self, "options", {k: tuple(v) for k, v in self.options.items() if v})
        object.__setattr__(self, "payload", bytes(self.payload))
        self.validate()

    def validate(self) -> None:
        roles = [layer_spec(name).role for name in self.layers]
        if not roles:
            raise LayerMismatch("empty layer stack")
        if "custom" in roles:
            if set(roles) != {"custom"}:
                raise LayerMismatch("custom layers cannot be mixed with protocol layers")
        elif roles not in (["link", "network"], ["link", "network", "transport"]):
            raise LayerMismatch(f"invalid stack {'/'.join(self.layers)}")
        for key, value in self.field_values.items():
            layer, _, name = key.partition(".")
            if layer not in self.layers:
                raise LayerMismatch(f"value for {key} but layer {layer} is not in the stack")
            desc = layer_spec(layer).field(name)
            if not 0 <= value <= desc.max_value:
                raise ValueOverflow(f"{key}={value:#x} does not fit {desc.bit_width} bits")
        for layer, opts in self.options.items():
            if layer not in self.layers:
                raise LayerMismatch(f"options for {layer} but it is not in the stack")
            spec = layer_spec(layer)
            for opt in opts:
                spec.option(opt.name)

    @property
    def network(self) -> str | None:
        for name in self.layers:
            if layer_spec(name).role == "network":
                return name
        return None

    @property
    def transport(self) -> str | None:
        for name in self.layers:
            if layer_spec(name).role == "transport":
                return name
        return None

    @property
    def key(self) -> str:
        return "-".join(n for n in self.layers if n != "eth")

    def value(self, key: str) -> int | None:
        return self.field_values.get(key)

    def with_fields(self, values: Mapping[str, int]) -> "PacketTemplate":
        merged = dict(self.field_values)
        merged.update(values)
        return PacketTemplate(self.layers, merged, self.options, self.payload)

    def with_option(self, layer: str, option: OptionInstance) -> "PacketTemplate":
        opts = dict(self.options)
        opts[layer] = tuple(opts.get(layer, ())) + (option,)
        return PacketTemplate(self.layers, self.field_values, opts, self.payload)

    def with_options(self, layer: str, options: tuple[OptionInstance, ...]) -> "PacketTemplate":
        opts = dict(self.options)
        opts[layer] = tuple(options)
        return PacketTemplate(self.layers, self.field_values, opts, self.payload)

    def with_payload(self, payload: bytes) -> "PacketTemplate":
        return PacketTemplate(self.layers, self.field_values, self.options, payload)


BUILTIN_TEMPLATES = ("ipv4-tcp", "ipv6-tcp", "ipv4-udp", "ipv6-udp")


def builtin_template(key: str) -> PacketTemplate:
    """Minimal inbound packet for a ``net-transport`` key, e.g. ``ipv4-tcp``."""
    net, _, transport = key.partition("-")
    if key not in BUILTIN_TEMPLATES:
        raise KeyError(f"unknown template {key!r}; choose from {', '.join(BUILTIN_TEMPLATES)}")
    return PacketTemplate(("eth", net, transport))


def mutable_fields(layer: str, include_reserved: bool = False):
    """Header fields of ``layer`` that the generator may replace."""
    for f in layer_spec(layer).fields:
        if f.kind is FieldKind.RESERVED and not include_reserved:
            continue
        yield f
