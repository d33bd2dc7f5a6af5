"""Packet model: descriptors, templates, byte-exact codec, checksums."""

from .checksum import (
    BadLength, internet_checksum, ipv4_header_checksum, ones_complement_sum,
    transport_checksum, verify_ipv4_header,
)
from .codec import (
    DecodeError, FieldAbsent, LayerLayout, OptionSpaceExhausted, OptionSpan, Packet,
    UnrepresentableLength, decode, encode, get_field, set_field,
)
from .fields import (
    FieldDescriptor, FieldKind, LayerSpec, OptionDescriptor, TCP_FLAGS,
    layer_spec, packed_fields, register_layer, resolve_field,
)
from .render import hexdump, parse_hex, write_pcap
from .template import (
    BUILTIN_TEMPLATES, LayerMismatch, OptionInstance, PacketTemplate, ValueOverflow,
    builtin_template,
)

__all__ = [
    "BadLength", "internet_checksum", "ipv4_header_checksum", "ones_complement_sum",
    "transport_checksum", "verify_ipv4_header",
    "DecodeError", "FieldAbsent", "LayerLayout", "OptionSpaceExhausted", "OptionSpan", "Packet",
    "UnrepresentableLength", "decode", "encode", "get_field", "set_field",
    "FieldDescriptor", "FieldKind", "LayerSpec", "OptionDescriptor", "TCP_FLAGS",
    "layer_spec", "packed_fields", "register_layer", "resolve_field",
    "hexdump", "parse_hex", "write_pcap",
    "BUILTIN_TEMPLATES", "LayerMismatch", "OptionInstance", "PacketTemplate", "ValueOverflow",
    "builtin_template",
]
