import struct

import pytest
from hypothesis import given, strategies as st

from pvprobe.mutation import (
    Insert, MutationPlan, OuterLayerCorrupt, PlanInvalid, Replace, Truncate, TruncateTooLarge,
    apply, innermost_layer, parse_instruction, parse_plan, refix_outer_layers,
)
from pvprobe.packet import OptionSpaceExhausted, builtin_template, encode

from test_packet import oracle_sum

V4TCP = builtin_template("ipv4-tcp")


def plan(*ins):
    return MutationPlan(tuple(ins))


class TestSerialization:
    @pytest.mark.parametrize("ins,text", [
        (Replace("tcp", "data_offset", 15), "replace tcp data_offset 0xf"),
        (Insert("tcp", "mss", b"\x00\x00"), "insert tcp mss 0x0000"),
        (Insert("tcp", "wscale", b"\x07", length=0x55), "insert tcp wscale 0x07 length=0x55"),
        (Insert("tcp", "sack_perm", b""), "insert tcp sack_perm 0x"),
        (Truncate(7), "truncate 7"),
    ])
    def test_format_and_parse(self, ins, text):
        assert ins.serialize() == text
        assert parse_instruction(text) == ins

    @pytest.mark.parametrize("bad", ["", "replace tcp", "insert tcp mss 00", "truncate x",
                                     "insert tcp mss 0x00 len=1", "rotate tcp 1"])
    def test_bad_lines(self, bad):
        with pytest.raises(PlanInvalid):
            parse_instruction(bad)

    @given(st.lists(st.one_of(
        st.builds(Replace, st.sampled_from(["tcp", "ipv4"]), st.sampled_from(["seq", "ttl"]),
                  st.integers(0, 2**32 - 1)),
        st.builds(Insert, st.just("tcp"), st.sampled_from(["mss", "wscale"]), st.binary(max_size=4),
                  st.one_of(st.none(), st.integers(0, 255))),
    ), max_size=4), st.integers(1, 60))
    def test_plan_roundtrip(self, instructions, count):
        p = MutationPlan(tuple(instructions) + (Truncate(count),))
        assert parse_plan(p.serialize()).instructions == p.instructions

    def test_comments_skipped(self):
        assert parse_plan("# x\nreplace tcp seq 0x1\n\n").instructions == (Replace("tcp", "seq", 1),)


class TestValidation:
    def test_truncate_must_be_last(self):
        with pytest.raises(PlanInvalid):
            apply(V4TCP, plan(Truncate(1), Replace("tcp", "seq", 1)))

    def test_single_truncate(self):
        with pytest.raises(PlanInvalid):
            apply(V4TCP, plan(Truncate(1), Truncate(2)))

    def test_duplicate_replace(self):
        with pytest.raises(PlanInvalid):
            apply(V4TCP, plan(Replace("tcp", "seq", 1), Replace("tcp", "seq", 2)))

    def test_value_must_fit(self):
        with pytest.raises(PlanInvalid):
            apply(V4TCP, plan(Replace("tcp", "data_offset", 16)))

    def test_unknown_field_and_layer(self):
        with pytest.raises(PlanInvalid):
            apply(V4TCP, plan(Replace("tcp", "nonsense", 1)))
        with pytest.raises(PlanInvalid):
            apply(V4TCP, plan(Replace("udp", "length", 1)))

    def test_length_replace_needs_option(self):
        with pytest.raises(PlanInvalid):
            apply(V4TCP, plan(Replace("tcp", "mss.length", 0)))

    @pytest.mark.parametrize("count", [0, 54, 60])
    def test_truncate_bounds(self, count):
        with pytest.raises((PlanInvalid, TruncateTooLarge)):
            apply(V4TCP, plan(Truncate(count)))

    def test_option_space(self):
        ins = tuple(Insert("tcp", "timestamps", bytes(8)) for _ in range(5))
        with pytest.raises(OptionSpaceExhausted):
            apply(V4TCP, MutationPlan(ins))


class TestApply:
    def test_identity(self):
        assert apply(V4TCP, MutationPlan()).data == encode(V4TCP).data

    def test_data_offset_trigger_shape(self):
        data = apply(V4TCP, plan(Replace("tcp", "data_offset", 15))).data
        assert len(data) == 54 and data[46] >> 4 == 15
        assert oracle_sum(data[14:34]) == 0
        assert oracle_sum(data[26:34] + struct.pack("!BBH", 0, 6, 20) + data[34:]) == 0

    def test_mss_zero_trigger_shape(self):
        data = apply(V4TCP, plan(Insert("tcp", "mss", b"\x00\x00"))).data
        assert data[54:58] == bytes([2, 4, 0, 0])
        assert data[46] >> 4 == 6
        assert struct.unpack_from("!H", data, 16)[0] == 44

    def test_replace_preserves_length(self):
        p = plan(Replace("tcp", "window", 0), Replace("ipv4", "ttl", 1))
        assert len(apply(V4TCP, p).data) == 54

    def test_insert_grows_by_padded_size(self):
        base = len(encode(V4TCP).data)
        assert len(apply(V4TCP, plan(Insert("tcp", "wscale", b"\x07"))).data) == base + 4
        assert len(apply(V4TCP, plan(Insert("tcp", "timestamps", bytes(8)))).data) == base + 12

    def test_replaced_length_field_wins(self):
        data = apply(V4TCP, plan(Insert("tcp", "mss", b"\x05\xb4"), Replace("tcp", "data_offset", 5))).data
        assert data[46] >> 4 == 5 and len(data) == 58

    def test_option_length_replace(self):
        p = plan(Insert("tcp", "mss", b"\x05\xb4"), Replace("tcp", "mss.length", 0))
        assert apply(V4TCP, p).data[54:58] == bytes([2, 0, 5, 0xB4])

    def test_checksum_replace_is_pinned(self):
        data = apply(V4TCP, plan(Replace("ipv4", "checksum", 0), Truncate(3))).data
        assert data[24:26] == b"\x00\x00"
        assert struct.unpack_from("!H", data, 16)[0] == 37

    def test_truncate_refixes_outer(self):
        data = apply(V4TCP, plan(Truncate(10))).data
        assert len(data) == 44
        assert struct.unpack_from("!H", data, 16)[0] == 30
        assert oracle_sum(data[14:34]) == 0
        assert data[34:] == encode(V4TCP).data[34:44]

    def test_truncate_ipv6_payload_length(self):
        t = builtin_template("ipv6-udp")
        data = apply(t, plan(Truncate(3))).data
        assert struct.unpack_from("!H", data, 18)[0] == 5

    def test_pinned_total_length(self):
        data = apply(V4TCP, plan(Replace("ipv4", "total_length", 0x5555), Truncate(4))).data
        assert struct.unpack_from("!H", data, 16)[0] == 0x5555
        assert oracle_sum(data[14:34]) == 0

    def test_deterministic(self):
        p = plan(Insert("tcp", "mss", b"\x12\x34"), Replace("tcp", "flags", 0x55), Truncate(2))
        assert apply(V4TCP, p).data == apply(V4TCP, p).data


class TestRefix:
    def test_noop_without_mutation(self):
        pkt = encode(V4TCP)
        assert refix_outer_layers(pkt, "tcp").data == pkt.data

    def test_truncated_outer_header(self):
        pkt = encode(V4TCP)
        from pvprobe.packet import Packet
        with pytest.raises(OuterLayerCorrupt):
            refix_outer_layers(Packet(pkt.data[:30], pkt.layout), "tcp")

    def test_innermost_layer(self):
        assert innermost_layer(V4TCP, plan(Replace("ipv4", "ttl", 1))) == "ipv4"
        assert innermost_layer(V4TCP, plan(Replace("ipv4", "ttl", 1), Replace("tcp", "seq", 1))) == "tcp"
        assert innermost_layer(V4TCP, plan(Truncate(1))) == "tcp"
