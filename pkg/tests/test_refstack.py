import random

import pytest

from pvprobe.generator import GeneratorConfig, generate
from pvprobe.harness import Outcome
from pvprobe.mutation import parse_plan
from pvprobe.packet import builtin_template, encode
from pvprobe.refstack import BugSet, RefStack, catalog_entry, initial_sequence, seeded_bug_catalog
from pvprobe.scenario import bind_mutant, run_prefix, scenario_by_id, summarize_tcp

V4 = builtin_template("ipv4-tcp")
V6 = builtin_template("ipv6-tcp")

TRIGGERS = {
    "B1": ("ipv4-tcp", "tcp-listen", "replace tcp data_offset 0xa"),
    "B2": ("ipv4-tcp", "tcp-listen", "insert tcp mss 0x0000"),
    "B3": ("ipv4-tcp", "tcp-listen", "insert tcp mss 0x05b4 length=0x55"),
    "B4": ("ipv4-tcp", "tcp-listen", "truncate 1"),
    "B5": ("ipv4-tcp", "tcp-listen", "replace ipv4 total_length 0x0"),
    "B6": ("ipv6-tcp", "tcp-listen", "replace ipv6 next_header 0x0"),
    "B7": ("ipv4-tcp", "tcp-listen", "insert tcp mss 0x05b4 length=0x00"),
    "B8": ("ipv4-tcp", "tcp-established", "truncate 7"),
}


def inject(bugs, key, sid, plan_text):
    t = builtin_template(key)
    stack = RefStack(bugs)
    ctx = run_prefix(scenario_by_id(sid), stack, t)
    return stack.deliver(bind_mutant(ctx, t, parse_plan(plan_text)).data)


def listening(bugs=()):
    stack = RefStack(bugs)
    fd = stack.syscall("socket", {"proto": "tcp", "family": "ipv4"})
    stack.syscall("bind", {"fd": fd, "port": 7777})
    stack.syscall("listen", {"fd": fd})
    return stack, fd


def syn(**extra):
    values = {"tcp.src_port": 5555, "tcp.dst_port": 7777, "tcp.seq": 1000, "tcp.flags": 0x02}
    values.update(extra)
    return encode(V4.with_fields(values)).data


class TestProcessing:
    def test_handshake(self):
        stack, _ = listening()
        assert stack.deliver(syn()).outcome is Outcome.PROCESSED
        out = stack.drain_outbound()
        assert len(out) == 1
        reply = summarize_tcp(out[0])
        assert reply.flags == 0x12 and reply.ack == 1001
        assert reply.seq == initial_sequence(7777)
        assert stack.inspect("tcp_state:port=7777") == "SYN-RCVD"

    def test_bad_ipv4_checksum(self):
        stack, _ = listening()
        r = stack.deliver(encode(V4.with_fields({"ipv4.checksum": 0x1234, "tcp.dst_port": 7777})).data)
        assert r.outcome is Outcome.DROPPED and r.reason == "checksum"

    def test_closed_port_gets_rst(self):
        stack = RefStack()
        stack.deliver(syn())
        (rst,) = stack.drain_outbound()
        assert summarize_tcp(rst).flags & 0x04

    def test_inspect(self):
        stack, _ = listening()
        assert stack.inspect("tcp_state:port=7777") == "LISTEN"
        assert stack.inspect("tcp_state:port=1") == "CLOSED"
        stack.reset()
        assert stack.inspect("tcp_state:port=7777") == "CLOSED"
        with pytest.raises(KeyError):
            stack.inspect("bogus")

    def test_reset_clears_outbound(self):
        stack, _ = listening()
        stack.deliver(syn())
        stack.reset()
        assert stack.drain_outbound() == []

    def test_udp_delivery(self):
        stack = RefStack()
        fd = stack.syscall("socket", {"proto": "udp", "family": "ipv4"})
        stack.syscall("bind", {"fd": fd, "port": 7777})
        t = builtin_template("ipv4-udp").with_fields({"udp.dst_port": 7777}).with_payload(b"hi")
        assert stack.deliver(encode(t).data).outcome is Outcome.PROCESSED
        assert stack.syscall("recv", {"fd": fd}) == b"hi"


class TestCatalog:
    def test_ids_and_sites(self):
        cat = seeded_bug_catalog()
        assert [b.id for b in cat] == [f"B{i}" for i in range(1, 9)]
        assert catalog_entry("B1").signature == ("oob_read", "tcp_parse_options")
        assert catalog_entry("B2").signature == ("div_by_zero", "tcp_option_mss")
        assert catalog_entry("B7").signature == ("hang", "tcp_parse_options")
        assert catalog_entry("B8").required_state == "ESTABLISHED"

    def test_bugset_parse(self):
        assert BugSet.parse("B1,B2").enabled == {"B1", "B2"}
        assert BugSet.parse(["all"]) == BugSet.all()
        two = BugSet.parse(["B3:two-option"])
        assert two.b3_variant == "two-option" and two.tokens() == ["B3:two-option"]
        with pytest.raises(KeyError):
            BugSet.parse(["B9"])
        with pytest.raises(KeyError):
            BugSet.parse(["B1:two-option"])


class TestSeededBugs:
    @pytest.mark.parametrize("bug", sorted(TRIGGERS))
    def test_trigger_faults_when_enabled(self, bug):
        r = inject([bug], *TRIGGERS[bug])
        assert r.is_fault and r.fault.signature == catalog_entry(bug).signature

    @pytest.mark.parametrize("bug", sorted(TRIGGERS))
    def test_trigger_clean_when_disabled(self, bug):
        r = inject([], *TRIGGERS[bug])
        assert not r.is_fault

    def test_data_offset_fifteen(self):
        r = inject(["B1"], "ipv4-tcp", "tcp-listen", "replace tcp data_offset 0xf")
        assert r.fault.signature == ("oob_read", "tcp_parse_options")

    def test_b8_is_state_gated(self):
        r = inject(["B8"], "ipv4-tcp", "tcp-listen", "truncate 7")
        assert r.outcome is Outcome.DROPPED
        assert inject(["B8"], "ipv4-tcp", "tcp-established", "truncate 7").is_fault

    def test_b3_two_option_form(self):
        single = "insert tcp mss 0x05b4 length=0x55"
        assert not inject(["B3:two-option"], "ipv4-tcp", "tcp-listen", single).is_fault
        pair = "insert tcp mss 0x5555\ninsert tcp wscale 0x07 length=0x55"
        r = inject(["B3:two-option"], "ipv4-tcp", "tcp-listen", pair)
        assert r.fault.signature == ("oob_read", "tcp_option_value")

    def test_b7_hang_under_small_budget(self):
        stack = RefStack(["B7"], max_steps=50)
        ctx = run_prefix(scenario_by_id("tcp-listen"), stack, V4)
        r = stack.deliver(bind_mutant(ctx, V4, parse_plan("insert tcp mss 0x05b4 length=0x00")).data)
        assert r.fault.kind.value == "hang" and r.fault.site == "tcp_parse_options"


class TestRobustness:
    def test_valid_traffic_soak(self):
        # 10,000 well-formed frames with random headers; an unbugged stack never faults
        rng = random.Random(7)
        stack, _ = listening()
        faults = 0
        for i in range(10_000):
            if i % 500 == 0:
                stack.reset()
                fd = stack.syscall("socket", {"proto": "tcp", "family": "ipv4"})
                stack.syscall("bind", {"fd": fd, "port": 7777})
                stack.syscall("listen", {"fd": fd})
            t = V4 if rng.random() < 0.5 else V6
            values = {"tcp.src_port": rng.randrange(1, 65536),
                      "tcp.dst_port": rng.choice([7777, rng.randrange(1, 65536)]),
                      "tcp.seq": rng.getrandbits(32), "tcp.ack": rng.getrandbits(32),
                      "tcp.flags": rng.choice([0x02, 0x10, 0x18, 0x11, 0x04, 0x12])}
            frame = encode(t.with_fields(values).with_payload(rng.randbytes(rng.randrange(0, 64)))).data
            faults += stack.deliver(frame).is_fault
            stack.drain_outbound()
        assert faults == 0

    def test_bug_independence_at_n1(self):
        def signatures(bugs):
            found = set()
            for key in ("ipv4-tcp", "ipv6-tcp"):
                t = builtin_template(key)
                plans = list(generate(t, GeneratorConfig()))
                for sid in ("tcp-listen", "tcp-established"):
                    stack = RefStack(bugs)
                    for p in plans:
                        stack.reset()
                        ctx = run_prefix(scenario_by_id(sid), stack, t)
                        r = stack.deliver(bind_mutant(ctx, t, p).data)
                        if r.is_fault:
                            found.add(r.fault.signature)
            return found

        union = set()
        for bug in seeded_bug_catalog():
            union |= signatures([bug.id])
        assert signatures(["all"]) == union
        assert len(union) == 8


def test_initial_sequence_is_port_derived():
    assert initial_sequence(7777) == (0x10000000 + 7777 * 0x10000) & 0xFFFFFFFF
    assert initial_sequence(7777) != initial_sequence(7778)
