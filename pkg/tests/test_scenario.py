import pytest

from pvprobe.harness import DeliveryResult, Outcome
from pvprobe.mutation import MutationPlan, Replace
from pvprobe.packet import builtin_template, encode
from pvprobe.refstack import RefStack, initial_sequence
from pvprobe.scenario import (
    PEER_ISN, TCP_STATES, PrefixMismatch, PrefixTimeout, ScenarioError, StepKind, bind_mutant,
    builtin_scenarios, load_scenario, parse_flags, parse_scenario, run_prefix, scenario_by_id,
    summarize_tcp,
)

V4 = builtin_template("ipv4-tcp")

LISTEN_TEXT = """\
# comment lines and blanks are ignored
scenario demo
protocol tcp
state LISTEN

call socket tcp
call bind 7777
call listen
inject
"""


class TestFormat:
    def test_parse(self):
        s = parse_scenario(LISTEN_TEXT)
        assert (s.id, s.protocol, s.injection_state) == ("demo", "tcp", "LISTEN")
        assert [st.kind for st in s.steps] == [StepKind.SYSCALL] * 3 + [StepKind.INJECT_MUTANT]
        assert s.steps[1].args == ("7777",)

    def test_text_roundtrip(self):
        s = scenario_by_id("tcp-established")
        assert parse_scenario(s.to_text()) == s

    def test_flags(self):
        assert parse_flags("SYN-ACK") == 0x12
        assert parse_flags("FIN-ACK") == 0x11
        with pytest.raises(ScenarioError):
            parse_flags("SYN-XYZ")

    def test_packet_steps_have_direction(self):
        s = scenario_by_id("tcp-established")
        assert {st.kind.direction for st in s.steps if st.kind in (StepKind.SEND_PACKET, StepKind.EXPECT_PACKET)} \
            == {"inbound", "outbound"}

    @pytest.mark.parametrize("text", [
        LISTEN_TEXT.replace("inject\n", ""),                       # no inject
        LISTEN_TEXT + "inject\n",                                  # two injects
        LISTEN_TEXT.replace("call listen\ninject", "inject\ncall listen"),  # inject not last
        LISTEN_TEXT.replace("protocol tcp", "protocol sctp"),
        LISTEN_TEXT.replace("call listen", "frobnicate"),
        LISTEN_TEXT.replace("protocol tcp\n", ""),
        "scenario u\nprotocol udp\nstate BOUND\nsend SYN\ninject\n",  # UDP has no exchanges
    ])
    def test_invalid(self, text):
        with pytest.raises(ScenarioError):
            parse_scenario(text)

    def test_load_file(self, tmp_path):
        path = tmp_path / "x.scn"
        path.write_text(LISTEN_TEXT)
        assert load_scenario(path).id == "demo"


class TestBuiltins:
    def test_seven_tcp_one_udp(self):
        tcp = builtin_scenarios("tcp")
        assert [s.injection_state for s in tcp] == list(TCP_STATES)
        assert len(builtin_scenarios("udp")) == 1
        assert len(builtin_scenarios()) == 8

    def test_listen_steps(self):
        s = scenario_by_id("tcp-listen")
        assert [st.op for st in s.steps[:-1]] == ["socket", "bind", "listen"]

    def test_udp_steps(self):
        s = builtin_scenarios("udp")[0]
        assert [st.op for st in s.steps[:-1]] == ["socket", "bind"]

    def test_unknown(self):
        with pytest.raises(KeyError):
            scenario_by_id("tcp-time-wait")


class TestPrefix:
    @pytest.mark.parametrize("key", ["ipv4-tcp", "ipv6-tcp"])
    @pytest.mark.parametrize("scenario", builtin_scenarios("tcp"), ids=lambda s: s.id)
    def test_state_reached(self, scenario, key):
        t = builtin_template(key)
        stack = RefStack()
        ctx = run_prefix(scenario, stack, t)
        assert stack.inspect(f"tcp_state:port={ctx.local_port}") == scenario.injection_state
        r = stack.deliver(bind_mutant(ctx, t, MutationPlan()).data)
        assert not r.is_fault

    def test_established_context(self):
        ctx = run_prefix(scenario_by_id("tcp-established"), RefStack(), V4)
        assert ctx.ack == (initial_sequence(7777) + 1) & 0xFFFFFFFF
        assert ctx.seq == PEER_ISN + 1
        assert (ctx.local_port, ctx.remote_port) == (7777, 5555)

    def test_listen_has_no_seq_ack(self):
        ctx = run_prefix(scenario_by_id("tcp-listen"), RefStack(), V4)
        assert ctx.seq is None and ctx.ack is None
        assert "tcp.seq" not in ctx.bindings and "tcp.ack" not in ctx.bindings

    def test_repeatable(self):
        stack = RefStack()
        s = scenario_by_id("tcp-fin-wait-2")
        a = run_prefix(s, stack, V4)
        stack.reset()
        assert run_prefix(s, stack, V4) == a

    def test_template_protocol_mismatch(self):
        with pytest.raises(ValueError):
            run_prefix(scenario_by_id("tcp-listen"), RefStack(), builtin_template("ipv4-udp"))

    def test_rst_answering_target(self):
        class Rude(RefStack):
            def deliver(self, frame):
                super().deliver(frame)
                self.drain_outbound()
                t = V4.with_fields({"tcp.src_port": 7777, "tcp.dst_port": 5555, "tcp.flags": 0x14})
                self.outbound.append(encode(t).data)
                return DeliveryResult.processed()

        with pytest.raises(PrefixMismatch):
            run_prefix(scenario_by_id("tcp-established"), Rude(), V4)

    def test_silent_target_times_out(self):
        class Silent(RefStack):
            def drain_outbound(self):
                return []

        with pytest.raises(PrefixTimeout):
            run_prefix(scenario_by_id("tcp-established"), Silent(), V4, timeout=0.05)


class TestBindMutant:
    def test_identity_in_established_is_accepted(self):
        stack = RefStack()
        ctx = run_prefix(scenario_by_id("tcp-established"), stack, V4)
        frame = bind_mutant(ctx, V4, MutationPlan()).data
        seg = summarize_tcp(frame)
        assert (seg.seq, seg.ack, seg.flags) == (ctx.seq, ctx.ack, 0x10)
        assert stack.deliver(frame).outcome is Outcome.PROCESSED
        assert stack.drain_outbound() == []  # in-window: no RST, no challenge ACK

    def test_trigger_keeps_window(self):
        ctx = run_prefix(scenario_by_id("tcp-established"), RefStack(), V4)
        frame = bind_mutant(ctx, V4, MutationPlan((Replace("tcp", "data_offset", 15),))).data
        seg = summarize_tcp(frame)
        assert frame[34 + 12] >> 4 == 15 and seg.seq == ctx.seq and seg.ack == ctx.ack

    def test_plan_wins_over_binding(self):
        ctx = run_prefix(scenario_by_id("tcp-established"), RefStack(), V4)
        frame = bind_mutant(ctx, V4, MutationPlan((Replace("tcp", "seq", 0),))).data
        assert summarize_tcp(frame).seq == 0
        assert summarize_tcp(frame).ack == ctx.ack
