import json
from pathlib import Path

import pytest

from pvprobe.cli import main
from pvprobe.campaign import (
    CampaignConfig, ConfigError, FaultCollector, FaultEntry, ReplayMismatch, ReproducerError, TargetSpec,
    TestCase, case_id, config_from_dict, dedupe, load_config, parse_reproducer, replay, run_campaign,
    write_reproducer,
)
from pvprobe.generator import GeneratorConfig, count_plans
from pvprobe.harness import AgentServer, FaultKind, FaultReport
from pvprobe.mutation import MutationPlan
from pvprobe.packet import builtin_template
from pvprobe.refstack import RefStack, refstack_factory
from pvprobe.scenario import bind_mutant, run_prefix, scenario_by_id

SMALL = dict(templates=("ipv4-tcp",), scenarios=("tcp-listen", "tcp-established"))

TOML = """\
protocols = ["ipv4", "tcp"]
workers = 1
output = "out"

[generator]
max_entities = 1
value_count = 4

[scenarios]
include = ["tcp-listen", "tcp-established"]

[refstack]
bugs = ["B1", "B2", "B8"]
"""


def small(bugs=("B1", "B2", "B8"), **kw):
    opts = dict(SMALL, target=TargetSpec(bugs=bugs))
    opts.update(kw)
    return CampaignConfig(**opts)


class TestConfig:
    def test_load_toml(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text(TOML)
        cfg = load_config(path)
        assert cfg.template_keys() == ["ipv4-tcp"]
        assert cfg.generator.max_entities == 1
        assert cfg.target.bugs == ("B1", "B2", "B8")
        assert [s.id for s in cfg.scenario_set("tcp")] == ["tcp-listen", "tcp-established"]
        assert cfg.output == str(tmp_path / "out")

    def test_defaults(self):
        cfg = config_from_dict({})
        assert len(cfg.template_keys()) == 4 and cfg.workers == 1 and cfg.deadline == 2.0
        assert cfg.target.kind == "refstack" and cfg.target.bugs == ()

    @pytest.mark.parametrize("data", [
        {"workers": 0}, {"deadline": 0}, {"colour": "blue"}, {"refstack": {"bugs": ["B42"]}},
        {"scenarios": ["tcp-time-wait"]}, {"target": {"kind": "agent"}}, {"target": {"kind": "vm"}},
        {"templates": ["ipv4-sctp"]}, {"generator": {"value_count": 1}},
    ])
    def test_invalid(self, data):
        with pytest.raises(ConfigError):
            config_from_dict(data)

    def test_bad_toml(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text("workers = [")
        with pytest.raises(ConfigError):
            load_config(path)
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.toml")

    def test_agent_address(self):
        assert TargetSpec(kind="agent", address="127.0.0.1:9100").host_port == ("127.0.0.1", 9100)
        with pytest.raises(ConfigError):
            TargetSpec(kind="agent", address="nowhere").host_port


def report(kind, site, tc=None):
    return FaultReport(FaultKind(kind), site, {}, tc)


class TestDedupe:
    def test_same_signature_merges(self):
        out = dedupe([report("oob_read", "s", "a"), report("oob_read", "s", "b")])
        assert list(out) == [("oob_read", "s")]
        assert out[("oob_read", "s")].count == 2
        assert out[("oob_read", "s")].report.test_case_id == "a"

    def test_kind_distinguishes(self):
        assert len(dedupe([report("oob_read", "s"), report("oob_write", "s")])) == 2

    def test_empty(self):
        assert dedupe([]) == {}

    def test_order_key_picks_earliest(self):
        faults = [report("hang", "x", "late"), report("hang", "x", "early")]
        out = dedupe(faults, order_key=lambda r: r.test_case_id == "late")
        assert out[("hang", "x")].report.test_case_id == "early"

    def test_collector_merge_is_order_independent(self):
        a, b = FaultCollector(), FaultCollector()
        e1 = FaultEntry(report("oob_read", "s", "1"), 1, (0, 1))
        e2 = FaultEntry(report("oob_read", "s", "2"), 3, (0, 0))
        a.add(e1)
        a.add(e2)
        b.add(FaultEntry(e2.report, 3, (0, 0)))
        b.add(FaultEntry(e1.report, 1, (0, 1)))
        assert [(e.count, e.report.test_case_id) for e in a.sorted()] == \
            [(e.count, e.report.test_case_id) for e in b.sorted()] == [(4, "2")]

    def test_case_id(self):
        assert case_id("ipv4-tcp", 17, "tcp-listen") == "ipv4-tcp/17/tcp-listen"


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    return run_campaign(small(output=str(out))), out


class TestRunCampaign:
    def test_signatures(self, small_run):
        rep, _ = small_run
        assert rep.signatures() == {("oob_read", "tcp_parse_options"), ("div_by_zero", "tcp_option_mss"),
                                    ("oob_read", "tcp_fast_path")}
        assert rep.exit_code == 1

    def test_totals_exact(self, small_run):
        rep, _ = small_run
        t = rep.templates["ipv4-tcp"]
        assert t["count_plans"] == count_plans(builtin_template("ipv4-tcp"), GeneratorConfig())
        assert rep.total_cases == rep.expected_cases == (t["count_plans"] - t["suppressed"]) * 2
        assert sum(rep.per_level.values()) == rep.total_cases

    def test_b8_only_under_established(self, small_run):
        rep, _ = small_run
        (entry,) = [e for e in rep.unique_faults if e.report.site == "tcp_fast_path"]
        assert entry.test_case.scenario_id == "tcp-established"
        rows = [r for r in rep.fault_rows if r[2] == "tcp_fast_path"]
        assert rows and all(r[3] == "tcp-established" for r in rows)

    def test_report_files(self, small_run):
        _, out = small_run
        data = json.loads((out / "report.json").read_text())
        assert len(data["unique_faults"]) == 3
        assert (out / "report.txt").read_text().startswith("pvprobe campaign report")
        assert (out / "faults.csv").read_text().splitlines()[0] == "test_case_id,kind,site,scenario,level,plan"
        for name in ("outcomes_by_scenario.png", "faults_by_signature.png"):
            assert (out / "figures" / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_reproducers_replay(self, small_run):
        rep, _ = small_run
        for e in rep.unique_faults:
            result = replay(e.reproducer)
            assert result.matches and result.observed == e.signature

    def test_worker_invariance(self, small_run):
        rep, _ = small_run
        parallel = run_campaign(small(workers=2))
        assert parallel.signatures() == rep.signatures()
        assert parallel.total_cases == rep.total_cases
        assert [e.report.test_case_id for e in parallel.unique_faults] == \
            [e.report.test_case_id for e in rep.unique_faults]

    def test_baseline_clean(self):
        rep = run_campaign(CampaignConfig())
        assert rep.unique_faults == [] and rep.exit_code == 0 and rep.prefix_errors == 0


class TestStopAndResume:
    def test_fault_budget(self):
        rep = run_campaign(small(fault_budget=1, batch_size=8))
        assert rep.stopped == "fault_budget"
        assert rep.faulting_cases >= 1 and rep.total_cases < rep.expected_cases

    def test_resume_after_budget_stop(self, tmp_path, small_run):
        full, _ = small_run
        cfg = small(output=str(tmp_path), checkpoint_every=50)
        first = run_campaign(cfg.with_(fault_budget=1), figures=False)
        assert first.stopped == "fault_budget"
        ckpt = json.loads((tmp_path / "checkpoint.json").read_text())
        assert ckpt["state"]["cases"] == first.total_cases and ckpt["state"]["next_batch"] > 0
        resumed = run_campaign(cfg, figures=False)
        assert resumed.total_cases == full.total_cases
        assert resumed.signatures() == full.signatures()

    def test_no_resume_starts_over(self, tmp_path):
        cfg = small(output=str(tmp_path), fault_budget=1)
        run_campaign(cfg, figures=False)
        again = run_campaign(cfg.with_(fault_budget=0), resume=False, figures=False)
        assert again.total_cases == again.expected_cases


def identity_case(sid="tcp-listen"):
    t = builtin_template("ipv4-tcp")
    ctx = run_prefix(scenario_by_id(sid), RefStack(), t)
    frame = bind_mutant(ctx, t, MutationPlan()).data
    return TestCase(case_id("ipv4-tcp", 0, sid), "ipv4-tcp", sid, "", frame.hex(), 0, 0)


class TestReproducer:
    def test_identity_is_clean(self, tmp_path):
        path = write_reproducer(identity_case(), scenario_by_id("tcp-listen"), tmp_path / "id.repro", ["all"])
        result = replay(path)
        assert result.observed is None and result.expected is None and result.matches

    def test_text_roundtrip(self, small_run):
        rep, _ = small_run
        text = Path(rep.unique_faults[0].reproducer).read_text()
        assert parse_reproducer(text).to_text() == text

    def test_tampered_frame(self, small_run, tmp_path):
        rep, _ = small_run
        text = Path(rep.unique_faults[0].reproducer).read_text()
        head, frame = text.split("[frame]\n")
        tampered = tmp_path / "t.repro"
        tampered.write_text(head + "[frame]\n" + ("ff" + frame[2:]))
        with pytest.raises(ReplayMismatch, match="frame/plan mismatch"):
            replay(tampered)

    def test_malformed(self):
        with pytest.raises(ReproducerError):
            parse_reproducer("template ipv4-tcp\n[plan]\n")


class TestAgentCampaign:
    def test_agent_matches_in_process(self, small_run):
        rep, _ = small_run
        server = AgentServer(refstack_factory).start()
        try:
            host, port = server.address
            cfg = small(target=TargetSpec(kind="agent", address=f"{host}:{port}", bugs=("B1", "B2", "B8")))
            remote = run_campaign(cfg)
        finally:
            server.shutdown()
            server.server_close()
        assert remote.signatures() == rep.signatures()
        assert remote.total_cases == rep.total_cases

    def test_unreachable_agent(self):
        from pvprobe.harness import TargetUnreachable
        with pytest.raises(TargetUnreachable):
            run_campaign(small(target=TargetSpec(kind="agent", address="127.0.0.1:1")))


class TestCli:
    def _config(self, tmp_path, bugs='["B1", "B2", "B8"]'):
        path = tmp_path / "c.toml"
        path.write_text(TOML.replace('["B1", "B2", "B8"]', bugs))
        return path

    def test_run_with_faults(self, tmp_path, capsys):
        assert main(["campaign", "run", "--config", str(self._config(tmp_path)), "--no-figures"]) == 1
        assert "unique faults: 3" in capsys.readouterr().out
        assert (tmp_path / "out" / "report.json").exists()

    def test_run_clean(self, tmp_path):
        assert main(["campaign", "run", "--config", str(self._config(tmp_path, "[]")), "--no-figures"]) == 0

    def test_bad_config(self, tmp_path, capsys):
        path = tmp_path / "bad.toml"
        path.write_text("workers = 0\n")
        assert main(["campaign", "run", "--config", str(path)]) == 2
        assert "error:" in capsys.readouterr().err

    def test_count(self, tmp_path, capsys):
        assert main(["campaign", "count", "--config", str(self._config(tmp_path)), "--exact"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "template,count_plans,emitted,suppressed,scenarios,test_cases"
        key, plans, emitted, suppressed, scen, cases = lines[1].split(",")
        assert int(plans) == int(emitted) + int(suppressed) and int(cases) == int(emitted) * int(scen)
        assert lines[-1].endswith("," + cases)

    def test_replay_verbs(self, small_run, tmp_path, capsys):
        rep, _ = small_run
        path = rep.unique_faults[0].reproducer
        assert main(["replay", path]) == 1
        kind, site = rep.unique_faults[0].signature
        assert f"fault: {kind} at {site}" in capsys.readouterr().out
        assert main(["replay", path, "--bugs"]) == 2  # expected fault absent on a clean stack
        ident = write_reproducer(identity_case(), scenario_by_id("tcp-listen"), tmp_path / "i.repro")
        assert main(["replay", str(ident)]) == 0

    def test_lists(self, capsys):
        assert main(["scenarios", "list", "--protocol", "tcp"]) == 0
        assert len(capsys.readouterr().out.splitlines()) == 8
        assert main(["bugs", "list"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert len(out) == 9 and out[1].startswith("B1,")
