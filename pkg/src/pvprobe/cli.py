"""Command line: ``pvprobe campaign run|count``, ``replay``, ``scenarios list``,
``bugs list`` and ``agent``.

Exit codes: 0 clean, 1 faults found, 2 configuration or target error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .campaign import (
    ConfigError, ReplayMismatch, ReproducerError, load_config, replay, run_campaign,
)
from .generator import count_plans, generate
from .harness.target import TargetUnreachable
from .packet import builtin_template
from .refstack import refstack_factory, seeded_bug_catalog
from .scenario import builtin_scenarios

log = logging.getLogger("pvprobe")

EXIT_CLEAN, EXIT_FAULTS, EXIT_ERROR = 0, 1, 2


def _campaign_run(args) -> int:
    config = load_config(args.config)
    changes = {}
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.output is not None:
        changes["output"] = args.output
    if changes:
        config = config.with_(**changes)

    def progress(state):
        log.info("%d test cases, %d unique faults", state.cases, len(state.collector.entries))

    report = run_campaign(config, resume=not args.no_resume, figures=not args.no_figures, progress=progress)
    sys.stdout.write(report.to_text())
    if config.output:
        print(f"report written to {config.output}")
    return report.exit_code


def _campaign_count(args) -> int:
    config = load_config(args.config)
    cols = ["template", "count_plans", "scenarios", "test_cases"]
    if args.exact:
        cols[2:2] = ["emitted", "suppressed"]
    print(",".join(cols))
    total = 0
    for key in config.template_keys():
        template = builtin_template(key)
        n_scen = len(config.scenario_set(template.transport))
        row = [key, count_plans(template, config.generator)]
        if args.exact:
            stream = generate(template, config.generator)
            for _ in stream:
                pass
            row += [stream.emitted, stream.suppressed]
            cases = stream.emitted * n_scen
        else:
            cases = row[1] * n_scen
        row += [n_scen, cases]
        total += cases
        print(",".join(str(v) for v in row))
    print("total" + "," * (len(cols) - 1) + str(total))
    return EXIT_CLEAN


def _replay(args) -> int:
    target = None
    if args.bugs is not None:
        from .refstack import RefStack
        target = RefStack(args.bugs)
    result = replay(args.script, target)
    observed = result.observed
    print(f"outcome: {result.result.outcome.value}"
          + (f" ({result.result.reason})" if result.result.reason else ""))
    if observed:
        print(f"fault: {observed[0]} at {observed[1]}")
    if result.expected and not result.matches:
        exp = result.expected
        print(f"signature mismatch: expected {exp[0]} at {exp[1]}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_FAULTS if observed else EXIT_CLEAN


def _scenarios_list(args) -> int:
    print("id,protocol,state,steps")
    for s in builtin_scenarios(args.protocol):
        print(f"{s.id},{s.protocol},{s.injection_state},{len(s.steps)}")
    return EXIT_CLEAN


def _bugs_list(args) -> int:
    print("id,name,pattern,expected_fault,site,required_state,modeled_cve")
    for b in seeded_bug_catalog():
        print(f'{b.id},{b.name},{b.pattern},{b.expected_fault_kind.value},{b.site},"{b.required_state}",'
              f'"{b.modeled_cve}"')
    return EXIT_CLEAN


def _agent(args) -> int:
    from .harness.agent import AgentServer, serve_stream

    def factory(config: dict):
        merged = {"bugs": args.bugs or []}
        merged.update(config)
        return refstack_factory(merged)

    if args.stdio:
        serve_stream(factory, sys.stdin.buffer, sys.stdout.buffer)
        return EXIT_CLEAN
    server = AgentServer(factory, args.host, args.port)
    host, port = server.address
    print(f"agent listening on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_CLEAN


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pvprobe", description="Systematic packet-validation testing.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    camp = sub.add_parser("campaign", help="run or size a campaign").add_subparsers(dest="action", required=True)
    run = camp.add_parser("run", help="execute a campaign")
    run.add_argument("--config", required=True)
    run.add_argument("--workers", type=int)
    run.add_argument("--output", help="override the output directory")
    run.add_argument("--no-resume", action="store_true", help="ignore an existing checkpoint")
    run.add_argument("--no-figures", action="store_true")
    run.set_defaults(func=_campaign_run)
    cnt = camp.add_parser("count", help="print plan and test case counts")
    cnt.add_argument("--config", required=True)
    cnt.add_argument("--exact", action="store_true", help="materialize streams to count suppressed duplicates")
    cnt.set_defaults(func=_campaign_count)

    rep = sub.add_parser("replay", help="re-run a reproducer script")
    rep.add_argument("script")
    rep.add_argument("--bugs", nargs="*", help="override the bug set recorded in the script")
    rep.set_defaults(func=_replay)

    sc = sub.add_parser("scenarios").add_subparsers(dest="action", required=True)
    sl = sc.add_parser("list")
    sl.add_argument("--protocol", choices=["tcp", "udp"])
    sl.set_defaults(func=_scenarios_list)

    bg = sub.add_parser("bugs").add_subparsers(dest="action", required=True)
    bg.add_parser("list").set_defaults(func=_bugs_list)

    ag = sub.add_parser("agent", help="serve a reference stack over the agent protocol")
    ag.add_argument("--host", default="127.0.0.1")
    ag.add_argument("--port", type=int, default=9100)
    ag.add_argument("--stdio", action="store_true", help="speak the protocol on stdin/stdout")
    ag.add_argument("--bugs", nargs="*", help="bugs enabled unless INIT overrides them")
    ag.set_defaults(func=_agent)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, TargetUnreachable, ReproducerError, ReplayMismatch, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
