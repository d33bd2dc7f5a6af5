from __future__ import annotations

from functools import lru_cache
from importlib import resources

from .model import (
    Scenario, ScenarioError, Step, StepKind, format_flags, load_scenario, parse_flags,
    parse_scenario, parse_step,
)
from .runner import (
    PEER_ISN, InjectionContext, PrefixMismatch, PrefixTimeout, TcpSummary, bind_mutant,
    run_prefix, summarize_tcp,
)

# Injection states in the order scenarios are listed and run.
TCP_STATES = ("LISTEN", "SYN-SENT", "ESTABLISHED", "FIN-WAIT-1", "FIN-WAIT-2", "LAST-ACK", "CLOSE-WAIT")


@lru_cache(maxsize=None)
def _bundled() -> tuple[Scenario, ...]:
    data = resources.files(__package__) / "data"
    out = [parse_scenario(p.read_text(), p.name.rsplit(".", 1)[0])
           for p in data.iterdir() if p.name.endswith(".scn")]
    rank = {s: i for i, s in enumerate(TCP_STATES)}
    return tuple(sorted(out, key=lambda s: (s.protocol, rank.get(s.injection_state, 99), s.id)))


def builtin_scenarios(protocol: str | None = None) -> list[Scenario]:
    """Bundled scenarios, optionally only those for ``protocol`` ("tcp"/"udp")."""
    protocol = protocol.lower() if protocol else None
    return [s for s in _bundled() if protocol is None or s.protocol == protocol]


def scenario_by_id(sid: str) -> Scenario:
    for s in _bundled():
        if s.id == sid:
            return s
    raise KeyError(f"no builtin scenario {sid!r}")


__all__ = [
    "Scenario", "ScenarioError", "Step", "StepKind", "format_flags", "load_scenario", "parse_flags",
    "parse_scenario", "parse_step", "PEER_ISN", "InjectionContext", "PrefixMismatch",
    "PrefixTimeout", "TcpSummary", "bind_mutant", "run_prefix", "summarize_tcp", "TCP_STATES",
    "builtin_scenarios", "scenario_by_id",
]
