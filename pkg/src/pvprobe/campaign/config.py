"""Campaign configuration, loaded from TOML.

Example::

    protocols = ["ipv4", "ipv6", "tcp", "udp"]
    workers = 4
    deadline = 2.0
    output = "out/run1"

    [generator]
    max_entities = 2
    value_count = 4
    truncation = true

    [scenarios]
    include = ["all"]

    [target]
    kind = "refstack"          # or "agent" with address = "127.0.0.1:9100"

    [refstack]
    bugs = ["B1", "B2"]
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..generator import GeneratorConfig
from ..packet.template import BUILTIN_TEMPLATES
from ..refstack.bugs import BugSet
from ..scenario import builtin_scenarios


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TargetSpec:
    kind: str = "refstack"  # "refstack" (in-process) or "agent"
    bugs: tuple[str, ...] = ()
    address: str | None = None  # host:port for agents
    max_steps: int = 2000

    def __post_init__(self):
        if self.kind not in ("refstack", "agent"):
            raise ConfigError(f"unknown target kind {self.kind!r}")
        if self.kind == "agent" and not self.address:
            raise ConfigError("agent target needs target.address = \"host:port\"")
        try:
            object.__setattr__(self, "bugs", tuple(BugSet.parse(list(self.bugs)).tokens()))
        except KeyError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = (self.address or "").rpartition(":")
        if not host or not port.isdigit():
            raise ConfigError(f"bad agent address {self.address!r}")
        return host, int(port)


@dataclass(frozen=True)
class CampaignConfig:
    protocols: frozenset = frozenset({"ipv4", "ipv6", "tcp", "udp"})
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    scenarios: tuple[str, ...] = ("all",)
    templates: tuple[str, ...] | None = None  # default: every builtin template the protocols allow
    target: TargetSpec = field(default_factory=TargetSpec)
    workers: int = 1
    deadline: float = 2.0
    prefix_timeout: float = 2.0
    output: str | None = None
    fault_budget: int = 0  # stop after this many faulting test cases; 0 = run to the end
    checkpoint_every: int = 1000
    batch_size: int = 32

    def __post_init__(self):
        object.__setattr__(self, "protocols", frozenset(self.protocols))
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        if self.templates is not None:
            object.__setattr__(self, "templates", tuple(self.templates))
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.deadline <= 0:
            raise ConfigError("deadline must be > 0")
        if self.fault_budget < 0 or self.checkpoint_every < 1 or self.batch_size < 1:
            raise ConfigError("fault_budget >= 0, checkpoint_every >= 1 and batch_size >= 1 required")
        for key in self.template_keys():
            if key not in BUILTIN_TEMPLATES:
                raise ConfigError(f"unknown template {key!r}")
        known = {s.id for s in builtin_scenarios()}
        for sid in self.scenarios:
            if sid != "all" and sid not in known:
                raise ConfigError(f"unknown scenario {sid!r}")

    def template_keys(self) -> list[str]:
        if self.templates is not None:
            return list(self.templates)
        return [k for k in BUILTIN_TEMPLATES if set(k.split("-")) <= self.protocols]

    def scenario_set(self, protocol: str) -> list:
        chosen = builtin_scenarios(protocol)
        if "all" in self.scenarios:
            return chosen
        return [s for s in chosen if s.id in self.scenarios]

    def with_(self, **changes) -> "CampaignConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        g = self.generator
        return {
            "protocols": sorted(self.protocols), "templates": self.template_keys(),
            "generator": {"max_entities": g.max_entities, "value_count": g.value_count, "stride": g.stride,
                          "strides": dict(g.strides), "truncation": g.include_truncation,
                          "combine_truncation": g.combine_truncation, "include_reserved": g.include_reserved},
            "scenarios": list(self.scenarios),
            "target": {"kind": self.target.kind, "bugs": list(self.target.bugs), "address": self.target.address,
                       "max_steps": self.target.max_steps},
            "workers": self.workers, "deadline": self.deadline, "prefix_timeout": self.prefix_timeout,
            "output": self.output, "fault_budget": self.fault_budget,
            "checkpoint_every": self.checkpoint_every, "batch_size": self.batch_size,
        }


def _section(data: dict, name: str) -> dict:
    value = data.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a table")
    return value


def config_from_dict(data: dict, base_dir: Path | None = None) -> CampaignConfig:
    known = {"protocols", "generator", "scenarios", "templates", "target", "refstack", "workers",
             "deadline", "prefix_timeout", "output", "fault_budget", "checkpoint_every", "batch_size"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        protocols = frozenset(data.get("protocols", ["ipv4", "ipv6", "tcp", "udp"]))
        g = _section(data, "generator")
        generator = GeneratorConfig(
            max_entities=int(g.get("max_entities", 1)),
            value_count=int(g.get("value_count", 4)),
            stride=g.get("stride"),
            strides=dict(g.get("strides", {})),
            include_truncation=bool(g.get("truncation", True)),
            combine_truncation=bool(g.get("combine_truncation", True)),
            include_reserved=bool(g.get("include_reserved", False)),
            protocols=protocols,
        )
        sc = data.get("scenarios", ["all"])
        scenarios = tuple(sc.get("include", ["all"]) if isinstance(sc, dict) else sc)
        t = _section(data, "target")
        r = _section(data, "refstack")
        target = TargetSpec(kind=t.get("kind", "refstack"), bugs=tuple(r.get("bugs", ())),
                            address=t.get("address"), max_steps=int(r.get("max_steps", 2000)))
        output = data.get("output")
        if output is not None and base_dir is not None and not Path(output).is_absolute():
            output = str(base_dir / output)
        return CampaignConfig(
            protocols=protocols, generator=generator, scenarios=scenarios,
            templates=tuple(data["templates"]) if "templates" in data else None,
            target=target, workers=int(data.get("workers", 1)),
            deadline=float(data.get("deadline", 2.0)),
            prefix_timeout=float(data.get("prefix_timeout", 2.0)),
            output=output, fault_budget=int(data.get("fault_budget", 0)),
            checkpoint_every=int(data.get("checkpoint_every", 1000)),
            batch_size=int(data.get("batch_size", 32)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> CampaignConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data, base_dir=path.parent)
