"""Catalog of the validation checks the reference stack can be built without."""

from __future__ import annotations

from dataclasses import dataclass

from ..harness.guarded import FaultKind


@dataclass(frozen=True)
class SeededBug:
    id: str
    name: str
    pattern: str
    site: str
    required_state: str
    expected_fault_kind: FaultKind
    modeled_cve: str
    description: str

    @property
    def signature(self) -> tuple[str, str]:
        return (self.expected_fault_kind.value, self.site)


CATALOG = (
    SeededBug("B1", "DOFF-OOB", "missing_length_field_validation", "tcp_parse_options", "stateless",
              FaultKind.OOB_READ, "CVE-2018-16524 (FreeRTOS+TCP)",
              "TCP data offset is not checked against the segment length; the option walker "
              "runs past the received bytes."),
    SeededBug("B2", "MSS-DIV0", "missing_header_value_validation", "tcp_option_mss", "LISTEN, SYN-SENT",
              FaultKind.DIV_BY_ZERO, "CVE-2018-16523 (FreeRTOS+TCP); CVE-2023-35847 (PicoTCP)",
              "An MSS option of zero is accepted and used as a divisor when sizing the receive window."),
    SeededBug("B3", "OPTLEN-OOB", "missing_length_field_validation", "tcp_option_value", "stateless",
              FaultKind.OOB_READ, "CVE-2023-34100 (Contiki-NG); lwIP L1; CVE-2023-35848 (PicoTCP, two-option form)",
              "A TCP option's length byte is trusted past the end of the option area when copying the "
              "option body.  The two-option form only skips the check after the first option."),
    SeededBug("B4", "TRUNC-TCP-OOB", "missing_packet_size_validation", "tcp_input", "stateless",
              FaultKind.OOB_READ, "CVE-2018-16603 (FreeRTOS+TCP); CVE-2023-35846 (PicoTCP)",
              "The fixed 20-byte TCP header is read without checking the segment is that long."),
    SeededBug("B5", "LEN-UNDERFLOW", "missing_integer_wrap_validation", "ipv4_input", "stateless",
              FaultKind.INTEGER_WRAP_TRAP, "CVE-2018-16601 (FreeRTOS+TCP)",
              "IPv4 payload length is total length minus header length with no check that total "
              "length covers the header."),
    SeededBug("B6", "IP6EXT-OOB", "missing_length_field_validation", "ipv6_ext_header", "stateless",
              FaultKind.OOB_READ, "IPv6 extension header length CVEs (Contiki-NG, PicoTCP)",
              "An extension header's hdr_ext_len is trusted; its option walk leaves the packet."),
    SeededBug("B7", "OPT-INFLOOP", "infinite_loop", "tcp_parse_options", "stateless",
              FaultKind.HANG, "CVE-2020-24337 (PicoTCP)",
              "A TCP option with length zero makes no progress, so the option walker never ends."),
    SeededBug("B8", "STATEFUL-FLAGS-OOB", "missing_packet_size_validation", "tcp_fast_path", "ESTABLISHED",
              FaultKind.OOB_READ, "CVE-2023-37459 (Contiki-NG)",
              "The ESTABLISHED fast path reads the TCP flags byte before the segment length is checked."),
)

B3_VARIANTS = ("single", "two-option")


def seeded_bug_catalog() -> list[SeededBug]:
    return list(CATALOG)


def catalog_entry(bug_id: str) -> SeededBug:
    for bug in CATALOG:
        if bug.id == bug_id or bug.name == bug_id:
            return bug
    raise KeyError(f"unknown seeded bug {bug_id!r}")


@dataclass(frozen=True)
class BugSet:
    """Enabled bugs.  Tokens are catalog ids or names; ``all`` enables the
    whole catalog and ``B3:two-option`` selects the two-option form of B3."""

    enabled: frozenset = frozenset()
    b3_variant: str = "single"

    @classmethod
    def parse(cls, tokens) -> "BugSet":
        if isinstance(tokens, str):
            tokens = [t for t in tokens.replace(",", " ").split() if t]
        ids = set()
        variant = "single"
        for tok in tokens:
            if str(tok).strip() == "all":
                ids.update(b.id for b in CATALOG)
                continue
            base, _, form = str(tok).partition(":")
            bug = catalog_entry(base.strip())
            ids.add(bug.id)
            if form:
                if bug.id != "B3" or form not in B3_VARIANTS:
                    raise KeyError(f"unknown bug form {tok!r}")
                variant = form
        return cls(frozenset(ids), variant)

    @classmethod
    def all(cls) -> "BugSet":
        return cls(frozenset(b.id for b in CATALOG))

    def __contains__(self, bug_id: str) -> bool:
        return bug_id in self.enabled

    def tokens(self) -> list[str]:
        out = []
        for bug in CATALOG:
            if bug.id in self.enabled:
                out.append("B3:two-option" if bug.id == "B3" and self.b3_variant != "single" else bug.id)
        return out
