from .bugs import B3_VARIANTS, CATALOG, BugSet, SeededBug, catalog_entry, seeded_bug_catalog
from .stack import RefStack, initial_sequence


def refstack_factory(config: dict) -> RefStack:
    """Build a stack from an agent INIT config: ``{"bugs": [...], "deadline": s, "max_steps": n}``."""
    kwargs = {k: config[k] for k in ("deadline", "max_steps") if k in config}
    return RefStack(config.get("bugs", ()), **kwargs)


__all__ = ["B3_VARIANTS", "CATALOG", "BugSet", "SeededBug", "catalog_entry", "seeded_bug_catalog",
           "RefStack", "initial_sequence", "refstack_factory"]
