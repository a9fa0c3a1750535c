"""Reference experimental designs used for parameter counts and studies."""

from __future__ import annotations

from .factors import Factor, FactorKind

__all__ = ["BENCHMARK_DESIGNS", "design_factors"]

#: Five benchmark designs of increasing size.  Each maps a factor name to
#: its taxonomy kind and level count.
BENCHMARK_DESIGNS = {
    "M1": (("Ap", "P", 2), ("As", "S", 2), ("Am", "M", 2)),
    "M2": (("Ap", "P", 3), ("As", "S", 3), ("Am", "M", 3)),
    "M3": (("Ap", "P", 3), ("As", "S", 3), ("Am1", "M", 3), ("Am2", "M", 2)),
    "M4": (("Ap", "P", 3), ("As", "S", 3), ("Am", "M", 3), ("Aps", "PS", 2)),
    "M5": (
        ("Ap", "P", 3),
        ("As", "S", 3),
        ("Am1", "M", 3),
        ("Am2", "M", 2),
        ("Aps", "PS", 2),
        ("Ao", "O", 2),
    ),
}


def design_factors(name: str) -> tuple[Factor, ...]:
    """The factor tuple of a benchmark design (``M1`` .. ``M5``)."""
    try:
        spec = BENCHMARK_DESIGNS[name]
    except KeyError:
        raise KeyError(f"unknown design {name!r}; choose from {sorted(BENCHMARK_DESIGNS)}") from None
    return tuple(Factor(n, FactorKind(k), lv) for n, k, lv in spec)
