"""Factor taxonomy, grouping units, random terms and model specifications.

Experiments that cross participants with stimuli distinguish five kinds of
categorical predictors, named after what a level describes:

* ``P``  -- a feature of the participant (sex, assigned group, ...)
* ``S``  -- a feature of the stimulus (valence, word frequency, ...)
* ``M``  -- a feature of the experimental manipulation, varied freely
  within every participant-stimulus pair
* ``PS`` -- a feature fixed for each particular participant-stimulus
  pair (typical for counterbalanced presentation constraints)
* ``O``  -- a feature of the single observation (trial rank, ...)

A random interaction between a grouping unit (participants, stimuli, or
their pairing) and a factor is estimable only when the unit is observed
in several levels of that factor, which yields a fixed estimability
pattern over the five kinds; :func:`estimable` encodes it.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

from .errors import (
    DuplicateTermError,
    EstimabilityError,
)

__all__ = [
    "FactorKind",
    "Factor",
    "UnitTag",
    "GroupingUnit",
    "RandomTerm",
    "ModelSpec",
    "estimable",
    "saturated_terms",
]


class FactorKind(enum.Enum):
    P = "P"
    S = "S"
    M = "M"
    PS = "PS"
    O = "O"


class UnitTag(enum.Enum):
    PARTICIPANT = "participant"
    STIMULUS = "stimulus"
    PAIR = "participant:stimulus"


@dataclass(frozen=True)
class Factor:
    """A named categorical predictor with a taxonomy kind and level count."""

    name: str
    kind: FactorKind
    n_levels: int

    def __post_init__(self):
        if self.n_levels < 2:
            raise ValueError(f"factor {self.name!r} needs >= 2 levels, got {self.n_levels}")
        if not isinstance(self.kind, FactorKind):
            object.__setattr__(self, "kind", FactorKind(self.kind))


@dataclass(frozen=True)
class GroupingUnit:
    """A sampled entity whose effects are modelled as random draws.

    ``PAIR`` is the crossing of the other two; its level set is the set of
    participant-stimulus pairs observed in the data.
    """

    tag: UnitTag
    id_column: str

    @staticmethod
    def participant(id_column: str = "PT") -> "GroupingUnit":
        return GroupingUnit(UnitTag.PARTICIPANT, id_column)

    @staticmethod
    def stimulus(id_column: str = "SM") -> "GroupingUnit":
        return GroupingUnit(UnitTag.STIMULUS, id_column)

    @staticmethod
    def pair(participant_column: str = "PT", stimulus_column: str = "SM") -> "GroupingUnit":
        return GroupingUnit(UnitTag.PAIR, f"{participant_column}:{stimulus_column}")


#: Factor kinds whose interaction with each unit is estimable. Intercepts
#: (no factor) are always estimable for all three units.
_ESTIMABLE = {
    UnitTag.PARTICIPANT: frozenset({FactorKind.S, FactorKind.PS, FactorKind.M, FactorKind.O}),
    UnitTag.STIMULUS: frozenset({FactorKind.P, FactorKind.PS, FactorKind.M, FactorKind.O}),
    UnitTag.PAIR: frozenset({FactorKind.M, FactorKind.O}),
}


def estimable(unit: GroupingUnit | UnitTag, kind: FactorKind | None) -> bool:
    """Whether the random interaction of ``unit`` with a factor kind is estimable.

    ``kind is None`` denotes the intercept, which every unit allows.
    """
    tag = unit.tag if isinstance(unit, GroupingUnit) else unit
    if kind is None:
        return True
    return FactorKind(kind) in _ESTIMABLE[tag]


class RandomTerm:
    """One variance component: a grouping unit crossed with zero or more factors.

    ``constrained`` marks sum-to-zero orthonormal coding with a shared
    variance per term (the spherical convention); unconstrained terms use
    overparametrized level-indicator coding.  Pure intercepts have no
    factor coding, so their flag is normalized to ``False``.
    """

    __slots__ = ("unit", "factors", "constrained", "_key")

    def __init__(self, unit: GroupingUnit, factors=(), constrained: bool = False):
        factors = tuple(factors)
        names = [f.name for f in factors]
        if len(set(names)) != len(names):
            raise DuplicateTermError(f"repeated factor in random term: {names}")
        for f in factors:
            if not estimable(unit, f.kind):
                raise EstimabilityError(
                    f"factor {f.name!r} of kind {f.kind.value} cannot interact "
                    f"with unit {unit.tag.value!r}"
                )
        self.unit = unit
        self.factors = factors
        self.constrained = bool(constrained) and bool(factors)
        self._key = (unit.tag, frozenset(names), self.constrained)

    @property
    def order(self) -> int:
        return len(self.factors)

    def label(self) -> str:
        parts = [self.unit.id_column] + [f.name for f in self.factors]
        return ":".join(parts)

    def __eq__(self, other):
        return isinstance(other, RandomTerm) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        tag = "~" if self.constrained else ""
        return f"RandomTerm({tag}{self.label()})"


class ModelSpec:
    """Parsed model: response, fixed factors (full factorial) and random terms.

    The fixed part is always the full factorial over ``fixed_factors``; the
    interaction structure therefore needs no separate representation.
    """

    __slots__ = ("response", "fixed_factors", "random_terms")

    def __init__(self, response: str, fixed_factors=(), random_terms=()):
        self.response = response
        self.fixed_factors = tuple(fixed_factors)
        terms = tuple(random_terms)
        seen = set()
        for t in terms:
            if t in seen:
                raise DuplicateTermError(f"duplicate random term {t.label()!r}")
            seen.add(t)
        self.random_terms = terms

    def fixed_terms(self):
        """All fixed-effect terms (subsets of the factors), intercept first.

        Ordered by interaction order, then by factor position, matching the
        column layout of the fixed design matrix.
        """
        out = [()]
        k = len(self.fixed_factors)
        for size in range(1, k + 1):
            out.extend(itertools.combinations(self.fixed_factors, size))
        return out

    def factor_by_name(self, name: str) -> Factor:
        for f in self.fixed_factors:
            if f.name == name:
                return f
        raise KeyError(name)

    def __eq__(self, other):
        return (
            isinstance(other, ModelSpec)
            and self.response == other.response
            and set(f.name for f in self.fixed_factors) == set(f.name for f in other.fixed_factors)
            and set(self.random_terms) == set(other.random_terms)
        )

    def __hash__(self):
        return hash(
            (
                self.response,
                frozenset(f.name for f in self.fixed_factors),
                frozenset(self.random_terms),
            )
        )

    def __repr__(self):
        return f"ModelSpec({self.render()!r})"

    def render(self) -> str:
        from .formula import render

        return render(self)


def _estimable_subsets(unit: GroupingUnit, design_factors):
    allowed = [f for f in design_factors if estimable(unit, f.kind)]
    for size in range(len(allowed) + 1):
        yield from itertools.combinations(allowed, size)


def saturated_terms(
    design_factors,
    include_ps: bool = True,
    constrained: bool = True,
    participant_column: str = "PT",
    stimulus_column: str = "SM",
):
    """All estimable random terms of a design, one per variance component.

    Every subset of estimable factors is crossed with each unit.  For the
    participant:stimulus pairing the highest interaction (the full set of
    its estimable factors) is confounded with the residual when pairs are
    not replicated, so it is excluded; with no within-pair factors at all
    the pair intercept itself is confounded and the pairing drops out.
    """
    design_factors = tuple(design_factors)
    pt = GroupingUnit.participant(participant_column)
    sm = GroupingUnit.stimulus(stimulus_column)
    terms = [RandomTerm(pt, fs, constrained) for fs in _estimable_subsets(pt, design_factors)]
    terms += [RandomTerm(sm, fs, constrained) for fs in _estimable_subsets(sm, design_factors)]
    if include_ps:
        ps = GroupingUnit.pair(participant_column, stimulus_column)
        confounded = frozenset(f.name for f in design_factors if estimable(ps, f.kind))
        terms += [
            RandomTerm(ps, fs, constrained)
            for fs in _estimable_subsets(ps, design_factors)
            if frozenset(f.name for f in fs) != confounded
        ]
    return terms
