"""Parser and renderer for the model mini-language.

The language follows the familiar bar notation for random terms and adds a
three-part form for constrained (shared-variance, orthonormally coded)
terms::

    y ~ Ap*As*Am + (1|PT) + (1|PT:As) + (As*Am|PT) + (As*Am||PT) + (1|PT|As*Am)

* ``(1|U)``            random intercept for unit ``U``
* ``(1|U:A:B)``        one unconstrained term (level-indicator coding)
* ``(expr|U)``         intercept plus one unconstrained term per element of
  the expansion of ``expr`` (``A*B`` expands to ``A + B + A:B``); the
  single bar hints at a correlated block, the double bar at independent
  ones -- which of the two applies is decided by the covariance family at
  fitting time, the term set is identical
* ``(1|U|expr)``       intercept plus one constrained term per element

``U`` is a participant or stimulus identifier, or their pairing written
``PT:SM``.  The fixed part is interpreted as the full factorial over all
factors it mentions.  Factors used in random terms must also appear in
the fixed part.  The pairing term that would be confounded with the
residual (its factor set covering every within-pair factor of the model)
is rejected.
"""

from __future__ import annotations

import re

from .errors import (
    EstimabilityError,
    FormulaSyntaxError,
    MissingFixedFactorError,
    UnknownIdentifierError,
)
from .factors import Factor, GroupingUnit, ModelSpec, RandomTerm, UnitTag, estimable

__all__ = ["parse_formula", "render"]

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<ident>[A-Za-z_][A-Za-z0-9_.]*)|(?P<one>1)|(?P<op>\|\||[~+*:|()]))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            raise FormulaSyntaxError(f"unexpected character {stripped[0]!r}", pos)
        if m.group("ident"):
            tokens.append(("ident", m.group("ident"), m.start("ident")))
        elif m.group("one"):
            tokens.append(("one", "1", m.start("one")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, factor_table, participant, stimulus):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.factor_table = factor_table
        self.participant = participant
        self.stimulus = stimulus

    # -- token plumbing ----------------------------------------------------

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, value, pos = self.next()
        if kind != "op" or value != op:
            raise FormulaSyntaxError(f"expected {op!r}, found {value or 'end of input'!r}", pos)

    # -- grammar -----------------------------------------------------------

    def parse(self):
        kind, response, pos = self.next()
        if kind != "ident":
            raise FormulaSyntaxError("formula must start with the response identifier", pos)
        self.expect_op("~")
        fixed_names: list[str] = []
        random_parts = []
        while True:
            kind, value, pos = self.peek()
            if kind == "op" and value == "(":
                random_parts.append(self.parse_random_part())
            elif kind == "ident":
                for name in self.parse_fixed_term():
                    if name not in fixed_names:
                        fixed_names.append(name)
            elif kind == "one":
                self.next()
            else:
                raise FormulaSyntaxError(
                    f"expected a term, found {value or 'end of input'!r}", pos
                )
            kind, value, pos = self.peek()
            if kind == "end":
                break
            if kind == "op" and value == "+":
                self.next()
                continue
            raise FormulaSyntaxError(f"expected '+', found {value!r}", pos)
        return response, fixed_names, random_parts

    def parse_fixed_term(self):
        names = [self.parse_factor_name()]
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in ("*", ":"):
                self.next()
                names.append(self.parse_factor_name())
            else:
                return names

    def parse_factor_name(self):
        kind, value, pos = self.next()
        if kind != "ident":
            raise FormulaSyntaxError(f"expected an identifier, found {value or 'end of input'!r}", pos)
        if value in (self.participant, self.stimulus):
            raise FormulaSyntaxError(
                f"grouping unit {value!r} cannot appear in the fixed part", pos
            )
        if value not in self.factor_table:
            raise UnknownIdentifierError(f"unknown factor {value!r}")
        return value

    def parse_expr(self):
        """Sum of factor terms; returns a list of expansion sets (tuples of names)."""
        sets: list[tuple[str, ...]] = []
        while True:
            for group in self.parse_term_expansion():
                if group not in sets:
                    sets.append(group)
            kind, value, _ = self.peek()
            if kind == "op" and value == "+":
                self.next()
                continue
            return sets

    def parse_term_expansion(self):
        """Expansion of one ``A*B:C`` item; ``:`` binds tighter than ``*``."""
        groups = [[self.parse_factor_name()]]
        ops = []
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in ("*", ":"):
                self.next()
                name = self.parse_factor_name()
                if value == ":":
                    groups[-1].append(name)
                else:
                    groups.append([name])
                ops.append(value)
            else:
                break
        if len(groups) == 1:
            return [tuple(groups[0])]
        out = []
        for mask in range(1, 1 << len(groups)):
            names: list[str] = []
            for g, group in enumerate(groups):
                if mask >> g & 1:
                    names.extend(group)
            out.append(tuple(dict.fromkeys(names)))
        return out

    def parse_random_part(self):
        """One parenthesized random-effects specification."""
        self.expect_op("(")
        kind, value, pos = self.peek()
        if kind == "one":
            self.next()
            bar_kind, bar, bar_pos = self.next()
            if bar_kind != "op" or bar not in ("|", "||"):
                raise FormulaSyntaxError(f"expected '|', found {bar or 'end of input'!r}", bar_pos)
            unit, chain_factors = self.parse_unit_chain()
            kind, value, pos = self.peek()
            if kind == "op" and value == "|":
                if chain_factors:
                    raise FormulaSyntaxError(
                        "constrained form takes a bare grouping unit before the second bar", pos
                    )
                self.next()
                sets = self.parse_expr()
                self.expect_op(")")
                return ("constrained", unit, sets)
            self.expect_op(")")
            return ("plain", unit, chain_factors)
        sets = self.parse_expr()
        bar_kind, bar, bar_pos = self.next()
        if bar_kind != "op" or bar not in ("|", "||"):
            raise FormulaSyntaxError(f"expected '|' or '||', found {bar or 'end of input'!r}", bar_pos)
        unit, chain_factors = self.parse_unit_chain()
        if chain_factors:
            raise FormulaSyntaxError("factors cannot follow the grouping unit here", bar_pos)
        self.expect_op(")")
        return ("expanded", unit, sets)

    def parse_unit_chain(self):
        """Grouping unit, optionally extended with ``:factor`` components."""
        kind, first, pos = self.next()
        if kind != "ident" or first not in (self.participant, self.stimulus):
            raise FormulaSyntaxError(
                f"expected a grouping unit, found {first or 'end of input'!r}", pos
            )
        names = [first]
        factor_names: list[str] = []
        while True:
            kind, value, _ = self.peek()
            if kind != "op" or value != ":":
                break
            self.next()
            kind, value, pos = self.next()
            if kind != "ident":
                raise FormulaSyntaxError(f"expected an identifier, found {value or 'end of input'!r}", pos)
            if value in (self.participant, self.stimulus):
                if factor_names or len(names) > 1:
                    raise FormulaSyntaxError("grouping unit must lead the term", pos)
                names.append(value)
            else:
                if value not in self.factor_table:
                    raise UnknownIdentifierError(f"unknown factor {value!r}")
                factor_names.append(value)
        if len(names) == 2:
            unit = GroupingUnit.pair(self.participant, self.stimulus)
        elif names[0] == self.participant:
            unit = GroupingUnit.participant(self.participant)
        else:
            unit = GroupingUnit.stimulus(self.stimulus)
        return unit, factor_names


def parse_formula(
    text: str,
    factor_table: dict[str, Factor],
    participant: str = "PT",
    stimulus: str = "SM",
) -> ModelSpec:
    """Parse a model formula against a table of declared factors.

    Factor kinds come from ``factor_table``; ``participant`` and
    ``stimulus`` name the grouping-unit identifiers.
    """
    parser = _Parser(text, factor_table, participant, stimulus)
    response, fixed_names, random_parts = parser.parse()
    if response in factor_table or response in (participant, stimulus):
        raise FormulaSyntaxError("response identifier reused on the right-hand side", 0)

    fixed = tuple(factor_table[n] for n in fixed_names)
    terms: list[RandomTerm] = []
    for form, unit, payload in random_parts:
        if form == "plain":
            factor_sets = [tuple(payload)] if payload else [()]
            constrained = False
        elif form == "expanded":
            factor_sets = [()] + [s for s in payload]
            constrained = False
        else:
            factor_sets = [()] + [s for s in payload]
            constrained = True
        for names in factor_sets:
            for n in names:
                if n not in fixed_names:
                    raise MissingFixedFactorError(
                        f"factor {n!r} appears in a random term but not in the fixed part"
                    )
            term = RandomTerm(unit, tuple(factor_table[n] for n in names), constrained)
            terms.append(term)

    spec = ModelSpec(response, fixed, terms)
    _reject_confounded_pair_terms(spec)
    return spec


def _reject_confounded_pair_terms(spec: ModelSpec) -> None:
    pair_unit = UnitTag.PAIR
    within_pair = frozenset(
        f.name for f in spec.fixed_factors if estimable(pair_unit, f.kind)
    )
    for term in spec.random_terms:
        if term.unit.tag is not pair_unit:
            continue
        if frozenset(f.name for f in term.factors) == within_pair:
            raise EstimabilityError(
                f"random term {term.label()!r} is confounded with the residual "
                "(pairs are not replicated)"
            )


def render(spec: ModelSpec) -> str:
    """Canonical formula text; parses back to an equal :class:`ModelSpec`."""
    fixed = "*".join(f.name for f in spec.fixed_factors) or "1"
    parts = [f"{spec.response} ~ {fixed}"]

    constrained_by_unit: dict = {}
    ordered_units = []
    for term in spec.random_terms:
        if term.constrained or (
            not term.factors and _has_constrained_siblings(spec, term)
        ):
            group = constrained_by_unit.setdefault(term.unit, [])
            if term.unit not in ordered_units:
                ordered_units.append(term.unit)
            group.append(term)

    emitted = set()
    for term in spec.random_terms:
        if term in emitted:
            continue
        if term.unit in constrained_by_unit and term in constrained_by_unit[term.unit]:
            group = constrained_by_unit[term.unit]
            emitted.update(group)
            if not any(t.factors == () for t in group):
                raise ValueError(
                    f"constrained terms for {_unit_text(term.unit)} lack the intercept; "
                    "no formula form renders them"
                )
            exprs = [":".join(f.name for f in t.factors) for t in group if t.factors]
            if exprs:
                parts.append(f"(1|{_unit_text(term.unit)}|{' + '.join(exprs)})")
            else:
                parts.append(f"(1|{_unit_text(term.unit)})")
        else:
            emitted.add(term)
            chain = ":".join([_unit_text(term.unit)] + [f.name for f in term.factors])
            parts.append(f"(1|{chain})")
    return " + ".join(parts)


def _has_constrained_siblings(spec: ModelSpec, intercept_term: RandomTerm) -> bool:
    return any(
        t.constrained and t.unit == intercept_term.unit for t in spec.random_terms
    )


def _unit_text(unit: GroupingUnit) -> str:
    return unit.id_column
