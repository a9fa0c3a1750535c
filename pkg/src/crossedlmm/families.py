"""Covariance families: parameter layouts over random terms.

Six families cover the usual modelling choices for crossed designs:

* ``RI``        random intercepts only, one variance per unit
* ``RIL``       one shared variance per term, level-indicator coding
* ``GANOVA``    one shared variance per term, orthonormal zero-sum coding
* ``ZCP_SUM``   one variance per contrast column, sum coding
* ``ZCP_POLY``  one variance per contrast column, orthonormal coding
* ``MAX``       one unstructured (Cholesky) block per unit, orthonormal coding

``include_ps`` selects the variants that add the participant:stimulus
pairing.  Parameter counts are design-driven; the residual variance is
always profiled out and never part of the parameter vector, so a
structure's ``n_params`` equals the published structure-parameter count
plus one.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .contrasts import ContrastKind
from .errors import DomainError, IncompatibleSpecError
from .factors import (
    Factor,
    ModelSpec,
    RandomTerm,
    UnitTag,
    estimable,
    saturated_terms,
)

__all__ = [
    "FamilyTag",
    "CovFamily",
    "BlockKind",
    "VarianceBlock",
    "CovStructure",
    "realize",
    "count_params",
    "theta_to_lambda",
    "lambda_unchecked",
    "spec_for_family",
    "family_from_string",
    "random_coding_kind",
]


class FamilyTag(enum.Enum):
    RI = "ri"
    RIL = "ri-l"
    MAX = "max"
    ZCP_SUM = "zcp-sum"
    ZCP_POLY = "zcp-poly"
    GANOVA = "ganova"


@dataclass(frozen=True)
class CovFamily:
    tag: FamilyTag
    include_ps: bool = False

    def label(self) -> str:
        return self.tag.value + ("+" if self.include_ps else "")


#: Coding used for the factors of random terms under each family.
_RANDOM_CODING = {
    FamilyTag.RI: ContrastKind.ORTHONORMAL_POLYNOMIAL,  # intercepts only; unused
    FamilyTag.RIL: ContrastKind.IDENTITY,
    FamilyTag.ZCP_SUM: ContrastKind.SUM,
    FamilyTag.ZCP_POLY: ContrastKind.ORTHONORMAL_POLYNOMIAL,
    FamilyTag.GANOVA: ContrastKind.ORTHONORMAL_POLYNOMIAL,
    FamilyTag.MAX: ContrastKind.ORTHONORMAL_POLYNOMIAL,
}


def random_coding_kind(tag: FamilyTag) -> ContrastKind:
    """Contrast kind a family applies to the factors of random terms."""
    return _RANDOM_CODING[tag]


def family_from_string(text: str) -> CovFamily:
    """Parse names like ``ganova``, ``ri-l+``, ``zcp-poly``."""
    text = text.strip().lower()
    include_ps = text.endswith("+")
    if include_ps:
        text = text[:-1]
    aliases = {"ril": FamilyTag.RIL, "zcp": FamilyTag.ZCP_POLY}
    for tag in FamilyTag:
        if text == tag.value:
            return CovFamily(tag, include_ps)
    if text in aliases:
        return CovFamily(aliases[text], include_ps)
    raise ValueError(f"unknown covariance family {text!r}")


class BlockKind(enum.Enum):
    SHARED_SCALAR = "shared"
    PER_CONTRAST_SCALAR = "per-contrast"
    FULL_CHOLESKY = "cholesky"


@dataclass(frozen=True)
class VarianceBlock:
    """One group of variance parameters and the Z columns it scales."""

    label: str
    unit_tag: UnitTag
    kind: BlockKind
    theta_slice: slice
    # scalar kinds
    col_slice: slice | None = None
    width: int = 1
    # cholesky kind: column index of coordinate j at unit level l
    col_index: np.ndarray | None = None

    @property
    def n_theta(self) -> int:
        return self.theta_slice.stop - self.theta_slice.start

    @property
    def dim(self) -> int:
        return 0 if self.col_index is None else self.col_index.shape[0]


@dataclass(frozen=True)
class CovStructure:
    """A realized parameter layout: blocks over Z columns plus the residual."""

    family: CovFamily
    blocks: tuple
    q: int
    term_keys: tuple

    @property
    def n_theta(self) -> int:
        return sum(b.n_theta for b in self.blocks)

    @property
    def n_params(self) -> int:
        """Total free parameters including the residual variance."""
        return self.n_theta + 1

    def theta_init(self) -> np.ndarray:
        theta = np.zeros(self.n_theta)
        for b in self.blocks:
            if b.kind is BlockKind.FULL_CHOLESKY:
                d = b.dim
                block = np.zeros(d * (d + 1) // 2)
                block[_diag_positions(d)] = 1.0
                theta[b.theta_slice] = block
            else:
                theta[b.theta_slice] = 1.0
        return theta

    def theta_lower_bounds(self) -> np.ndarray:
        lb = np.full(self.n_theta, -np.inf)
        lb[self.bounded_mask()] = 0.0
        return lb

    def bounded_mask(self) -> np.ndarray:
        """True for entries constrained to be non-negative (scales, diagonals)."""
        mask = np.zeros(self.n_theta, dtype=bool)
        for b in self.blocks:
            if b.kind is BlockKind.FULL_CHOLESKY:
                mask[b.theta_slice.start + _diag_positions(b.dim)] = True
            else:
                mask[b.theta_slice] = True
        return mask

    def theta_labels(self) -> list:
        labels = [""] * self.n_theta
        for b in self.blocks:
            if b.kind is BlockKind.FULL_CHOLESKY:
                d = b.dim
                k = b.theta_slice.start
                for j in range(d):
                    for i in range(j, d):
                        labels[k] = f"{b.label}[{i + 1},{j + 1}]"
                        k += 1
            elif b.kind is BlockKind.PER_CONTRAST_SCALAR:
                for c in range(b.width):
                    labels[b.theta_slice.start + c] = f"{b.label}.{c + 1}"
            else:
                labels[b.theta_slice.start] = b.label
        return labels


def _diag_positions(d: int) -> np.ndarray:
    """Positions of the diagonal inside column-major lower-triangle storage."""
    pos = []
    k = 0
    for j in range(d):
        pos.append(k)
        k += d - j
    return np.asarray(pos, dtype=np.intp)


_UNIT_ORDER = {UnitTag.PARTICIPANT: 0, UnitTag.STIMULUS: 1, UnitTag.PAIR: 2}


def _check_spec_family(spec: ModelSpec, family: CovFamily) -> None:
    has_ps = any(t.unit.tag is UnitTag.PAIR for t in spec.random_terms)
    ps_possible = any(estimable(UnitTag.PAIR, f.kind) for f in spec.fixed_factors)
    if family.include_ps and ps_possible and not has_ps:
        raise IncompatibleSpecError("family includes the pairing but the model has no pairing term")
    if not family.include_ps and has_ps:
        raise IncompatibleSpecError("model has pairing terms but the family excludes them")
    for t in spec.random_terms:
        if family.tag is FamilyTag.RI and t.factors:
            raise IncompatibleSpecError("random-intercept family allows intercept terms only")
        if family.tag is FamilyTag.GANOVA and t.factors and not t.constrained:
            raise IncompatibleSpecError(
                f"term {t.label()!r} must use constrained coding under the shared-variance family"
            )
        if family.tag is not FamilyTag.GANOVA and t.constrained:
            raise IncompatibleSpecError(
                f"constrained term {t.label()!r} is only valid under the shared-variance family"
            )


def realize(design, family: CovFamily | None = None) -> CovStructure:
    """Lay the family's variance parameters over a built design's Z columns.

    ``family`` may differ from the one the design was built for as long as
    both apply the same coding to random terms (the unstructured and the
    orthonormal zero-correlation families share their design).
    """
    family = family or design.family
    if family != design.family:
        same_coding = random_coding_kind(family.tag) == random_coding_kind(design.family.tag)
        if not same_coding or family.include_ps != design.family.include_ps:
            raise IncompatibleSpecError("design was built with a different coding")
    _check_spec_family(design.spec, family)

    blocks = []
    t0 = 0
    if family.tag is FamilyTag.MAX:
        by_unit: dict = {}
        for b in design.z_blocks:
            by_unit.setdefault(b.term.unit.tag, []).append(b)
        for tag in sorted(by_unit, key=_UNIT_ORDER.get):
            unit_blocks = by_unit[tag]
            n_levels = unit_blocks[0].n_levels
            d = sum(b.width for b in unit_blocks)
            col_index = np.empty((d, n_levels), dtype=np.int64)
            j = 0
            for b in unit_blocks:
                for c in range(b.width):
                    col_index[j] = b.cols.start + np.arange(n_levels) * b.width + c
                    j += 1
            n_theta = d * (d + 1) // 2
            blocks.append(
                VarianceBlock(
                    label=f"chol({unit_blocks[0].term.unit.id_column})",
                    unit_tag=tag,
                    kind=BlockKind.FULL_CHOLESKY,
                    theta_slice=slice(t0, t0 + n_theta),
                    col_index=col_index,
                )
            )
            t0 += n_theta
    else:
        per_contrast = family.tag in (FamilyTag.ZCP_SUM, FamilyTag.ZCP_POLY)
        for b in design.z_blocks:
            n_theta = b.width if per_contrast and b.term.factors else 1
            kind = (
                BlockKind.PER_CONTRAST_SCALAR
                if n_theta > 1
                else BlockKind.SHARED_SCALAR
            )
            blocks.append(
                VarianceBlock(
                    label=b.term.label(),
                    unit_tag=b.term.unit.tag,
                    kind=kind,
                    theta_slice=slice(t0, t0 + n_theta),
                    col_slice=b.cols,
                    width=b.width,
                )
            )
            t0 += n_theta

    return CovStructure(
        family=family,
        blocks=tuple(blocks),
        q=design.q,
        term_keys=tuple(b.term for b in design.z_blocks),
    )


def _contrast_width(factors, orthonormal: bool) -> int:
    w = 1
    for f in factors:
        w *= (f.n_levels - 1) if orthonormal else f.n_levels
    return w


def count_params(family: CovFamily, design_factors) -> int:
    """Number of covariance-structure parameters, residual excluded.

    This is the published-table counting convention; a realized structure's
    ``n_params`` equals this value plus one for the residual variance.
    """
    design_factors = tuple(design_factors)
    if family.tag is FamilyTag.RI:
        has_within_pair = any(estimable(UnitTag.PAIR, f.kind) for f in design_factors)
        return 2 + (1 if family.include_ps and has_within_pair else 0)
    terms = saturated_terms(design_factors, include_ps=family.include_ps, constrained=False)
    if family.tag in (FamilyTag.RIL, FamilyTag.GANOVA):
        return len(terms)
    if family.tag in (FamilyTag.ZCP_SUM, FamilyTag.ZCP_POLY):
        return sum(_contrast_width(t.factors, orthonormal=True) for t in terms)
    if family.tag is FamilyTag.MAX:
        total = 0
        for tag in (UnitTag.PARTICIPANT, UnitTag.STIMULUS, UnitTag.PAIR):
            d = sum(
                _contrast_width(t.factors, orthonormal=True)
                for t in terms
                if t.unit.tag is tag
            )
            total += d * (d + 1) // 2
        return total
    raise ValueError(family.tag)


def spec_for_family(
    response: str,
    design_factors,
    family: CovFamily,
    participant: str = "PT",
    stimulus: str = "SM",
) -> ModelSpec:
    """The canonical model of one family: saturated terms, or intercepts for RI."""
    design_factors = tuple(design_factors)
    if family.tag is FamilyTag.RI:
        terms = [
            t
            for t in saturated_terms(
                design_factors, family.include_ps, False, participant, stimulus
            )
            if not t.factors
        ]
    else:
        terms = saturated_terms(
            design_factors,
            family.include_ps,
            constrained=family.tag is FamilyTag.GANOVA,
            participant_column=participant,
            stimulus_column=stimulus,
        )
    return ModelSpec(response, design_factors, terms)


def _tril_from_theta(theta_block: np.ndarray, d: int) -> np.ndarray:
    out = np.zeros((d, d))
    k = 0
    for j in range(d):
        out[j:, j] = theta_block[k : k + d - j]
        k += d - j
    return out


def theta_to_lambda(structure: CovStructure, theta: np.ndarray) -> sp.csc_matrix:
    """The relative covariance factor: sparse lower-triangular ``Λ(θ)``.

    The random-effects covariance is ``σ² Λ Λᵀ``, block diagonal over
    units and unit levels.  Scale entries and Cholesky diagonals must be
    non-negative.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (structure.n_theta,):
        raise DomainError(
            f"theta has length {theta.shape}, structure needs {structure.n_theta}"
        )
    bounded = structure.bounded_mask()
    if np.any(theta[bounded] < 0):
        raise DomainError("scale entries and Cholesky diagonals must be non-negative")
    return lambda_unchecked(structure, theta)


def lambda_unchecked(structure: CovStructure, theta: np.ndarray) -> sp.csc_matrix:
    """Λ(θ) without domain validation; ΛΛᵀ is PSD for any real θ."""
    rows, cols, vals = [], [], []
    for b in structure.blocks:
        tb = theta[b.theta_slice]
        if b.kind is BlockKind.FULL_CHOLESKY:
            d, n_levels = b.col_index.shape
            low = _tril_from_theta(tb, d)
            for j in range(d):
                for i in range(j, d):
                    if low[i, j] == 0.0 and i != j:
                        continue
                    rows.append(b.col_index[i])
                    cols.append(b.col_index[j])
                    vals.append(np.full(n_levels, low[i, j]))
        elif b.kind is BlockKind.PER_CONTRAST_SCALAR:
            idx = np.arange(b.col_slice.start, b.col_slice.stop)
            rows.append(idx)
            cols.append(idx)
            vals.append(np.tile(tb, (b.col_slice.stop - b.col_slice.start) // b.width))
        else:
            idx = np.arange(b.col_slice.start, b.col_slice.stop)
            rows.append(idx)
            cols.append(idx)
            vals.append(np.full(idx.size, tb[0]))
    rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    vals = np.concatenate(vals) if vals else np.empty(0)
    return sp.csc_matrix((vals, (rows, cols)), shape=(structure.q, structure.q))
