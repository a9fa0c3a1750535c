"""Fixed and random-effects design matrices.

The fixed matrix ``X`` is the full factorial over the declared factors in
sum-to-zero coding, intercept first.  Each random term contributes one
sparse block ``Z_t``, the row-wise Khatri-Rao product of the unit's level
indicators with the term's factor coding; a block for a unit with ``g``
levels and coding width ``w`` has ``g*w`` columns ordered level-major.

The coding of random terms is family-driven: level indicators for the
per-term-variance family, sum coding for the sum-coded zero-correlation
family, orthonormal polynomial contrasts everywhere else.  Orthonormal
bases may be swapped for any rotation of themselves via
``contrast_overrides``; fits of the shared-variance family are invariant
to that choice and the test suite checks it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .contrasts import ContrastKind, ContrastMatrix, make_contrast
from .dataset import Dataset
from .errors import LevelMismatchError, MissingColumnError
from .factors import ModelSpec, RandomTerm, UnitTag
from .families import CovFamily, random_coding_kind

__all__ = ["DesignMatrices", "ZBlock", "build_design"]


@dataclass(frozen=True)
class ZBlock:
    term: RandomTerm
    matrix: sp.csr_matrix
    cols: slice  # position in the full Z column span
    width: int  # coding columns per unit level
    n_levels: int

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]


@dataclass
class DesignMatrices:
    """Built design: dense fixed matrix plus sparse per-term random blocks."""

    x: np.ndarray
    fixed_terms: list
    fixed_slices: dict
    z_blocks: list
    unit_levels: dict
    spec: ModelSpec
    family: CovFamily
    contrasts: dict = field(default_factory=dict)

    @property
    def n_obs(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return sum(b.n_cols for b in self.z_blocks)

    def z(self) -> sp.csr_matrix:
        """The full random-effects matrix, term blocks concatenated."""
        if not self.z_blocks:
            return sp.csr_matrix((self.n_obs, 0))
        return sp.hstack([b.matrix for b in self.z_blocks], format="csr")

    def block_for(self, term: RandomTerm) -> ZBlock:
        for b in self.z_blocks:
            if b.term == term:
                return b
        raise KeyError(term.label())

    def fixed_slice(self, names) -> slice:
        key = tuple(names)
        try:
            return self.fixed_slices[key]
        except KeyError:
            raise KeyError(f"no fixed term {':'.join(key) or '(intercept)'}") from None


def _factor_codes(data: Dataset, name: str, n_levels: int) -> np.ndarray:
    col = data.factor(name)
    if len(col.levels) != n_levels:
        raise LevelMismatchError(
            f"column {name!r} has {len(col.levels)} levels, declared {n_levels}"
        )
    return col.codes


def _unit_codes(data: Dataset, unit) -> tuple[np.ndarray, int]:
    if unit.tag is UnitTag.PAIR:
        p_col, s_col = unit.id_column.split(":")
        p = data.factor(p_col)
        s = data.factor(s_col)
        combined = p.codes.astype(np.int64) * len(s.levels) + s.codes
        uniq, codes = np.unique(combined, return_inverse=True)
        return codes.astype(np.int32), len(uniq)
    col = data.factor(unit.id_column)
    return col.codes, len(col.levels)


def _row_coding(codes_list, contrast_list, n_obs) -> np.ndarray:
    """Row-wise tensor product of per-factor coding rows, later factors fastest."""
    values = np.ones((n_obs, 1))
    for codes, contrast in zip(codes_list, contrast_list):
        rows = contrast.values[codes]  # (n, w_f)
        values = (values[:, :, None] * rows[:, None, :]).reshape(n_obs, -1)
    return values


def build_design(
    spec: ModelSpec,
    data: Dataset,
    family: CovFamily,
    contrast_overrides: dict[str, ContrastMatrix] | None = None,
) -> DesignMatrices:
    """Build ``X`` and the per-term sparse ``Z`` blocks for one family.

    ``contrast_overrides`` replaces the orthonormal basis of named factors
    in the *random* part (fits with shared variances are invariant to it).
    """
    overrides = contrast_overrides or {}
    n = data.n_obs
    if spec.response not in data:
        raise MissingColumnError(f"missing response column {spec.response!r}")

    # fixed part: full factorial, sum-to-zero coding
    factor_codes = {f.name: _factor_codes(data, f.name, f.n_levels) for f in spec.fixed_factors}
    sum_contrasts = {f.name: make_contrast(f.n_levels, ContrastKind.SUM) for f in spec.fixed_factors}
    fixed_terms = spec.fixed_terms()
    x_parts = []
    fixed_slices = {}
    start = 0
    for term in fixed_terms:
        if not term:
            block = np.ones((n, 1))
        else:
            block = _row_coding(
                [factor_codes[f.name] for f in term],
                [sum_contrasts[f.name] for f in term],
                n,
            )
        key = tuple(f.name for f in term)
        fixed_slices[key] = slice(start, start + block.shape[1])
        start += block.shape[1]
        x_parts.append(block)
    x = np.hstack(x_parts)

    # random part
    coding_kind = random_coding_kind(family.tag)
    random_contrasts: dict[str, ContrastMatrix] = {}

    def coding_for(name: str, n_levels: int) -> ContrastMatrix:
        if name not in random_contrasts:
            if name in overrides:
                c = overrides[name]
                if c.n_levels != n_levels:
                    raise LevelMismatchError(f"override for {name!r} has wrong level count")
            else:
                c = make_contrast(n_levels, coding_kind)
            random_contrasts[name] = c
        return random_contrasts[name]

    unit_levels = {}
    z_blocks = []
    col_start = 0
    for term in spec.random_terms:
        codes, g = _unit_codes(data, term.unit)
        unit_levels[term.unit.tag] = g
        for f in term.factors:
            if f.name not in factor_codes:
                factor_codes[f.name] = _factor_codes(data, f.name, f.n_levels)
        contrasts = [coding_for(f.name, f.n_levels) for f in term.factors]
        values = _row_coding([factor_codes[f.name] for f in term.factors], contrasts, n)
        w = values.shape[1]
        indices = (codes.astype(np.int64)[:, None] * w + np.arange(w)[None, :]).ravel()
        indptr = np.arange(0, n * w + 1, w)
        matrix = sp.csr_matrix((values.ravel(), indices, indptr), shape=(n, g * w))
        z_blocks.append(
            ZBlock(term, matrix, slice(col_start, col_start + g * w), w, g)
        )
        col_start += g * w

    return DesignMatrices(
        x=x,
        fixed_terms=fixed_terms,
        fixed_slices=fixed_slices,
        z_blocks=z_blocks,
        unit_levels=unit_levels,
        spec=spec,
        family=family,
        contrasts=random_contrasts,
    )
