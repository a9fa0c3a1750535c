"""Contrast codings for factors.

Three codings cover all covariance families:

* ``SUM`` -- classic sum-to-zero coding, columns ``(1,0,...,-1)``; not
  orthogonal for three or more levels.
* ``ORTHONORMAL_POLYNOMIAL`` -- orthonormalized polynomial scores over
  equally spaced level indices; columns are zero-sum and orthonormal.
* ``IDENTITY`` -- overparametrized level indicators.

For any full orthonormal zero-sum basis ``C`` of ``n`` levels the Gram
matrix satisfies ``C Cᵀ = I - a·11ᵀ`` with ``a = 1/n`` (the projector onto
the zero-sum subspace); :func:`contrast_gram_identity` recovers ``a``
numerically and validates the residual.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidLevelsError, NotOrthonormalError

__all__ = [
    "ContrastKind",
    "ContrastMatrix",
    "make_contrast",
    "contrast_gram_identity",
    "rotate_orthonormal",
]

_ORTHO_TOL = 1e-12


class ContrastKind(enum.Enum):
    SUM = "sum"
    ORTHONORMAL_POLYNOMIAL = "poly"
    IDENTITY = "identity"


@dataclass(frozen=True)
class ContrastMatrix:
    """A coding matrix of shape ``n_levels x width`` for one factor."""

    n_levels: int
    kind: ContrastKind
    values: np.ndarray

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def is_orthonormal(self, tol: float = _ORTHO_TOL) -> bool:
        c = self.values
        gram_ok = np.abs(c.T @ c - np.eye(c.shape[1])).max() <= tol
        zerosum_ok = np.abs(c.sum(axis=0)).max() <= tol
        return bool(gram_ok and zerosum_ok)


def _poly_values(n: int) -> np.ndarray:
    x = np.arange(n, dtype=float)
    powers = np.vander(x - x.mean(), n, increasing=True)  # 1, x, x^2, ...
    q, _ = np.linalg.qr(powers)
    c = q[:, 1:]
    # sign convention: last row of each column non-negative
    sign = np.where(c[-1, :] < 0, -1.0, 1.0)
    return c * sign


def _sum_values(n: int) -> np.ndarray:
    c = np.zeros((n, n - 1))
    c[:-1, :] = np.eye(n - 1)
    c[-1, :] = -1.0
    return c


def make_contrast(n_levels: int, kind: ContrastKind) -> ContrastMatrix:
    """Build the coding matrix for a factor with ``n_levels`` levels."""
    kind = ContrastKind(kind)
    if kind is ContrastKind.IDENTITY:
        if n_levels < 1:
            raise InvalidLevelsError(f"identity coding needs >= 1 level, got {n_levels}")
        values = np.eye(n_levels)
    else:
        if n_levels < 2:
            raise InvalidLevelsError(f"{kind.value} coding needs >= 2 levels, got {n_levels}")
        values = _poly_values(n_levels) if kind is ContrastKind.ORTHONORMAL_POLYNOMIAL else _sum_values(n_levels)
    values.setflags(write=False)
    return ContrastMatrix(n_levels, kind, values)


def contrast_gram_identity(contrast: ContrastMatrix, tol: float = 1e-10) -> float:
    """Constant ``a`` with ``C Cᵀ = I - a·11ᵀ`` for an orthonormal coding ``C``.

    Raises :class:`NotOrthonormalError` when no such ``a`` fits within
    ``tol``, which is the case for sum and identity codings.
    """
    c = contrast.values
    gram = c @ c.T
    n = gram.shape[0]
    a = 1.0 - float(np.trace(gram)) / n
    residual = np.abs(gram - (np.eye(n) - a * np.ones((n, n)))).max()
    if residual > tol:
        raise NotOrthonormalError(
            f"{contrast.kind.value} coding of {contrast.n_levels} levels is not an "
            f"orthonormal zero-sum basis (residual {residual:.2e})"
        )
    return a


def rotate_orthonormal(contrast: ContrastMatrix, rotation: np.ndarray) -> ContrastMatrix:
    """Rotate an orthonormal basis by an orthogonal matrix; stays admissible."""
    if not contrast.is_orthonormal():
        raise NotOrthonormalError("only orthonormal codings can be rotated")
    w = contrast.width
    if rotation.shape != (w, w) or np.abs(rotation.T @ rotation - np.eye(w)).max() > _ORTHO_TOL:
        raise ValueError("rotation must be orthogonal with matching width")
    values = contrast.values @ rotation
    values.setflags(write=False)
    return ContrastMatrix(contrast.n_levels, contrast.kind, values)
