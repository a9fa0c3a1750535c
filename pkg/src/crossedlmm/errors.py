"""Exception hierarchy for the crossedlmm package."""


class CrossedLmmError(Exception):
    """Base class for all package-specific errors."""


# --- formula / model specification ---------------------------------------


class FormulaSyntaxError(CrossedLmmError):
    """Malformed formula text; carries the character position of the fault."""

    def __init__(self, message, position):
        self.position = position
        super().__init__(f"{message} (at position {position})")


class UnknownIdentifierError(CrossedLmmError):
    """Identifier in a formula that is neither a factor nor a grouping unit."""


class EstimabilityError(CrossedLmmError):
    """Random interaction that the design cannot estimate."""


class DuplicateTermError(CrossedLmmError):
    """The same random term was specified more than once."""


class MissingFixedFactorError(CrossedLmmError):
    """A factor appears in a random term but not in the fixed part."""


# --- contrasts / design ----------------------------------------------------


class InvalidLevelsError(CrossedLmmError):
    """Contrast requested for fewer than two levels."""


class NotOrthonormalError(CrossedLmmError):
    """Contrast matrix fails the orthonormality test."""


class LevelMismatchError(CrossedLmmError):
    """Data column levels disagree with the declared factor levels."""


class MissingColumnError(CrossedLmmError):
    """Data set lacks a column required by the model."""


# --- covariance families ----------------------------------------------------


class IncompatibleSpecError(CrossedLmmError):
    """Model terms are inconsistent with the requested covariance family."""


class DomainError(CrossedLmmError):
    """Variance parameters outside their domain (negative scale entries)."""


# --- estimation --------------------------------------------------------------


class SingularFixedDesignError(CrossedLmmError):
    """Fixed-effects design matrix is rank deficient."""


class NonConvergedFitError(CrossedLmmError):
    """A test was requested on a fit that did not converge."""


class IncompatibleStructureError(CrossedLmmError):
    """Refit requested with a structure built for a different design."""


class DegenerateHypothesisError(CrossedLmmError):
    """Hypothesis matrix has rank zero."""


class UnbalancedDesignError(CrossedLmmError):
    """Sums-of-squares test requested for a design that is not balanced."""


class MaxFitFailedError(CrossedLmmError):
    """The unstructured-covariance fit underlying a selection failed."""


# --- data ingestion -----------------------------------------------------------


class DataParseError(CrossedLmmError):
    """CSV cell that cannot be parsed; carries row and column."""

    def __init__(self, message, row, column):
        self.row = row
        self.column = column
        super().__init__(f"{message} (row {row}, column {column!r})")


class MissingValueError(DataParseError):
    """Empty cell in a referenced column."""


class UnknownLevelError(DataParseError):
    """Factor level in the data that the schema does not declare."""


class InvalidConfigError(CrossedLmmError):
    """Simulation or CLI configuration that violates its invariants."""
