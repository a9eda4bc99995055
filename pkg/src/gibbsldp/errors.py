"""Exception hierarchy for the engine.

Validation errors (bad user input) and numeric errors (a computation that
legitimately failed and must not be papered over) are kept distinct so the
CLI can map them to different exit codes.
"""


class EngineError(Exception):
    """Base class for all engine errors."""


class ValidationError(EngineError):
    """Bad input: shapes, ranges, inadmissible objects, schema violations."""


class NotPrimitiveError(ValidationError):
    """Transition structure is not primitive (no power is strictly positive)."""


class EmptyRowOrColumnError(ValidationError):
    """Transition matrix has an all-zero row or column."""


class EpsilonOutOfRangeError(ValidationError):
    """Ball radius outside (0, 1]."""


class WindowTooShortError(ValidationError):
    """Orbit segment too short for the requested window."""


class RangeMismatchError(ValidationError):
    """Potential / measure / constraint defined on incompatible word lengths."""


class NotInvariantError(ValidationError):
    """Measure is not shift-invariant (pi.Q != pi) where invariance is required."""


class NotMarkovError(ValidationError):
    """Operation needs a Markov measure with exactly computable cylinder masses."""


class InadmissibleWordError(ValidationError):
    """Word violates the transition structure of its shift space."""


class ConfigError(ValidationError):
    """Experiment configuration failed to parse or validate."""


class NumericError(EngineError):
    """A numeric procedure failed; results up to this point are unusable."""


class NoConvergenceError(NumericError):
    """Iteration budget exhausted before reaching the requested tolerance."""


class InfeasibleError(NumericError):
    """Constraint set contains no invariant measure."""


class DualityGapError(NumericError):
    """Primal and dual rate values disagree beyond tolerance (degenerate geometry)."""


class CountSpaceTooLargeError(NumericError):
    """Exact probability DP would need more (block, count) states than allowed."""


class ZeroHitsError(NumericError):
    """Monte Carlo saw no event occurrences; the log-probability is undefined."""


class AcceptanceError(EngineError):
    """A built-in acceptance invariant was violated during a run."""
