"""Symbolic phase space: subshifts of finite type, words, cylinders, and
empirical measures.

The space is the set of one-sided sequences over {0..A-1} whose adjacent
pairs are allowed by a 0/1 transition matrix; the dynamics is the left
shift.  Dynamical balls coincide with cylinder sets here, which is what
makes every downstream certification an exact finite computation:
``ball_to_cylinder_length`` carries the ball radius into a cylinder depth.

Conventions
-----------
* Words are tuples of ints; word enumeration is always in lexicographic
  order, which downstream modules rely on for deterministic indexing.
* Empirical measures hold exact rational frequencies (integer counts over
  the window length), so sum-to-one is exact, not approximate.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    EmptyRowOrColumnError,
    EpsilonOutOfRangeError,
    InadmissibleWordError,
    NotPrimitiveError,
    ValidationError,
    WindowTooShortError,
)

SymbolSeq = Sequence[int]


class Sft:
    """Subshift of finite type: alphabet {0..A-1} plus a primitive 0/1
    transition matrix.  Immutable after construction.

    Use :func:`build_sft` (or the constructor, which validates identically).

    Parameters
    ----------
    transitions : array_like
        A x A matrix over {0,1}; entry (a, b) == 1 iff the pair ``ab`` may
        occur in a sequence.
    name : str
        Human-readable tag carried into reports.

    Raises
    ------
    EmptyRowOrColumnError
        If some symbol can never be continued or never be reached.
    NotPrimitiveError
        If no power of the matrix is strictly positive (checked up to the
        Wielandt bound (A-1)^2 + 1).
    """

    def __init__(self, transitions, name: str = "sft"):
        T = np.asarray(transitions)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise ValidationError(f"transitions must be square, got shape {T.shape}")
        if T.shape[0] < 2:
            raise ValidationError("alphabet must have at least 2 symbols")
        if not np.isin(T, (0, 1)).all():
            raise ValidationError("transitions must be a 0/1 matrix")
        T = T.astype(np.int8)
        if (T.sum(axis=1) == 0).any():
            raise EmptyRowOrColumnError("transition matrix has an all-zero row")
        if (T.sum(axis=0) == 0).any():
            raise EmptyRowOrColumnError("transition matrix has an all-zero column")
        _check_primitive(T)
        T.flags.writeable = False
        self.transitions = T
        self.alphabet_size = int(T.shape[0])
        self.name = str(name)
        self._block_cache: dict[int, list[tuple[int, ...]]] = {}

    # -- admissibility -------------------------------------------------------
    def allows(self, a: int, b: int) -> bool:
        """True iff the pair ``ab`` is an allowed transition."""
        return bool(self.transitions[a, b])

    def is_admissible(self, symbols: SymbolSeq) -> bool:
        """True iff ``symbols`` is a word of the shift space."""
        s = tuple(int(x) for x in symbols)
        if len(s) == 0:
            return False
        if any(x < 0 or x >= self.alphabet_size for x in s):
            return False
        return all(self.transitions[s[i], s[i + 1]] for i in range(len(s) - 1))

    def word(self, symbols: SymbolSeq) -> "Word":
        """Validate ``symbols`` and wrap it as a :class:`Word` of this space."""
        return Word(tuple(int(x) for x in symbols), self)

    # -- enumeration ---------------------------------------------------------
    def blocks(self, n: int) -> list[tuple[int, ...]]:
        """All admissible words of length ``n`` in lexicographic order."""
        if n < 1:
            raise ValidationError("block length must be >= 1")
        if n not in self._block_cache:
            out = [(a,) for a in range(self.alphabet_size)]
            for _ in range(n - 1):
                out = [w + (b,) for w in out for b in range(self.alphabet_size)
                       if self.transitions[w[-1], b]]
            self._block_cache[n] = out
        return self._block_cache[n]

    def block_index(self, n: int) -> dict[tuple[int, ...], int]:
        """Map admissible n-word -> its lexicographic index."""
        return {w: i for i, w in enumerate(self.blocks(n))}

    def words_array(self, n: int) -> np.ndarray:
        """Admissible n-words as an (N, n) int8 array, lexicographic rows.

        Intended for brute-force enumeration oracles; memory grows like A^n.
        """
        arr = np.arange(self.alphabet_size, dtype=np.int8).reshape(-1, 1)
        for _ in range(n - 1):
            nxt = []
            for b in range(self.alphabet_size):
                ok = self.transitions[arr[:, -1], b].astype(bool)
                if ok.any():
                    chunk = arr[ok]
                    nxt.append(np.hstack([chunk, np.full((len(chunk), 1), b, dtype=np.int8)]))
            arr = np.vstack(nxt)
            arr = arr[np.lexsort(arr.T[::-1])]
        return arr

    def __repr__(self) -> str:
        return f"Sft(name={self.name!r}, alphabet_size={self.alphabet_size})"

    def __eq__(self, other) -> bool:
        return (isinstance(other, Sft)
                and self.alphabet_size == other.alphabet_size
                and np.array_equal(self.transitions, other.transitions))

    def __hash__(self) -> int:
        return hash((self.alphabet_size, self.transitions.tobytes()))


def _check_primitive(T: np.ndarray) -> None:
    # Wielandt: a primitive n x n matrix has a strictly positive power with
    # exponent at most (n-1)^2 + 1; if none up to that bound is positive,
    # the matrix is not primitive.
    n = T.shape[0]
    bound = (n - 1) ** 2 + 1
    P = (T > 0)
    for _ in range(bound):
        if P.all():
            return
        P = (P.astype(np.int64) @ (T > 0).astype(np.int64)) > 0
    raise NotPrimitiveError(
        f"no power of the transition matrix up to {bound} is strictly positive")


@dataclass(frozen=True)
class Word:
    """Admissible finite word of a shift space."""

    symbols: tuple[int, ...]
    sft: Sft = field(repr=False, compare=False)

    def __post_init__(self):
        if len(self.symbols) < 1:
            raise InadmissibleWordError("words must have length >= 1")
        if not self.sft.is_admissible(self.symbols):
            raise InadmissibleWordError(
                f"word {self.symbols} violates the transitions of {self.sft.name}")

    def __len__(self) -> int:
        return len(self.symbols)

    def __str__(self) -> str:
        return "".join(str(s) for s in self.symbols)


@dataclass
class OrbitSegment:
    """Finite orbit window of a point, tagged with its sampling provenance."""

    symbols: np.ndarray
    seed: int
    source: str = ""
    sft: Sft | None = field(default=None, repr=False)

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.int8)
        self.symbols.flags.writeable = False
        if self.sft is not None and not self.sft.is_admissible(self.symbols.tolist()):
            raise InadmissibleWordError("orbit segment not admissible under its sft")

    def __len__(self) -> int:
        return len(self.symbols)


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Order-r word frequencies of an orbit window of m transitions.

    ``freq[w]`` is the exact rational fraction of positions k < m whose
    r-window equals w; the values sum to 1 exactly.
    """

    order: int
    window_length: int
    freq: Mapping[tuple[int, ...], Fraction]

    def __post_init__(self):
        total = sum(self.freq.values(), Fraction(0))
        if total != 1:
            raise ValidationError(f"empirical frequencies sum to {total}, not 1")
        if any(v < 0 for v in self.freq.values()):
            raise ValidationError("empirical frequencies must be nonnegative")

    def marginal(self, r: int) -> dict[tuple[int, ...], Fraction]:
        """Exact order-r marginal (prefix sums), r <= self.order."""
        if not 1 <= r <= self.order:
            raise ValidationError(f"marginal order {r} not in [1, {self.order}]")
        out: dict[tuple[int, ...], Fraction] = {}
        for w, v in self.freq.items():
            key = w[:r]
            out[key] = out.get(key, Fraction(0)) + v
        return out

    def suffix_marginal(self, r: int) -> dict[tuple[int, ...], Fraction]:
        """Exact order-r marginal over suffixes."""
        if not 1 <= r <= self.order:
            raise ValidationError(f"marginal order {r} not in [1, {self.order}]")
        out: dict[tuple[int, ...], Fraction] = {}
        for w, v in self.freq.items():
            key = w[-r:]
            out[key] = out.get(key, Fraction(0)) + v
        return out

    def as_float(self) -> dict[tuple[int, ...], float]:
        return {w: float(v) for w, v in self.freq.items()}


@dataclass(frozen=True)
class BallLength:
    """Cylinder depth realizing a dynamical ball: length = m + tail."""

    length: int
    tail: int


def build_sft(alphabet_size: int, transitions, name: str = "sft") -> Sft:
    """Validate and build a subshift of finite type.

    ``alphabet_size`` must match the matrix dimension; see :class:`Sft` for
    the validation rules.
    """
    T = np.asarray(transitions)
    if T.shape != (alphabet_size, alphabet_size):
        raise ValidationError(
            f"transitions shape {T.shape} does not match alphabet size {alphabet_size}")
    return Sft(T, name=name)


def full_shift(alphabet_size: int, name: str | None = None) -> Sft:
    """The full shift on ``alphabet_size`` symbols (all transitions allowed)."""
    return build_sft(alphabet_size, np.ones((alphabet_size, alphabet_size), dtype=int),
                     name=name or f"full-{alphabet_size}-shift")


def golden_mean_shift() -> Sft:
    """Binary shift forbidding the word 11."""
    return build_sft(2, [[1, 1], [1, 0]], name="golden-mean")


def count_words(sft: Sft, n: int) -> int:
    """Number of admissible words of length n, by exact integer DP."""
    if n < 1:
        raise ValidationError("word length must be >= 1")
    counts = [1] * sft.alphabet_size
    T = sft.transitions
    for _ in range(n - 1):
        counts = [sum(counts[a] * int(T[a, b]) for a in range(sft.alphabet_size))
                  for b in range(sft.alphabet_size)]
    return sum(counts)


def ball_to_cylinder_length(m: int, epsilon: float) -> BallLength:
    """Cylinder depth L = m + t equal to the m-step dynamical ball of
    radius ``epsilon`` in the dyadic shift metric, with t = ceil(log2(1/eps)).

    Radius 1 adds nothing beyond agreement on the first m coordinates;
    halving the radius deepens the cylinder by one coordinate.
    """
    if m < 1:
        raise ValidationError("m must be >= 1")
    if not (0.0 < epsilon <= 1.0):
        raise EpsilonOutOfRangeError(f"epsilon must lie in (0, 1], got {epsilon}")
    # exact at dyadic radii; the tiny slack only guards log2 rounding for
    # radii like 0.1 whose reciprocal-log lands within 1e-12 of an integer
    t = max(0, math.ceil(-math.log2(epsilon) - 1e-12))
    return BallLength(length=m + t, tail=t)


def empirical_measure(segment: OrbitSegment | SymbolSeq, offset: int, m: int,
                      order: int = 1) -> EmpiricalMeasure:
    """Order-r word frequencies over the window of m positions starting at
    ``offset``: freq(w) = #{0 <= k < m : segment[offset+k .. +r-1] = w} / m.

    Needs offset + m + order - 1 <= len(segment).
    """
    symbols = segment.symbols if isinstance(segment, OrbitSegment) else np.asarray(segment)
    if order < 1:
        raise ValidationError("order must be >= 1")
    if m < 1:
        raise ValidationError("window length must be >= 1")
    if offset < 0 or offset + m + order - 1 > len(symbols):
        raise WindowTooShortError(
            f"need offset + m + order - 1 = {offset + m + order - 1} <= {len(symbols)}")
    counts: dict[tuple[int, ...], int] = {}
    for k in range(m):
        w = tuple(int(x) for x in symbols[offset + k: offset + k + order])
        counts[w] = counts.get(w, 0) + 1
    freq = {w: Fraction(c, m) for w, c in counts.items()}
    return EmpiricalMeasure(order=order, window_length=m, freq=freq)
