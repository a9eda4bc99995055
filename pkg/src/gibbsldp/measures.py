"""Invariant Markov measures on a subshift: entropy, integrals, exact
cylinder masses, and reproducible orbit sampling.

A measure lives on blocks (admissible words of a fixed order): ``pi`` is a
probability vector over blocks and ``Q`` a row-stochastic matrix supported
on admissible block transitions.  Cylinder masses are exact products
``pi * prod(Q)``; their logs are accumulated as sums so deep cylinders
never underflow.

Sampling uses counter-based Philox streams keyed by ``(seed, sample
index)``: no shared generator state, so batches are reproducible
bit-for-bit regardless of chunking or thread scheduling, and sample 0 of a
batch equals the single-orbit draw with the same seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import (
    NotInvariantError,
    RangeMismatchError,
    ValidationError,
)
from .shift import OrbitSegment, Sft, Word

if TYPE_CHECKING:  # pragma: no cover
    from .thermo import Potential

_STOCHASTIC_TOL = 1e-12
_INVARIANT_TOL = 1e-12
_RAW_MASS_MAX_LEN = 64


class MarkovMeasure:
    """Markov measure of a given block order on a subshift.

    Parameters
    ----------
    sft : Sft
        Underlying shift space.
    pi : array_like
        Probability vector over the admissible ``block_order``-words
        (lexicographic order).
    Q : array_like
        Row-stochastic matrix over the same blocks; its support must sit
        inside the admissible block transitions.
    block_order : int
        Word length of the blocks (>= 1).
    name : str
        Identifier carried into orbit provenance and reports.
    log_Q : array_like, optional
        Exact log-transition matrix to use instead of ``log(Q)``; passed by
        the Gibbs construction so that matched measure/potential pairs
        cancel to the last bit.
    """

    def __init__(self, sft: Sft, pi, Q, block_order: int = 1, name: str = "markov",
                 log_Q=None):
        if block_order < 1:
            raise ValidationError("block_order must be >= 1")
        self.sft = sft
        self.block_order = int(block_order)
        self.blocks = sft.blocks(self.block_order)
        S = len(self.blocks)
        pi = np.asarray(pi, dtype=float)
        Q = np.asarray(Q, dtype=float)
        if pi.shape != (S,):
            raise ValidationError(f"pi must have length {S} (one entry per block)")
        if Q.shape != (S, S):
            raise ValidationError(f"Q must be {S}x{S}")
        if (pi < 0).any():
            raise ValidationError("pi must be nonnegative")
        if abs(pi.sum() - 1.0) > _STOCHASTIC_TOL:
            raise ValidationError(f"pi sums to {pi.sum()!r}, not 1")
        if (Q < 0).any():
            raise ValidationError("Q must be nonnegative")
        rowsums = Q.sum(axis=1)
        if np.abs(rowsums - 1.0).max() > _STOCHASTIC_TOL:
            raise ValidationError(f"Q rows must sum to 1 within {_STOCHASTIC_TOL}")

        idx = sft.block_index(self.block_order)
        A = sft.alphabet_size
        # per-symbol views of Q: slot (u, a) is the transition u -> u[1:]+(a,)
        next_block = np.full((S, A), -1, dtype=np.int64)
        allowed = np.zeros((S, S), dtype=bool)
        for ui, u in enumerate(self.blocks):
            for a in range(A):
                if sft.allows(u[-1], a):
                    v = u[1:] + (a,)
                    vi = idx[v]
                    next_block[ui, a] = vi
                    allowed[ui, vi] = True
        if (Q[~allowed] != 0).any():
            raise ValidationError("Q has mass on a non-admissible block transition")

        logQ = np.asarray(log_Q, dtype=float) if log_Q is not None else None
        if logQ is not None:
            if logQ.shape != (S, S):
                raise ValidationError(f"log_Q must be {S}x{S}")
            if not np.allclose(np.exp(np.where(allowed, logQ, -np.inf))[allowed],
                               Q[allowed], rtol=1e-12, atol=0):
                raise ValidationError("log_Q is inconsistent with Q")
        else:
            with np.errstate(divide="ignore"):
                logQ = np.where(Q > 0, np.log(np.where(Q > 0, Q, 1.0)), -np.inf)

        Qa = np.zeros((S, A))
        logQa = np.full((S, A), -np.inf)
        for ui in range(S):
            for a in range(A):
                vi = next_block[ui, a]
                if vi >= 0:
                    Qa[ui, a] = Q[ui, vi]
                    logQa[ui, a] = logQ[ui, vi]

        with np.errstate(divide="ignore"):
            log_pi = np.where(pi > 0, np.log(np.where(pi > 0, pi, 1.0)), -np.inf)

        for arr in (pi, Q, logQ, Qa, logQa, log_pi, next_block):
            arr.flags.writeable = False
        self.pi = pi
        self.Q = Q
        self.log_Q = logQ
        self.Qa = Qa
        self.log_Qa = logQa
        self.log_pi = log_pi
        self.next_block = next_block
        self.name = str(name)
        self.block_index_map = idx
        self.stationarity_residual = float(np.abs(pi @ Q - pi).max())
        self.is_invariant = self.stationarity_residual <= _INVARIANT_TOL

        # cumulative rows for inverse-CDF sampling; final entry pinned to 1
        cum_pi = np.cumsum(pi)
        cum_pi[-1] = 1.0
        cum_Qa = np.cumsum(Qa, axis=1)
        cum_Qa /= cum_Qa[:, -1:]
        cum_pi.flags.writeable = False
        cum_Qa.flags.writeable = False
        self._cum_pi = cum_pi
        self._cum_Qa = cum_Qa

    def __repr__(self) -> str:
        return (f"MarkovMeasure(name={self.name!r}, block_order={self.block_order}, "
                f"blocks={len(self.blocks)}, invariant={self.is_invariant})")


def bernoulli(p: Sequence[float], sft: Sft | None = None, name: str | None = None) -> MarkovMeasure:
    """IID product measure with letter probabilities ``p`` on the full shift."""
    from .shift import full_shift

    p = np.asarray(p, dtype=float)
    sft = sft or full_shift(len(p))
    Q = np.tile(p, (len(p), 1))
    return MarkovMeasure(sft, p, Q, block_order=1,
                         name=name or f"bernoulli({','.join(f'{x:g}' for x in p)})")


def stationary_distribution(Q: np.ndarray) -> np.ndarray:
    """Stationary vector of a row-stochastic matrix, polished by iteration
    until the residual is at machine level."""
    Q = np.asarray(Q, dtype=float)
    vals, vecs = np.linalg.eig(Q.T)
    k = int(np.argmin(np.abs(vals - 1.0)))
    pi = np.real(vecs[:, k])
    pi = np.abs(pi)
    pi /= pi.sum()
    for _ in range(10_000):
        if np.abs(pi @ Q - pi).max() < 1e-15:
            break
        pi = pi @ Q
        pi /= pi.sum()
    return pi


def markov_measure(sft: Sft, Q, block_order: int = 1, name: str = "markov") -> MarkovMeasure:
    """Markov measure from a stochastic matrix, with ``pi`` its stationary vector."""
    return MarkovMeasure(sft, stationary_distribution(Q), Q,
                         block_order=block_order, name=name)


@dataclass(frozen=True)
class SampleStats:
    """Summary statistics of a Monte Carlo sample (normal-approximation CI)."""

    n_samples: int
    mean: float
    variance: float
    confidence_halfwidth: float

    @staticmethod
    def from_moments(n: int, total: float, total_sq: float) -> "SampleStats":
        mean = total / n
        var = max(0.0, (total_sq - n * mean * mean) / (n - 1)) if n > 1 else 0.0
        half = 1.96 * math.sqrt(var / n)
        return SampleStats(n_samples=n, mean=mean, variance=var,
                           confidence_halfwidth=half)


# ---------------------------------------------------------------------------
# deterministic quantities
# ---------------------------------------------------------------------------

def entropy(measure: MarkovMeasure) -> float:
    """Entropy rate -sum_u pi_u sum_v Q_uv ln Q_uv in nats per step,
    with the convention 0 ln 0 = 0."""
    _require_invariant(measure)
    Q, logQ = measure.Q, measure.log_Q
    terms = np.where(Q > 0, Q * np.where(Q > 0, logQ, 0.0), 0.0)
    return float(-(measure.pi @ terms.sum(axis=1)))


def integrate(potential: "Potential", measure: MarkovMeasure) -> float:
    """Exact integral of a locally constant function: sum over admissible
    range-words of (cylinder mass) * (table value)."""
    k = potential.range
    words = measure.sft.blocks(k)
    missing = [w for w in words if w not in potential.table]
    if missing:
        raise RangeMismatchError(
            f"potential table missing admissible {k}-words, e.g. {missing[0]}")
    return float(sum(cylinder_mass(measure, w) * potential.table[w] for w in words))


def log_cylinder_mass(measure: MarkovMeasure, word) -> float:
    """ln nu([word]) as an exact sum of logs; -inf when the mass is zero."""
    symbols = _word_symbols(measure.sft, word)
    b = measure.block_order
    n = len(symbols)
    if not measure.sft.is_admissible(symbols):
        return -math.inf
    if n < b:
        total = sum(measure.pi[i] for i, blk in enumerate(measure.blocks)
                    if blk[:n] == symbols)
        return math.log(total) if total > 0 else -math.inf
    u = measure.block_index_map[symbols[:b]]
    acc = measure.log_pi[u]
    for a in symbols[b:]:
        if acc == -math.inf:
            return -math.inf
        acc += measure.log_Qa[u, a]
        u = measure.next_block[u, a]
    return float(acc)


def cylinder_mass(measure: MarkovMeasure, word) -> float:
    """nu([word]) for words up to length 64; longer cylinders must go
    through :func:`log_cylinder_mass` (underflow)."""
    symbols = _word_symbols(measure.sft, word)
    if len(symbols) > _RAW_MASS_MAX_LEN:
        raise ValidationError(
            f"raw masses exposed only for length <= {_RAW_MASS_MAX_LEN}; "
            "use log_cylinder_mass")
    lm = log_cylinder_mass(measure, symbols)
    return 0.0 if lm == -math.inf else math.exp(lm)


def _word_symbols(sft: Sft, word) -> tuple[int, ...]:
    symbols = word.symbols if isinstance(word, Word) else tuple(int(x) for x in word)
    if len(symbols) < 1:
        raise ValidationError("word must have length >= 1")
    if any(x < 0 or x >= sft.alphabet_size for x in symbols):
        raise ValidationError(f"word {symbols} uses symbols outside the alphabet")
    return symbols


def _require_invariant(measure: MarkovMeasure) -> None:
    if not measure.is_invariant:
        raise NotInvariantError(
            f"measure {measure.name!r} has stationarity residual "
            f"{measure.stationarity_residual:.3e} > {_INVARIANT_TOL}")


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def philox_stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, stream index)."""
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
                    np.uint64(index & 0xFFFFFFFFFFFFFFFF)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _stream_uniforms(seed: int, first_index: int, n_samples: int,
                     count: int) -> np.ndarray:
    """Uniforms for per-sample streams: sample i owns the counter blocks
    [i*B, (i+1)*B) of the Philox generator keyed by ``seed``, where B is
    the per-sample block budget (4 doubles per block).

    The layout depends only on (seed, sample index, count), never on how a
    batch is chunked, so results are reproducible and embarrassingly
    parallel with no shared generator state.
    """
    blocks = (count + 3) // 4
    bg = np.random.Philox(key=np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    if first_index:
        bg.advance(first_index * blocks)
    u = np.random.Generator(bg).random(n_samples * blocks * 4)
    return u.reshape(n_samples, blocks * 4)[:, :count]


def orbit_batch(measure: MarkovMeasure, length: int, n_samples: int, seed: int,
                first_index: int = 0) -> np.ndarray:
    """Orbits of ``length`` symbols for samples ``first_index ..
    first_index + n_samples - 1`` as an (n_samples, length) int8 array.

    Sample ``i`` depends only on ``(seed, i, length)``, never on the batch
    split.
    """
    if length < 1:
        raise ValidationError("orbit length must be >= 1")
    b = measure.block_order
    steps = max(0, length - b)
    u = _stream_uniforms(seed, first_index, n_samples, steps + 1)
    state = (u[:, 0][:, None] > measure._cum_pi[None, :]).sum(axis=1)
    blocks_arr = np.asarray(measure.blocks, dtype=np.int8)
    out = np.empty((n_samples, length), dtype=np.int8)
    out[:, :min(b, length)] = blocks_arr[state][:, :min(b, length)]
    A = measure.sft.alphabet_size
    cum_cols = [np.ascontiguousarray(measure._cum_Qa[:, j]) for j in range(A - 1)]
    nb_flat = measure.next_block.reshape(-1)
    for t in range(steps):
        ut = u[:, t + 1]
        a = np.zeros(n_samples, dtype=np.int64)
        for j in range(A - 1):  # inverse CDF, one comparison per symbol slot
            a += ut > cum_cols[j][state]
        out[:, b + t] = a
        state = nb_flat[state * A + a]
    return out


def sample_orbit(measure: MarkovMeasure, length: int, seed: int) -> OrbitSegment:
    """Single orbit drawn from the measure; equals row 0 of a batch with the
    same seed."""
    symbols = orbit_batch(measure, length, 1, seed)[0]
    return OrbitSegment(symbols=symbols, seed=seed, source=measure.name, sft=measure.sft)


_CHUNK = 20_000


def birkhoff_estimate(measure: MarkovMeasure, potential: "Potential", m: int,
                      n_samples: int, seed: int) -> SampleStats:
    """Statistics of the Birkhoff average (1/m) sum phi(T^k x), k < m, over
    independent orbits."""
    if m < 1:
        raise ValidationError("m must be >= 1")
    k = potential.range
    table = _potential_lookup(measure.sft, potential)
    total = total_sq = 0.0
    done = 0
    while done < n_samples:
        n = min(_CHUNK, n_samples - done)
        orbits = orbit_batch(measure, m + k - 1, n, seed, first_index=done)
        idx = _encode_windows(orbits, k, measure.sft.alphabet_size)
        vals = table[idx].sum(axis=1) / m
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
        done += n
    return SampleStats.from_moments(n_samples, total, total_sq)


def mcmillan_breiman_estimate(measure: MarkovMeasure, n: int, n_samples: int,
                              seed: int) -> SampleStats:
    """Statistics of -(1/n) ln nu(n-cylinder of x) over sampled orbits; the
    mean estimates the entropy rate."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    total = total_sq = 0.0
    done = 0
    while done < n_samples:
        cn = min(_CHUNK, n_samples - done)
        orbits = orbit_batch(measure, n, cn, seed, first_index=done)
        vals = -batch_log_cylinder_mass(measure, orbits) / n
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
        done += cn
    return SampleStats.from_moments(n_samples, total, total_sq)


def batch_log_cylinder_mass(measure: MarkovMeasure, orbits: np.ndarray) -> np.ndarray:
    """ln nu([row]) for every row of an (n_samples, n) symbol array."""
    n = orbits.shape[1]
    b = measure.block_order
    if n < b:
        return np.array([log_cylinder_mass(measure, row.tolist()) for row in orbits])
    state = _encode_blocks(orbits[:, :b], measure)
    acc = measure.log_pi[state].copy()
    for t in range(n - b):
        a = orbits[:, b + t].astype(np.int64)
        acc += measure.log_Qa[state, a]
        state = measure.next_block[state, a]
    return acc


def _encode_windows(orbits: np.ndarray, k: int, alphabet: int) -> np.ndarray:
    """Integer codes of all k-windows of each orbit row (base-``alphabet``)."""
    n_win = orbits.shape[1] - k + 1
    idx = np.zeros((orbits.shape[0], n_win), dtype=np.int64)
    for c in range(k):
        idx = idx * alphabet + orbits[:, c:c + n_win].astype(np.int64)
    return idx


def _encode_blocks(block_cols: np.ndarray, measure: MarkovMeasure) -> np.ndarray:
    """Map (n, block_order) symbol columns to block indices."""
    A = measure.sft.alphabet_size
    b = measure.block_order
    code_of_block = {w: i for i, w in enumerate(measure.blocks)}
    codes = np.full(A ** b, -1, dtype=np.int64)
    for w, i in code_of_block.items():
        c = 0
        for s in w:
            c = c * A + s
        codes[c] = i
    enc = np.zeros(block_cols.shape[0], dtype=np.int64)
    for c in range(b):
        enc = enc * A + block_cols[:, c].astype(np.int64)
    return codes[enc]


def _potential_lookup(sft: Sft, potential: "Potential") -> np.ndarray:
    """Dense table phi[word-code] over base-A codes (admissible slots only)."""
    k = potential.range
    A = sft.alphabet_size
    out = np.zeros(A ** k)
    for w in sft.blocks(k):
        if w not in potential.table:
            raise RangeMismatchError(f"potential table missing admissible word {w}")
        c = 0
        for s in w:
            c = c * A + s
        out[c] = potential.table[w]
    return out
