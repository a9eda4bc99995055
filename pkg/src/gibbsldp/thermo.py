"""Transfer operator, topological pressure, potential normalization, and the
Gibbs Markov measure of a locally constant potential.

The pressure of a range-k potential on a subshift is the log of the Perron
eigenvalue of its transfer matrix on (k-1)-blocks.  Normalizing the
potential with the right Perron vector makes that matrix row-stochastic
with pressure exactly zero at the matrix level, and the stochasticized
matrix together with its stationary vector is the Gibbs measure.  The
equilibrium residual h + integral(phi) - P(phi) then vanishes for the
constructed measure and is strictly negative for every other invariant
Markov measure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import (
    NoConvergenceError,
    RangeMismatchError,
    ValidationError,
)
from .measures import MarkovMeasure, entropy, integrate, philox_stream
from .shift import Sft, _check_primitive

DEFAULT_PRESSURE_TOL = 1e-13
_MAX_POWER_ITERS = 1_000_000


@dataclass(frozen=True)
class Potential:
    """Locally constant function given by a table over admissible words of a
    fixed range (values in nats per step)."""

    range: int
    table: Mapping[tuple[int, ...], float]
    name: str = ""

    def value(self, word) -> float:
        """Value on the cylinder of ``word`` (uses the first ``range`` symbols)."""
        key = tuple(int(x) for x in word[: self.range])
        if key not in self.table:
            raise RangeMismatchError(f"word {key} not in potential table")
        return float(self.table[key])


def make_potential(sft: Sft, range_: int, table: Mapping[tuple[int, ...], float],
                   name: str = "") -> Potential:
    """Validated potential: the table must cover exactly the admissible
    ``range_``-words of ``sft`` with finite values."""
    if range_ < 1:
        raise ValidationError("potential range must be >= 1")
    words = set(sft.blocks(range_))
    keys = {tuple(int(x) for x in w) for w in table}
    missing = words - keys
    extra = keys - words
    if missing:
        raise ValidationError(f"potential table missing admissible words: {sorted(missing)[:3]}")
    if extra:
        raise ValidationError(f"potential table has inadmissible words: {sorted(extra)[:3]}")
    vals = {w: float(table[w]) for w in keys}
    if any(not math.isfinite(v) for v in vals.values()):
        raise ValidationError("potential values must be finite")
    return Potential(range=range_, table=vals, name=name)


def constant_potential(sft: Sft, c: float, name: str = "") -> Potential:
    """phi identically equal to ``c``."""
    return make_potential(sft, 1, {(a,): float(c) for a in range(sft.alphabet_size)},
                          name=name or f"const({c:g})")


def site_potential(sft: Sft, values, name: str = "") -> Potential:
    """phi(x) = values[x_0] (range 1)."""
    values = list(values)
    if len(values) != sft.alphabet_size:
        raise ValidationError("need one value per symbol")
    return make_potential(sft, 1, {(a,): float(v) for a, v in enumerate(values)},
                          name=name)


def lift_potential(potential: Potential, sft: Sft, new_range: int) -> Potential:
    """Reindex to a larger range by ignoring the extra trailing coordinates."""
    if new_range < potential.range:
        raise RangeMismatchError(
            f"cannot lift range {potential.range} down to {new_range}")
    if new_range == potential.range:
        return potential
    table = {w: potential.table[w[: potential.range]] for w in sft.blocks(new_range)}
    return Potential(range=new_range, table=table, name=potential.name)


def add_constant(potential: Potential, c: float) -> Potential:
    return Potential(range=potential.range,
                     table={w: v + c for w, v in potential.table.items()},
                     name=potential.name)


def tilt_potential(potential: Potential, coeffs: Mapping[tuple[int, ...], float],
                   theta: float, sft: Sft) -> Potential:
    """phi + theta * c where c is a locally constant functional given by
    ``coeffs`` over r-words; the result has range max(k, r)."""
    r = len(next(iter(coeffs)))
    if any(len(w) != r for w in coeffs):
        raise ValidationError("all coefficient words must have equal length")
    L = max(potential.range, r)
    lifted = lift_potential(potential, sft, L)
    table = {}
    for w in sft.blocks(L):
        c = coeffs.get(tuple(w[:r]), 0.0)
        table[w] = lifted.table[w] + theta * c
    return Potential(range=L, table=table,
                     name=f"{potential.name}+{theta:g}*c" if potential.name else "")


def random_potential(sft: Sft, range_: int, seed: int, scale: float = 1.0,
                     name: str = "") -> Potential:
    """Seeded random potential with values uniform in [-scale, scale]."""
    rng = philox_stream(seed, 0)
    words = sft.blocks(range_)
    vals = (rng.random(len(words)) * 2.0 - 1.0) * scale
    return Potential(range=range_, table=dict(zip(words, vals.tolist())),
                     name=name or f"random(seed={seed})")


@dataclass(frozen=True)
class TransferOperator:
    """Nonnegative transfer matrix of a potential on (range-1)-blocks."""

    matrix: np.ndarray
    blocks: list[tuple[int, ...]]
    range: int

    @property
    def size(self) -> int:
        return len(self.blocks)


@dataclass(frozen=True)
class PressureResult:
    """Perron data of a transfer matrix: log_lambda is the topological
    pressure in nats; left/right vectors are normalized so that
    sum(left) = 1 and left . right = 1."""

    log_lambda: float
    right_vec: np.ndarray
    left_vec: np.ndarray
    iterations: int
    residual: float
    op: TransferOperator = field(repr=False, compare=False)


class GibbsMarkov(MarkovMeasure):
    """Gibbs Markov measure constructed from a potential; carries the
    provenance of its source potential."""

    def __init__(self, *args, provenance: str = "", **kwargs):
        super().__init__(*args, **kwargs)
        self.provenance = provenance


def transfer_matrix(potential: Potential, sft: Sft) -> TransferOperator:
    """M[u, v] = exp(phi(u + last(v))) on admissible (k-1)-block overlaps;
    range-1 potentials are first lifted to range 2."""
    phi = lift_potential(potential, sft, max(2, potential.range))
    k = phi.range
    blocks = sft.blocks(k - 1)
    idx = {w: i for i, w in enumerate(blocks)}
    S = len(blocks)
    M = np.zeros((S, S))
    for u in blocks:
        for a in range(sft.alphabet_size):
            if sft.allows(u[-1], a):
                w = u + (a,)
                M[idx[u], idx[w[1:]]] = math.exp(phi.table[w])
    _check_primitive((M > 0).astype(np.int8))
    M.flags.writeable = False
    return TransferOperator(matrix=M, blocks=blocks, range=k)


def _power_iterate(M: np.ndarray, tol: float) -> tuple[float, np.ndarray, int, float]:
    """Perron eigenpair by power iteration; returns (lambda, vec, iters, residual)."""
    S = M.shape[0]
    v = np.full(S, 1.0 / S)
    lam = float(M.sum()) / S
    for it in range(1, _MAX_POWER_ITERS + 1):
        w = M @ v
        total = w.sum()
        if total <= 0 or not np.isfinite(total):
            raise NoConvergenceError("power iteration produced a non-positive vector")
        lam = total  # v is normalized to sum 1, so sum(Mv) estimates lambda
        v = w / total
        resid = float(np.abs(M @ v - lam * v).max())
        if resid <= tol * max(1.0, lam):
            return lam, v, it, resid
    raise NoConvergenceError(
        f"power iteration did not reach tol={tol} in {_MAX_POWER_ITERS} iterations")


def pressure(potential: Potential, sft: Sft, tol: float = DEFAULT_PRESSURE_TOL) -> PressureResult:
    """Topological pressure P(phi) = ln(Perron eigenvalue), with left and
    right Perron vectors; deterministic given ``tol``."""
    if tol <= 0:
        raise ValidationError("tol must be positive")
    op = transfer_matrix(potential, sft)
    M = op.matrix
    lam_r, r, it_r, res_r = _power_iterate(M, tol)
    lam_l, l, it_l, res_l = _power_iterate(M.T, tol)
    # bilinear quotient is quadratically accurate in the vector residuals
    lam = float(l @ (M @ r)) / float(l @ r)
    l = l / l.sum()
    r = r / float(l @ r)
    resid = float(np.abs(M @ r - lam * r).max())
    l.flags.writeable = False
    r.flags.writeable = False
    return PressureResult(log_lambda=float(np.log(lam)), right_vec=r, left_vec=l,
                          iterations=it_r + it_l, residual=resid, op=op)


def normalize(potential: Potential, sft: Sft,
              pressure_result: PressureResult | None = None) -> Potential:
    """Normalized potential with pressure zero at the matrix level:
    new(w) = phi(w) + ln r[w_1:] - ln r[w_:-1] - P(phi), whose transfer
    matrix is row-stochastic."""
    pr = pressure_result or pressure(potential, sft)
    op = pr.op
    phi = lift_potential(potential, sft, op.range)
    idx = {w: i for i, w in enumerate(op.blocks)}
    log_r = np.log(pr.right_vec)
    table = {}
    for w in sft.blocks(op.range):
        u, v = w[:-1], w[1:]
        table[w] = phi.table[w] + float(log_r[idx[v]] - log_r[idx[u]]) - pr.log_lambda
    return Potential(range=op.range, table=table,
                     name=f"normalized({potential.name})" if potential.name else "normalized")


def gibbs_measure(potential: Potential, sft: Sft,
                  tol: float = DEFAULT_PRESSURE_TOL) -> GibbsMarkov:
    """Gibbs Markov measure of the potential: the stochasticized transfer
    matrix together with its stationary vector.

    The measure's log-transition matrix is the normalized potential table
    itself, so the pair (measure, normalized potential) cancels exactly in
    downstream defect computations.
    """
    pr = pressure(potential, sft, tol=tol)
    phi_n = normalize(potential, sft, pressure_result=pr)
    op = pr.op
    blocks = op.blocks
    idx = {w: i for i, w in enumerate(blocks)}
    S = len(blocks)
    logQ = np.full((S, S), -np.inf)
    for w in sft.blocks(op.range):
        logQ[idx[w[:-1]], idx[w[1:]]] = phi_n.table[w]
    Q = np.where(np.isfinite(logQ), np.exp(logQ), 0.0)
    pi = pr.left_vec * pr.right_vec
    pi = pi / pi.sum()
    for _ in range(10_000):
        nxt = pi @ Q
        nxt = nxt / nxt.sum()
        if np.abs(nxt - pi).max() < 1e-16:
            break
        pi = nxt
    return GibbsMarkov(sft, pi, Q, block_order=op.range - 1,
                       name=f"gibbs({potential.name})" if potential.name else "gibbs",
                       log_Q=logQ, provenance=potential.name or "potential")


def equilibrium_residual(measure: MarkovMeasure, potential: Potential, sft: Sft,
                         pressure_result: PressureResult | None = None) -> float:
    """h(measure) + integral(phi) - P(phi); zero exactly at the Gibbs
    measure of phi, strictly negative at every other invariant Markov
    measure."""
    if sft != measure.sft:
        raise ValidationError("measure and sft disagree")
    pr = pressure_result or pressure(potential, sft)
    return entropy(measure) + integrate(potential, measure) - pr.log_lambda
