"""Exact worst-case dynamical-ball defects and Gibbs certification.

The defect of a point x at window length m and ball tail t (radius 2^-t) is

    D = (1/m) ln nu(cylinder of length m+t)  -  (1/m) sum_{j<m} phi(window j).

For a Markov measure and a locally constant potential this depends only on
a finite prefix of x, so the supremum and infimum over the whole space are
exact finite optimizations: a min/max path-sum dynamic program over the
block transition graph.  On top of the extrema sit the delta/epsilon/N
table (weak Gibbs certification), the per-radius constant K with
m * sup|D| <= K (strong Gibbs), and finite-scale diagnostics of the
inf/sup defect sequences.

Everything here is deterministic; arg-words break ties lexicographically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NotMarkovError, RangeMismatchError, ValidationError
from .measures import MarkovMeasure, log_cylinder_mass
from .shift import Word, ball_to_cylinder_length
from .thermo import Potential, lift_potential


@dataclass(frozen=True)
class DefectExtrema:
    """Worst-case defects at one (m, t) pair, with witnessing words."""

    m: int
    t: int
    min_defect: float
    max_defect: float
    argmin_word: Word
    argmax_word: Word

    @property
    def sup_abs(self) -> float:
        return max(abs(self.min_defect), abs(self.max_defect))


@dataclass(frozen=True)
class WeakGibbsRow:
    """Least window length from which the defect band stays within delta
    at radius 2^-t; ``n_required`` is None when m_max was not enough."""

    delta: float
    epsilon: float
    t: int
    n_required: int | None
    m_max_checked: int


@dataclass(frozen=True)
class WeakGibbsTable:
    rows: tuple[WeakGibbsRow, ...]

    def epsilon_witness(self, delta: float) -> WeakGibbsRow | None:
        """Largest tabulated radius certifying the given delta (the
        existence clause of the definition, made into a concrete search)."""
        best = None
        for row in self.rows:
            if row.delta == delta and row.n_required is not None:
                if best is None or row.epsilon > best.epsilon:
                    best = row
        return best

    @property
    def certified(self) -> bool:
        deltas = {row.delta for row in self.rows}
        return all(self.epsilon_witness(d) is not None for d in deltas)


@dataclass(frozen=True)
class GibbsConstant:
    """Per-radius strong Gibbs constant: m * sup|defect| <= constant for
    every checked m; ``fit_residual`` is the spread of m * sup|defect|
    over the top half of the m range (0 when exactly constant)."""

    epsilon: float
    t: int
    constant: float
    fit_residual: float


@dataclass(frozen=True)
class DiagnosticRow:
    t: int
    m: int
    inf_defect: float
    sup_defect: float


# ---------------------------------------------------------------------------
# weight system shared by the DP, the sweep and the enumeration cross-check
# ---------------------------------------------------------------------------

@dataclass
class _DefectSystem:
    """Block graph with per-edge measure and potential weights.

    States are admissible s-words, s = max(block order, range - 1); an edge
    appends one symbol.  ``wq`` is the log transition mass of the block
    step ending at the appended symbol, ``wphi`` the potential value of the
    window ending there, and ``wboth`` their difference, precomputed so
    that every evaluation path adds bitwise identical terms.
    """

    measure: MarkovMeasure
    potential: Potential
    s: int
    states: list[tuple[int, ...]]
    e_u: np.ndarray
    e_a: np.ndarray
    e_v: np.ndarray
    e_wq: np.ndarray
    e_wphi: np.ndarray
    e_wboth: np.ndarray

    @property
    def n_states(self) -> int:
        return len(self.states)


def _build_system(measure: MarkovMeasure, potential: Potential) -> _DefectSystem:
    if not isinstance(measure, MarkovMeasure):
        raise NotMarkovError("defect certification needs a Markov measure")
    sft = measure.sft
    phi = lift_potential(potential, sft, max(2, potential.range))
    k = phi.range
    b = measure.block_order
    s = max(b, k - 1)
    states = sft.blocks(s)
    idx = {w: i for i, w in enumerate(states)}
    bidx = measure.block_index_map
    e_u, e_a, e_v, e_wq, e_wphi = [], [], [], [], []
    for ui, u in enumerate(states):
        for a in range(sft.alphabet_size):
            if not sft.allows(u[-1], a):
                continue
            v = u[1:] + (a,)
            w = u + (a,)
            e_u.append(ui)
            e_a.append(a)
            e_v.append(idx[v])
            e_wq.append(measure.log_Qa[bidx[u[s - b:]], a])
            e_wphi.append(phi.table[w[-k:]])
    e_wq = np.asarray(e_wq)
    e_wphi = np.asarray(e_wphi)
    return _DefectSystem(
        measure=measure, potential=phi, s=s, states=states,
        e_u=np.asarray(e_u, dtype=np.int64), e_a=np.asarray(e_a, dtype=np.int64),
        e_v=np.asarray(e_v, dtype=np.int64), e_wq=e_wq, e_wphi=e_wphi,
        e_wboth=e_wq - e_wphi,
    )


def _init_values(sys: _DefectSystem, m: int, t: int) -> np.ndarray:
    """Accumulated weight of the first s symbols of each state, honoring the
    measure window (positions < m+t) and potential window (starts < m)."""
    measure, phi = sys.measure, sys.potential
    b, k, s = measure.block_order, phi.range, sys.s
    bidx = measure.block_index_map
    out = np.empty(sys.n_states)
    for si, w in enumerate(sys.states):
        acc = measure.log_pi[bidx[w[:b]]]
        for i in range(s - b):
            if i + b <= m + t - 1:
                acc += measure.log_Qa[bidx[w[i:i + b]], w[i + b]]
        for j in range(s - k + 1):
            if j <= m - 1:
                acc -= phi.table[w[j:j + k]]
        out[si] = acc
    return out


def _edge_weights(sys: _DefectSystem, p: int, m: int, t: int) -> np.ndarray:
    """Weight of appending a symbol at absolute position p."""
    k = sys.potential.range
    q_on = p <= m + t - 1
    phi_on = p <= m + k - 2
    if q_on and phi_on:
        return sys.e_wboth
    if q_on:
        return sys.e_wq
    if phi_on:
        return -sys.e_wphi
    return np.zeros_like(sys.e_wq)


def _scatter_best(sys: _DefectSystem, vals: np.ndarray, w: np.ndarray,
                  maximize: bool) -> np.ndarray:
    cand = vals[sys.e_u] + w
    out = np.full(sys.n_states, -np.inf if maximize else np.inf)
    if maximize:
        np.maximum.at(out, sys.e_v, cand)
    else:
        np.minimum.at(out, sys.e_v, cand)
    return out


def defect_of_word(measure: MarkovMeasure, potential: Potential, word, m: int,
                   t: int) -> float:
    """Defect evaluated straight from the definition (independent of the
    DP): (1/m) [ln nu([word prefix of m+t]) - Birkhoff sum of phi]."""
    phi = lift_potential(potential, measure.sft, max(2, potential.range))
    symbols = word.symbols if isinstance(word, Word) else tuple(int(x) for x in word)
    n = m + max(t, phi.range - 1)
    if len(symbols) < n:
        raise ValidationError(f"word must have length >= {n}")
    mass = log_cylinder_mass(measure, symbols[: m + t])
    birkhoff = sum(phi.table[symbols[j: j + phi.range]] for j in range(m))
    return (mass - birkhoff) / m


def exact_defect_extrema(measure: MarkovMeasure, potential: Potential, m: int,
                         t: int) -> DefectExtrema:
    """Exact min/max defect over all admissible words at (m, t), with
    lexicographically smallest witnessing words."""
    if m < 1 or t < 0:
        raise ValidationError("need m >= 1 and t >= 0")
    sys = _build_system(measure, potential)
    k = sys.potential.range
    n = m + max(t, k - 1)
    if n < sys.s or m + t < measure.block_order:
        return _extrema_by_enumeration(measure, potential, m, t)

    n_pos = n - sys.s  # appended positions s .. n-1
    suf_min = np.zeros((n_pos + 1, sys.n_states))
    suf_max = np.zeros((n_pos + 1, sys.n_states))
    for step in range(n_pos - 1, -1, -1):
        p = sys.s + step
        w = _edge_weights(sys, p, m, t)
        cand_min = w + suf_min[step + 1][sys.e_v]
        cand_max = w + suf_max[step + 1][sys.e_v]
        nmin = np.full(sys.n_states, np.inf)
        nmax = np.full(sys.n_states, -np.inf)
        np.minimum.at(nmin, sys.e_u, cand_min)
        np.maximum.at(nmax, sys.e_u, cand_max)
        suf_min[step] = nmin
        suf_max[step] = nmax

    init = _init_values(sys, m, t)
    tot_min = init + suf_min[0]
    tot_max = init + suf_max[0]
    best_min = tot_min.min()
    best_max = tot_max.max()
    word_min = _reconstruct(sys, suf_min, tot_min, best_min, m, t, maximize=False)
    word_max = _reconstruct(sys, suf_max, tot_max, best_max, m, t, maximize=True)
    return DefectExtrema(
        m=m, t=t,
        min_defect=float(best_min) / m, max_defect=float(best_max) / m,
        argmin_word=measure.sft.word(word_min), argmax_word=measure.sft.word(word_max))


def _reconstruct(sys: _DefectSystem, suf: np.ndarray, totals: np.ndarray,
                 best: float, m: int, t: int, maximize: bool) -> tuple[int, ...]:
    # states are lex ordered, so the first achiever is the lex-smallest
    # start; extending greedily by the smallest achieving symbol keeps it so
    start = int(np.nonzero(totals == best)[0][0])
    word = list(sys.states[start])
    u = start
    n_pos = suf.shape[0] - 1
    by_state: dict[int, list[int]] = {}
    for ei in range(len(sys.e_u)):
        by_state.setdefault(int(sys.e_u[ei]), []).append(ei)
    for step in range(n_pos):
        p = sys.s + step
        w = _edge_weights(sys, p, m, t)
        target = suf[step][u]
        for ei in sorted(by_state[u], key=lambda e: sys.e_a[e]):
            val = w[ei] + suf[step + 1][sys.e_v[ei]]
            if val == target or (math.isinf(target) and math.isinf(val)
                                 and (val > 0) == (target > 0)):
                word.append(int(sys.e_a[ei]))
                u = int(sys.e_v[ei])
                break
        else:  # pragma: no cover - DP and reconstruction disagree
            raise AssertionError("failed to reconstruct an optimal word")
    return tuple(word)


def _extrema_by_enumeration(measure: MarkovMeasure, potential: Potential,
                            m: int, t: int) -> DefectExtrema:
    words, defects = enumerate_defects(measure, potential, m, t)
    i_min = int(np.argmin(defects))
    i_max = int(np.argmax(defects))
    return DefectExtrema(
        m=m, t=t,
        min_defect=float(defects[i_min]), max_defect=float(defects[i_max]),
        argmin_word=measure.sft.word(tuple(int(x) for x in words[i_min])),
        argmax_word=measure.sft.word(tuple(int(x) for x in words[i_max])))


def enumerate_defects(measure: MarkovMeasure, potential: Potential, m: int,
                      t: int) -> tuple[np.ndarray, np.ndarray]:
    """Defects of every admissible word at (m, t), by exhaustive scan.

    Brute-force cross-check of the DP: no Bellman recursion, every word is
    evaluated explicitly.  Per-word values are accumulated in the same
    association order as the DP path sums, so the min/max here equal the DP
    extrema bit for bit.  Rows are lexicographic; memory grows like A^n.
    """
    sft = measure.sft
    phi = lift_potential(potential, sft, max(2, potential.range))
    b = measure.block_order
    n = m + max(t, phi.range - 1)
    words = sft.words_array(n)
    if m + t < b:
        # cylinder shorter than a block: mass is a stationary marginal
        defects = np.array([defect_of_word(measure, potential,
                                           tuple(int(x) for x in row), m, t)
                            for row in words])
        return words, defects

    sys = _build_system(measure, potential)
    sidx = {w: i for i, w in enumerate(sys.states)}
    edge_of = np.full((sys.n_states, sft.alphabet_size), -1, dtype=np.int64)
    edge_of[sys.e_u, sys.e_a] = np.arange(len(sys.e_u))
    state = np.array([sidx[tuple(int(x) for x in row)] for row in words[:, :sys.s]])
    edges = np.empty((words.shape[0], n - sys.s), dtype=np.int64)
    for p in range(sys.s, n):
        ei = edge_of[state, words[:, p].astype(np.int64)]
        edges[:, p - sys.s] = ei
        state = sys.e_v[ei]
    acc = np.zeros(words.shape[0])
    for p in range(n - 1, sys.s - 1, -1):
        acc = _edge_weights(sys, p, m, t)[edges[:, p - sys.s]] + acc
    acc = _init_values(sys, m, t)[np.array([sidx[tuple(int(x) for x in row)]
                                            for row in words[:, :sys.s]])] + acc
    return words, acc / m


# ---------------------------------------------------------------------------
# incremental sweep over m at fixed t
# ---------------------------------------------------------------------------

def defect_extrema_sweep(measure: MarkovMeasure, potential: Potential, t: int,
                         m_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Arrays (min_defect, max_defect) indexed by m = 1 .. m_max at fixed t.

    One shared forward pass handles every m: per-position bulk weights are
    m-independent, and the remaining tail (ball overhang or potential
    padding, whichever is longer) is a fixed backward-computed correction.
    """
    if m_max < 1 or t < 0:
        raise ValidationError("need m_max >= 1 and t >= 0")
    sys = _build_system(measure, potential)
    k = sys.potential.range
    b = sys.measure.block_order
    s = sys.s
    g = min(t, k - 1)
    d = abs(t - (k - 1))
    tail_w = sys.e_wq if t > k - 1 else -sys.e_wphi

    tmin = np.zeros(sys.n_states)
    tmax = np.zeros(sys.n_states)
    for _ in range(d):
        cmin = tail_w + tmin[sys.e_v]
        cmax = tail_w + tmax[sys.e_v]
        nmin = np.full(sys.n_states, np.inf)
        nmax = np.full(sys.n_states, -np.inf)
        np.minimum.at(nmin, sys.e_u, cmin)
        np.maximum.at(nmax, sys.e_u, cmax)
        tmin, tmax = nmin, nmax

    out_min = np.empty(m_max + 1)
    out_max = np.empty(m_max + 1)
    out_min[0] = out_max[0] = np.nan
    m_switch = min(m_max + 1, s + 2)
    for m in range(1, m_switch):
        ex = exact_defect_extrema(measure, potential, m, t)
        out_min[m], out_max[m] = ex.min_defect, ex.max_defect

    if m_switch <= m_max:
        fmin = _init_values(sys, m_switch, t)
        fmax = fmin.copy()
        # forward over both-active positions p = s .. m-1+g, snapshotting at
        # each cut c_m = m-1+g
        p = s - 1
        for m in range(m_switch, m_max + 1):
            while p < m - 1 + g:
                p += 1
                cmin = fmin[sys.e_u] + sys.e_wboth
                cmax = fmax[sys.e_u] + sys.e_wboth
                nmin = np.full(sys.n_states, np.inf)
                nmax = np.full(sys.n_states, -np.inf)
                np.minimum.at(nmin, sys.e_v, cmin)
                np.maximum.at(nmax, sys.e_v, cmax)
                fmin, fmax = nmin, nmax
            out_min[m] = float((fmin + tmin).min()) / m
            out_max[m] = float((fmax + tmax).max()) / m
    return out_min, out_max


# ---------------------------------------------------------------------------
# certification tables
# ---------------------------------------------------------------------------

def weak_gibbs_table(measure: MarkovMeasure, potential: Potential,
                     deltas: Sequence[float], epsilons: Sequence[float],
                     m_max: int) -> WeakGibbsTable:
    """For each (delta, epsilon) pair, the least N such that the defect band
    stays within [-delta, delta] for every N <= m <= m_max."""
    if not deltas or not epsilons:
        raise ValidationError("deltas and epsilons must be nonempty")
    if any(d <= 0 for d in deltas) or any(e <= 0 for e in epsilons):
        raise ValidationError("deltas and epsilons must be positive")
    rows = []
    for eps in epsilons:
        t = ball_to_cylinder_length(1, eps).tail
        lo, hi = defect_extrema_sweep(measure, potential, t, m_max)
        sup_abs = np.maximum(np.abs(lo[1:]), np.abs(hi[1:]))  # index 0 -> m=1
        for delta in deltas:
            bad = np.nonzero(~(sup_abs <= delta))[0]
            if len(bad) == 0:
                n_req: int | None = 1
            elif bad[-1] + 1 == m_max:
                n_req = None
            else:
                n_req = int(bad[-1] + 2)
            if n_req is not None:
                assert (sup_abs[n_req - 1:] <= delta).all()
                assert n_req == 1 or not sup_abs[n_req - 2] <= delta
            rows.append(WeakGibbsRow(delta=float(delta), epsilon=float(eps), t=t,
                                     n_required=n_req, m_max_checked=m_max))
    return WeakGibbsTable(rows=tuple(rows))


def strong_gibbs_constant(measure: MarkovMeasure, potential: Potential, t: int,
                          m_max: int) -> GibbsConstant:
    """K with m * sup|defect| <= K for all m <= m_max, plus the spread of
    m * sup|defect| over the top half of the range."""
    lo, hi = defect_extrema_sweep(measure, potential, t, m_max)
    m_vals = np.arange(1, m_max + 1)
    scaled = m_vals * np.maximum(np.abs(lo[1:]), np.abs(hi[1:]))
    top = scaled[(m_max // 2):] if m_max > 1 else scaled
    return GibbsConstant(epsilon=2.0 ** -t, t=t, constant=float(scaled.max()),
                         fit_residual=float(top.max() - top.min()))


def energy_limit_diagnostics(measure: MarkovMeasure, potential: Potential,
                             t_list: Sequence[int], m_max: int) -> list[DiagnosticRow]:
    """Finite-scale surrogate of the nested small-radius / long-window
    limits: the inf/sup defect sequences m -> D(m, t) for each tail t."""
    out = []
    for t in t_list:
        if t < 0:
            raise ValidationError("tails must be >= 0")
        lo, hi = defect_extrema_sweep(measure, potential, int(t), m_max)
        for m in range(1, m_max + 1):
            out.append(DiagnosticRow(t=int(t), m=m, inf_defect=float(lo[m]),
                                     sup_defect=float(hi[m])))
    return out
