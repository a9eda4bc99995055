"""Large-deviation rates for empirical measures and their verification
against exact and Monte Carlo probabilities.

The rate of a convex set of order-r word frequencies is

    sup { h(rho) + integral(phi) d rho }

over invariant measures whose order-r marginals lie in the set.  The
supremum is attained by a Markov measure of bounded memory, so the primal
problem is a finite concave maximization over shift-invariant edge
distributions q (entropic mirror descent with Bregman feasibility
projections), and the dual is a scalar tilting problem solved per
functional through the pressure of tilted potentials (golden-section).

Finite-window probabilities nu(empirical measure in F) are computed
exactly by a (block, integer score) dynamic program where the constraint
coefficients are rational, and by plain or exponentially tilted Monte
Carlo with exact likelihood-ratio reweighting beyond the DP range.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    CountSpaceTooLargeError,
    DualityGapError,
    InfeasibleError,
    NoConvergenceError,
    NotMarkovError,
    ValidationError,
    ZeroHitsError,
)
from .measures import MarkovMeasure, log_cylinder_mass, orbit_batch
from .shift import Sft
from .thermo import (
    Potential,
    gibbs_measure,
    lift_potential,
    make_potential,
    tilt_potential,
)

Number = float | int | Fraction

_DUALITY_GAP_TOL = 1e-4
_EXACT_M_MAX = 4000
_COUNT_STATE_BUDGET = 4_000_000


@dataclass(frozen=True)
class Constraint:
    """One closed or open half-space on order-r frequencies:
    sum_w coeffs[w] * freq(w)  (sense)  threshold."""

    coeffs: Mapping[tuple[int, ...], Number]
    threshold: Number
    sense: str = ">="
    closed: bool = True

    def __post_init__(self):
        if self.sense not in (">=", "<="):
            raise ValidationError(f"sense must be '>=' or '<=', got {self.sense!r}")
        orders = {len(w) for w in self.coeffs}
        if len(orders) != 1:
            raise ValidationError("all coefficient words must have one length")

    @property
    def order(self) -> int:
        return len(next(iter(self.coeffs)))

    def as_geq(self) -> tuple[dict[tuple[int, ...], float], float]:
        """(coefficients, threshold) normalized to sense '>='."""
        sign = 1.0 if self.sense == ">=" else -1.0
        return ({w: sign * float(c) for w, c in self.coeffs.items()},
                sign * float(self.threshold))


@dataclass(frozen=True)
class ConstraintSet:
    """Intersection of half-spaces on order-r frequencies; convex by
    construction."""

    order: int
    functionals: tuple[Constraint, ...]

    def __post_init__(self):
        for f in self.functionals:
            if f.order != self.order:
                raise ValidationError(
                    f"functional order {f.order} != set order {self.order}")


def make_constraint_set(sft: Sft, functionals: Sequence[Constraint]) -> ConstraintSet:
    """Validated constraint set: every functional must cover exactly the
    admissible words of its order."""
    if not functionals:
        raise ValidationError("need at least one functional")
    order = functionals[0].order
    words = set(sft.blocks(order))
    for f in functionals:
        keys = set(f.coeffs)
        if keys != words:
            raise ValidationError(
                f"coefficients must cover exactly the admissible {order}-words; "
                f"got {sorted(keys)[:3]}... expected {len(words)} words")
    return ConstraintSet(order=order, functionals=tuple(functionals))


def frequency_constraint(sft: Sft, word, threshold: Number, sense: str = ">=",
                         closed: bool = True) -> ConstraintSet:
    """Single-word frequency constraint freq(word) (sense) threshold."""
    word = tuple(int(x) for x in word)
    coeffs: dict[tuple[int, ...], Number] = {w: 0 for w in sft.blocks(len(word))}
    if word not in coeffs:
        raise ValidationError(f"word {word} is not admissible")
    coeffs[word] = 1
    return make_constraint_set(sft, [Constraint(coeffs=coeffs, threshold=threshold,
                                                sense=sense, closed=closed)])


@dataclass(frozen=True)
class RateResult:
    """Variational rate sup h + integral(phi) over the constraint set."""

    value: float
    optimizer_q: dict[tuple[int, ...], float]
    dual_theta: tuple[float, ...] | None
    method: str
    iterations: int
    kkt_residual: float


@dataclass(frozen=True)
class LdpEstimate:
    """One finite-window probability: (1/m) ln nu(E_m in F)."""

    m: int
    log_prob_over_m: float
    method: str  # "exact" | "mc"
    prob: float
    stderr: float | None = None
    n_samples: int | None = None
    threshold_attainable: bool = False  # threshold * m lands on the count lattice


# ---------------------------------------------------------------------------
# edge-distribution machinery
# ---------------------------------------------------------------------------

@dataclass
class _EdgeSystem:
    """Shift-invariant edge distributions over admissible L-words."""

    sft: Sft
    L: int
    edges: list[tuple[int, ...]]
    nodes: list[tuple[int, ...]]
    e_u: np.ndarray
    e_v: np.ndarray
    phi_e: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def row_sums(self, q: np.ndarray) -> np.ndarray:
        r = np.zeros(self.n_nodes)
        np.add.at(r, self.e_u, q)
        return r

    def col_sums(self, q: np.ndarray) -> np.ndarray:
        c = np.zeros(self.n_nodes)
        np.add.at(c, self.e_v, q)
        return c

    def value(self, q: np.ndarray) -> float:
        """h(q) + integral(phi): -sum q ln(q / rowsum) + sum q phi."""
        r = self.row_sums(q)
        pos = q > 0
        h = -float(np.sum(q[pos] * np.log(q[pos] / r[self.e_u][pos])))
        return h + float(q @ self.phi_e)

    def gradient(self, q: np.ndarray) -> np.ndarray:
        r = self.row_sums(q)
        return self.phi_e - np.log(np.maximum(q, 1e-300) / r[self.e_u])

    def lift_coeffs(self, constraint: Constraint) -> tuple[np.ndarray, float]:
        coeffs, a = constraint.as_geq()
        r = constraint.order
        return np.array([coeffs[w[:r]] for w in self.edges]), a


def _edge_system(potential: Potential, sft: Sft, order: int) -> _EdgeSystem:
    L = max(2, potential.range, order)
    phi = lift_potential(potential, sft, L)
    edges = sft.blocks(L)
    nodes = sft.blocks(L - 1)
    nidx = {w: i for i, w in enumerate(nodes)}
    e_u = np.array([nidx[w[:-1]] for w in edges], dtype=np.int64)
    e_v = np.array([nidx[w[1:]] for w in edges], dtype=np.int64)
    phi_e = np.array([phi.table[w] for w in edges])
    return _EdgeSystem(sft=sft, L=L, edges=edges, nodes=nodes,
                       e_u=e_u, e_v=e_v, phi_e=phi_e)


def _gibbs_edge_distribution(sys: _EdgeSystem, potential: Potential) -> np.ndarray:
    gm = gibbs_measure(lift_potential(potential, sys.sft, sys.L), sys.sft)
    bidx = gm.block_index_map
    q = np.empty(sys.n_edges)
    for i, w in enumerate(sys.edges):
        q[i] = gm.pi[bidx[w[:-1]]] * gm.Qa[bidx[w[:-1]], w[-1]]
    return q / q.sum()


def _max_cycle_mean(sys: _EdgeSystem, w: np.ndarray) -> float:
    """Karp's maximum cycle mean of per-edge weights on the node graph."""
    S = sys.n_nodes
    d = np.full((S + 1, S), -np.inf)
    d[0] = 0.0
    for k in range(1, S + 1):
        nxt = np.full(S, -np.inf)
        np.maximum.at(nxt, sys.e_v, d[k - 1][sys.e_u] + w)
        d[k] = nxt
    best = -np.inf
    for v in range(S):
        if not np.isfinite(d[S][v]):
            continue
        worst = np.inf
        for k in range(S):
            if np.isfinite(d[k][v]):
                worst = min(worst, (d[S][v] - d[k][v]) / (S - k))
        best = max(best, worst)
    return float(best)


def _critical_subgraph(sys: _EdgeSystem, w: np.ndarray, mcm: float) -> np.ndarray:
    """Edge mask of the union of maximum-mean cycles."""
    wp = w - mcm
    h = np.zeros(sys.n_nodes)
    for _ in range(sys.n_nodes + 1):
        nxt = h.copy()
        np.maximum.at(nxt, sys.e_v, h[sys.e_u] + wp)
        if np.allclose(nxt, h, rtol=0, atol=1e-13):
            break
        h = nxt
    tight = np.abs(h[sys.e_u] + wp - h[sys.e_v]) <= 1e-10
    adj = csr_matrix((np.ones(int(tight.sum())),
                      (sys.e_u[tight], sys.e_v[tight])),
                     shape=(sys.n_nodes, sys.n_nodes))
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    keep = np.zeros(sys.n_edges, dtype=bool)
    for ei in np.nonzero(tight)[0]:
        if labels[sys.e_u[ei]] == labels[sys.e_v[ei]]:
            u, v = sys.e_u[ei], sys.e_v[ei]
            comp = labels[u]
            comp_size = int((labels == comp).sum())
            if comp_size > 1 or u == v:
                keep[ei] = True
    return keep


def _rate_on_subgraph(sys: _EdgeSystem, mask: np.ndarray) -> tuple[float, np.ndarray]:
    """sup h + integral(phi) over invariant measures supported on the masked
    edges: log spectral radius of the restricted transfer matrix, with the
    Perron edge measure as optimizer."""
    if not mask.any():
        return -np.inf, np.zeros(sys.n_edges)
    M = np.zeros((sys.n_nodes, sys.n_nodes))
    for ei in np.nonzero(mask)[0]:
        M[sys.e_u[ei], sys.e_v[ei]] += math.exp(sys.phi_e[ei])
    vals, vecs = np.linalg.eig(M)
    k = int(np.argmax(np.abs(vals)))
    lam = float(np.abs(vals[k]))
    if lam <= 0:
        return -np.inf, np.zeros(sys.n_edges)
    r = np.abs(np.real(vecs[:, k]))
    lvals, lvecs = np.linalg.eig(M.T)
    kl = int(np.argmax(np.abs(lvals)))
    l = np.abs(np.real(lvecs[:, kl]))
    q = np.zeros(sys.n_edges)
    for ei in np.nonzero(mask)[0]:
        u, v = sys.e_u[ei], sys.e_v[ei]
        q[ei] = l[u] * math.exp(sys.phi_e[ei]) * r[v]
    if q.sum() <= 0:
        return -np.inf, q
    q /= q.sum()
    return math.log(lam), q


# ---------------------------------------------------------------------------
# Bregman (KL) projections and Dykstra
# ---------------------------------------------------------------------------

def _project_circulation(sys: _EdgeSystem, logw: np.ndarray,
                         tol: float = 1e-15, max_iters: int = 100_000) -> np.ndarray:
    """KL projection onto {q >= 0, sum q = 1, row sums = column sums}:
    multiplicative node scalings q = w * x_u / x_v, balanced by iteration."""
    lx = np.zeros(sys.n_nodes)
    logw = logw - logw.max()
    for _ in range(max_iters):
        logq = logw + lx[sys.e_u] - lx[sys.e_v]
        q = np.exp(logq - logq.max())
        out = sys.row_sums(q)
        inn = sys.col_sums(q)
        if np.abs(out - inn).max() <= tol * q.sum():
            break
        good = (out > 0) & (inn > 0)
        lx[good] += 0.5 * (np.log(inn[good]) - np.log(out[good]))
    logq = logw + lx[sys.e_u] - lx[sys.e_v]
    return logq - _logsumexp(logq)


def _project_halfspace(logw: np.ndarray, c: np.ndarray, a: float) -> np.ndarray:
    """KL projection of positive weights onto {<c, q> >= a} (ambient cone).

    Unlike the circulation set, this projection is scale sensitive, so the
    input must be used exactly as given (Dykstra feeds corrected points
    whose magnitude carries the multiplier memory).  The tilt equation is
    solved in shifted-exponent space to stay overflow safe.
    """
    if float(c.max()) <= 0:
        raise InfeasibleError(
            f"half-space <c,q> >= {a} unreachable (max coefficient {c.max()})")

    def gap(tau: float) -> float:
        # sign of (<c, w e^{tau c}> - a), computed at a safe exponent shift
        x = logw + tau * c
        mx = float(x.max())
        return float(np.exp(x - mx) @ c) - a * math.exp(-mx)

    if gap(0.0) >= 0.0:
        return logw
    lo, hi = 0.0, 1.0
    for _ in range(300):
        if gap(hi) >= 0.0:
            break
        lo, hi = hi, hi * 2.0
    else:
        raise InfeasibleError("could not bracket the half-space projection")
    tau = brentq(gap, lo, hi, xtol=1e-15, rtol=8.9e-16)
    return logw + tau * c


def _logsumexp(x: np.ndarray) -> float:
    mx = x.max()
    if not np.isfinite(mx):
        return float(mx)
    return float(mx + np.log(np.exp(x - mx).sum()))


def _dykstra_feasible(sys: _EdgeSystem, logq: np.ndarray,
                      cons: list[tuple[np.ndarray, float]],
                      tol: float = 1e-13, max_cycles: int = 2000) -> np.ndarray:
    """Bregman-Dykstra projection onto circulation /\\ simplex /\\ half-spaces."""
    n_sets = 1 + len(cons)
    corr = [np.zeros(sys.n_edges) for _ in range(n_sets)]
    for cycle in range(max_cycles):
        prev = logq
        z = logq + corr[0]
        logq = _project_circulation(sys, z)
        corr[0] = z - logq
        for i, (c, a) in enumerate(cons):
            z = logq + corr[i + 1]
            logq = _project_halfspace(z, c, a)
            corr[i + 1] = z - logq
        if cycle >= 1:
            q = np.exp(logq - _logsumexp(logq))
            circ_ok = np.abs(sys.row_sums(q) - sys.col_sums(q)).max() <= 10 * tol
            cons_ok = all(float(c @ q) >= a - 1e-11 for c, a in cons)
            if circ_ok and cons_ok and np.abs(logq - prev).max() <= 1e-13:
                break
    else:
        raise NoConvergenceError("Dykstra projection did not converge; the "
                                 "constraint set may be empty or degenerate")
    logq = _project_circulation(sys, logq)
    return logq - _logsumexp(logq)


# ---------------------------------------------------------------------------
# KKT residual
# ---------------------------------------------------------------------------

def _kkt_residual(sys: _EdgeSystem, q: np.ndarray,
                  cons: list[tuple[np.ndarray, float]],
                  active_tol: float = 1e-7) -> tuple[float, np.ndarray]:
    """Stationarity + feasibility residual of the first-order conditions,
    with multipliers fitted by nonnegative least squares on the active set."""
    g = sys.gradient(q)
    cols = [np.ones(sys.n_edges)]
    for u in range(1, sys.n_nodes):
        cols.append((sys.e_u == u).astype(float) - (sys.e_v == u).astype(float))
    active = [i for i, (c, a) in enumerate(cons)
              if abs(float(c @ q) - a) <= active_tol]
    while True:
        X = np.column_stack(cols + [-cons[i][0] for i in active])
        beta, *_ = np.linalg.lstsq(X, g, rcond=None)
        thetas = beta[sys.n_nodes:]
        if (thetas >= -1e-12).all():
            break
        active = [i for i, th in zip(active, thetas) if th > -1e-12]
    stat = float(np.abs(g - X @ beta).max())
    feas = max([0.0] + [max(0.0, a - float(c @ q)) for c, a in cons])
    theta_full = np.zeros(len(cons))
    for i, th in zip(active, thetas):
        theta_full[i] = max(0.0, th)
    return max(stat, feas), theta_full


# ---------------------------------------------------------------------------
# primal rate: entropic mirror descent
# ---------------------------------------------------------------------------

def rate_primal(constraints: ConstraintSet, potential: Potential, sft: Sft,
                tol: float = 1e-10, max_iters: int = 100_000) -> RateResult:
    """Maximize h(q) + integral(phi) over shift-invariant edge distributions
    meeting the constraints, by entropic mirror descent from the Gibbs edge
    measure with Bregman feasibility projections.

    An empty constraint polytope yields value -inf (sentinel), not an
    exception.
    """
    sys = _edge_system(potential, sft, constraints.order if constraints.functionals else 2)
    cons = [sys.lift_coeffs(f) for f in constraints.functionals]
    q0 = _gibbs_edge_distribution(sys, potential)

    # exact feasibility screen per functional (Karp); a supremum exactly on
    # the boundary collapses onto the union of maximum-mean cycles
    for c, a in cons:
        mcm = _max_cycle_mean(sys, c)
        if a > mcm + 1e-11:
            return RateResult(value=-math.inf, optimizer_q={}, dual_theta=None,
                              method="primal", iterations=0, kkt_residual=0.0)
        if abs(a - mcm) <= 1e-11:
            if len(cons) > 1:
                raise NoConvergenceError(
                    "boundary-degenerate geometry with multiple functionals")
            mask = _critical_subgraph(sys, c, mcm)
            val, q = _rate_on_subgraph(sys, mask)
            return RateResult(value=val,
                              optimizer_q=_q_dict(sys, q), dual_theta=None,
                              method="primal", iterations=0, kkt_residual=0.0)

    if all(float(c @ q0) >= a - 1e-14 for c, a in cons):
        kkt, theta = (_kkt_residual(sys, q0, cons) if cons else (0.0, np.zeros(0)))
        return RateResult(value=sys.value(q0), optimizer_q=_q_dict(sys, q0),
                          dual_theta=None, method="primal", iterations=0,
                          kkt_residual=float(kkt))

    logq = _dykstra_feasible(sys, np.log(q0), cons)
    q = np.exp(logq - _logsumexp(logq))
    fval = sys.value(q)
    eta = 1.0
    kkt = math.inf
    it = 0
    for it in range(1, max_iters + 1):
        g = sys.gradient(q)
        g = g - g.mean()  # gauge: gradients matter modulo constants
        accepted = False
        for _ in range(60):
            cand_log = _dykstra_feasible(sys, logq + eta * g, cons)
            cand = np.exp(cand_log - _logsumexp(cand_log))
            cand_val = sys.value(cand)
            if cand_val >= fval - 1e-15:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
        improved = cand_val - fval
        logq, q, fval = cand_log, cand, cand_val
        kkt, _ = _kkt_residual(sys, q, cons)
        if kkt <= tol:
            break
        eta = min(eta * 2.0, 1e6)
        if improved < 1e-16 and eta >= 1e6:
            break
    kkt, theta = _kkt_residual(sys, q, cons)
    return RateResult(value=float(sys.value(q)), optimizer_q=_q_dict(sys, q),
                      dual_theta=None, method="primal", iterations=it,
                      kkt_residual=float(kkt))


def _q_dict(sys: _EdgeSystem, q: np.ndarray) -> dict[tuple[int, ...], float]:
    return {w: float(q[i]) for i, w in enumerate(sys.edges)}


# ---------------------------------------------------------------------------
# dual rate: scalar tilting
# ---------------------------------------------------------------------------

def rate_dual(constraints: ConstraintSet, potential: Potential, sft: Sft,
              tol: float = 1e-11, primal_value: float | None = None) -> RateResult:
    """inf over theta >= 0 of P(phi + theta c) - theta a for a single
    '>=' functional (a '<=' one is negated), by golden-section search.

    When ``primal_value`` is supplied, a primal-dual gap beyond 1e-4 raises
    DualityGapError instead of being silently returned.
    """
    if len(constraints.functionals) != 1:
        raise ValidationError("rate_dual handles exactly one functional")
    f = constraints.functionals[0]
    coeffs, a = f.as_geq()
    sys = _edge_system(potential, sft, constraints.order)
    c_arr, _ = sys.lift_coeffs(f)
    mcm = _max_cycle_mean(sys, c_arr)
    if a > mcm + 1e-11:
        return RateResult(value=-math.inf, optimizer_q={}, dual_theta=None,
                          method="dual", iterations=0, kkt_residual=0.0)

    from .thermo import pressure  # local import to keep module load light

    evals = 0

    def d(theta: float) -> float:
        nonlocal evals
        evals += 1
        tilted = tilt_potential(potential, coeffs, theta, sft)
        return pressure(tilted, sft).log_lambda - theta * a

    theta_cap = 60.0 / max(1e-12, float(np.abs(c_arr).max()))
    lo, mid, hi = 0.0, 0.0, 0.0
    d0 = d(0.0)
    probe, dprev = 1.0, d0
    bracketed = False
    while probe <= theta_cap:
        dp = d(probe)
        if dp > dprev:
            hi = probe
            bracketed = True
            break
        lo, dprev = mid, dp
        mid = probe
        probe *= 2.0
    if not bracketed:
        slope = (dprev - d0) / max(mid, 1.0)
        if mid > 0 and slope < -1e-9:
            # still descending at the cap: the set is empty beyond the
            # maximum cycle mean, so the dual value runs to -inf
            return RateResult(value=-math.inf, optimizer_q={}, dual_theta=None,
                              method="dual", iterations=evals, kkt_residual=0.0)
        lo, hi = mid, theta_cap

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1, f2 = d(x1), d(x2)
    while hi - lo > tol:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = d(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = d(x2)
    theta = 0.5 * (lo + hi)
    if theta < tol:
        theta = 0.0
    value = d(theta)
    tilted = tilt_potential(potential, coeffs, theta, sft)
    q = _gibbs_edge_distribution(sys, tilted)
    if primal_value is not None and primal_value - value > _DUALITY_GAP_TOL:
        raise DualityGapError(
            f"primal {primal_value!r} exceeds dual {value!r} by more than "
            f"{_DUALITY_GAP_TOL}; the constraint geometry is degenerate")
    return RateResult(value=float(value), optimizer_q=_q_dict(sys, q),
                      dual_theta=(float(theta),), method="dual",
                      iterations=evals, kkt_residual=abs(float(c_arr @ q) - a)
                      if theta > 0 else 0.0)


# ---------------------------------------------------------------------------
# exact probabilities: (block, integer score) DP
# ---------------------------------------------------------------------------

def _exact_coeff_lattice(f: Constraint) -> tuple[dict[tuple[int, ...], int], int]:
    """Integer scores n_w and common denominator D with c_w = n_w / D."""
    fracs = {}
    for w, c in f.coeffs.items():
        if isinstance(c, Fraction):
            fr = c
        elif isinstance(c, int):
            fr = Fraction(c)
        elif isinstance(c, float) and float(c).is_integer():
            fr = Fraction(int(c))
        else:
            raise ValidationError(
                "exact probabilities need rational coefficients; pass Fraction "
                f"or integer values (got {c!r} for word {w})")
        fracs[w] = fr
    if len({fr for fr in fracs.values()}) > 8:
        raise ValidationError("exact probabilities support at most 8 distinct "
                              "coefficient values")
    D = 1
    for fr in fracs.values():
        D = D * fr.denominator // math.gcd(D, fr.denominator)
    return {w: int(fr * D) for w, fr in fracs.items()}, D


def _event_score_predicate(f: Constraint, m: int, D: int):
    """Predicate on exact integer total scores (the total of c*D over the m
    windows), plus a flag marking thresholds that land on the count lattice
    (where open and closed sets differ at this m)."""
    a = f.threshold if isinstance(f.threshold, Fraction) else Fraction(f.threshold)
    bound = a * m * D
    attainable = bound.denominator == 1
    if f.sense == ">=":
        pred = (lambda s: s >= bound) if f.closed else (lambda s: s > bound)
    else:
        pred = (lambda s: s <= bound) if f.closed else (lambda s: s < bound)
    return pred, attainable


def exact_probability(measure: MarkovMeasure, constraints: ConstraintSet,
                      m: int) -> LdpEstimate:
    """nu(E_m in F) exactly, by dynamic programming over (current block,
    accumulated integer score); single rational functional, m <= 4000.

    The event is decided on the exact integer score lattice, so open and
    closed thresholds are distinguished exactly; mass is accumulated in
    scaled floats (rescaled before underflow), accurate to a few ulps per
    DP step.
    """
    if len(constraints.functionals) != 1:
        raise ValidationError("exact_probability handles exactly one functional")
    if m < 1:
        raise ValidationError("m must be >= 1")
    if m > _EXACT_M_MAX:
        raise CountSpaceTooLargeError(f"m={m} beyond exact-DP range {_EXACT_M_MAX}")
    f = constraints.functionals[0]
    scores, D = _exact_coeff_lattice(f)
    pred, attainable = _event_score_predicate(f, m, D)

    sft = measure.sft
    r = constraints.order
    b = measure.block_order
    s = max(b, r - 1, 1)
    n = m + r - 1  # word length feeding the m windows
    n_min = min(scores.values())
    n_max = max(scores.values())
    span = (n_max - n_min) * m
    if (span + 1) * len(sft.blocks(s)) > _COUNT_STATE_BUDGET:
        raise CountSpaceTooLargeError(
            f"count DP needs {(span + 1) * len(sft.blocks(s))} cells")
    if n < s:
        return _exact_probability_enumerated(measure, constraints, m, pred,
                                             attainable, scores, D)

    states = sft.blocks(s)
    sidx = {w: i for i, w in enumerate(states)}
    bidx = measure.block_index_map
    # shifted per-window scores are >= 0, so the running index never leaves
    # [0, span]; the true total is index + m * n_min
    val = np.zeros((len(states), span + 1))
    for si, w in enumerate(states):
        mass = math.exp(log_cylinder_mass(measure, w))
        if mass == 0.0:
            continue
        sc = sum(scores[w[j: j + r]] - n_min for j in range(s - r + 1))
        val[si, sc] += mass

    edge_next = np.full((len(states), sft.alphabet_size), -1, dtype=np.int64)
    edge_q = np.zeros((len(states), sft.alphabet_size))
    edge_sc = np.zeros((len(states), sft.alphabet_size), dtype=np.int64)
    for si, w in enumerate(states):
        for a_sym in range(sft.alphabet_size):
            if not sft.allows(w[-1], a_sym):
                continue
            edge_next[si, a_sym] = sidx[w[1:] + (a_sym,)]
            edge_q[si, a_sym] = measure.Qa[bidx[w[s - b:]], a_sym]
            edge_sc[si, a_sym] = scores[(w + (a_sym,))[-r:]] - n_min

    log_scale = 0.0
    for _p in range(s, n):
        new = np.zeros_like(val)
        for si in range(len(states)):
            row = val[si]
            if not row.any():
                continue
            for a_sym in range(sft.alphabet_size):
                vi = edge_next[si, a_sym]
                if vi < 0 or edge_q[si, a_sym] == 0.0:
                    continue
                shift = int(edge_sc[si, a_sym])
                if shift == 0:
                    new[vi] += edge_q[si, a_sym] * row
                else:
                    new[vi, shift:] += edge_q[si, a_sym] * row[:-shift]
        val = new
        mx = val.max()
        if 0 < mx < 1e-250:
            val /= mx
            log_scale += math.log(mx)

    col = val.sum(axis=0)
    total = sum(float(col[i]) for i in range(span + 1)
                if col[i] > 0 and pred(i + n_min * m))
    if total <= 0.0:
        return LdpEstimate(m=m, log_prob_over_m=-math.inf, method="exact",
                           prob=0.0, threshold_attainable=attainable)
    log_p = math.log(total) + log_scale
    return LdpEstimate(m=m, log_prob_over_m=log_p / m, method="exact",
                       prob=total * math.exp(log_scale),
                       threshold_attainable=attainable)


def _exact_probability_enumerated(measure, constraints, m, pred, attainable,
                                  scores, D) -> LdpEstimate:
    """Brute-force path for degenerate tiny windows (block longer than the
    whole scored word)."""
    r = constraints.order
    n = m + r - 1
    total = 0.0
    for row in measure.sft.words_array(n):
        w = tuple(int(x) for x in row)
        sc = sum(scores[w[j: j + r]] for j in range(m))
        if pred(sc):
            total += math.exp(log_cylinder_mass(measure, w))
    log_p = math.log(total) if total > 0 else -math.inf
    return LdpEstimate(m=m, log_prob_over_m=log_p / m if total > 0 else -math.inf,
                       method="exact", prob=total, threshold_attainable=attainable)


# ---------------------------------------------------------------------------
# Monte Carlo probabilities (plain and exponentially tilted)
# ---------------------------------------------------------------------------

_MC_CHUNK = 100_000


def _event_evaluator(sft: Sft, constraints: ConstraintSet, m: int):
    """Vectorized event test on batches of (m + r - 1)-symbol orbits.

    Rational coefficients are scored on the exact integer lattice, so the
    event decision matches exact_probability bit for bit; other
    coefficients fall back to float comparison.
    """
    r = constraints.order
    A = sft.alphabet_size
    tests = []
    for f in constraints.functionals:
        try:
            scores, D = _exact_coeff_lattice(f)
            lookup = np.zeros(A ** r, dtype=np.int64)
            for w, nval in scores.items():
                code = 0
                for x in w:
                    code = code * A + x
                lookup[code] = nval
            a = f.threshold if isinstance(f.threshold, Fraction) else Fraction(f.threshold)
            bound = a * m * D
            num, den = bound.numerator, bound.denominator
            if f.sense == ">=":
                cmp = (lambda s: s * den >= num) if f.closed else (lambda s: s * den > num)
            else:
                cmp = (lambda s: s * den <= num) if f.closed else (lambda s: s * den < num)
            tests.append(("int", lookup, cmp))
        except ValidationError:
            lookup = np.zeros(A ** r)
            for w, cval in f.coeffs.items():
                code = 0
                for x in w:
                    code = code * A + x
                lookup[code] = float(cval)
            a = float(f.threshold) * m
            if f.sense == ">=":
                cmp = (lambda s: s >= a) if f.closed else (lambda s: s > a)
            else:
                cmp = (lambda s: s <= a) if f.closed else (lambda s: s < a)
            tests.append(("float", lookup, cmp))

    def evaluate(orbits: np.ndarray) -> np.ndarray:
        codes = orbits[:, :m].astype(np.int32)
        for c in range(1, r):
            codes *= A
            codes += orbits[:, c:c + m]
        ok = np.ones(orbits.shape[0], dtype=bool)
        for _kind, lookup, cmp in tests:
            totals = lookup[codes].sum(axis=1)
            ok &= cmp(totals)
        return ok

    return evaluate


def _step_log_potential(measure: MarkovMeasure) -> Potential:
    """The per-step log transition mass of a full-support Markov measure as
    a potential of range block_order + 1 (its Gibbs measure is the measure
    itself up to the initial distribution)."""
    sft = measure.sft
    b = measure.block_order
    bidx = measure.block_index_map
    table = {}
    for w in sft.blocks(b + 1):
        lq = float(measure.log_Qa[bidx[w[:b]], w[b]])
        if not math.isfinite(lq):
            raise NotMarkovError(
                "tilted sampling needs a measure with full support on "
                f"admissible transitions; {w} has zero mass")
        table[w] = lq
    return Potential(range=b + 1, table=table, name=f"log-step({measure.name})")


def tilted_proposal(measure: MarkovMeasure, constraints: ConstraintSet,
                    theta: float) -> MarkovMeasure:
    """Markov proposal proportional to the measure reweighted by
    exp(theta * sum of the functional over windows)."""
    if len(constraints.functionals) != 1:
        raise ValidationError("tilting needs exactly one functional")
    coeffs, _a = constraints.functionals[0].as_geq()
    base = _step_log_potential(measure)
    tilted = tilt_potential(base, coeffs, theta, measure.sft)
    return gibbs_measure(tilted, measure.sft)


def mc_probability(measure: MarkovMeasure, constraints: ConstraintSet, m: int,
                   n_samples: int, seed: int,
                   tilt: float | None = None) -> LdpEstimate:
    """Monte Carlo estimate of nu(E_m in F): plain sampling, or importance
    sampling under the theta-tilted proposal with exact likelihood-ratio
    reweighting.  Deterministic given the seed; zero observed mass raises
    ZeroHitsError rather than fabricating a value."""
    if n_samples < 100:
        raise ValidationError("need at least 100 samples")
    if m < 1:
        raise ValidationError("m must be >= 1")
    r = constraints.order
    length = m + r - 1
    evaluate = _event_evaluator(measure.sft, constraints, m)
    f = constraints.functionals[0]
    _pred, attainable = _event_score_predicate(
        f, m, _exact_coeff_lattice(f)[1]) if _is_rational(f) else (None, False)

    total = total_sq = 0.0
    done = 0
    if tilt is None:
        while done < n_samples:
            cn = min(_MC_CHUNK, n_samples - done)
            orbits = orbit_batch(measure, length, cn, seed, first_index=done)
            hits = evaluate(orbits)
            total += float(hits.sum())
            total_sq += float(hits.sum())  # indicator squared
            done += cn
        p_hat = total / n_samples
        if p_hat == 0.0:
            raise ZeroHitsError(f"no events in {n_samples} plain MC samples at m={m}")
        stderr = math.sqrt(max(0.0, p_hat * (1.0 - p_hat)) / n_samples)
        return LdpEstimate(m=m, log_prob_over_m=math.log(p_hat) / m, method="mc",
                           prob=p_hat, stderr=stderr, n_samples=n_samples,
                           threshold_attainable=attainable)

    from .measures import batch_log_cylinder_mass

    proposal = tilted_proposal(measure, constraints, float(tilt))
    while done < n_samples:
        cn = min(_MC_CHUNK, n_samples - done)
        orbits = orbit_batch(proposal, length, cn, seed, first_index=done)
        hits = evaluate(orbits)
        vals = np.zeros(cn)
        if hits.any():
            sub = orbits[hits]
            logw = (batch_log_cylinder_mass(measure, sub)
                    - batch_log_cylinder_mass(proposal, sub))
            vals[hits] = np.exp(logw)
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
        done += cn
    p_hat = total / n_samples
    if p_hat == 0.0:
        raise ZeroHitsError(f"no events in {n_samples} tilted MC samples at m={m}")
    var = max(0.0, (total_sq - n_samples * p_hat * p_hat) / (n_samples - 1))
    stderr = math.sqrt(var / n_samples)
    return LdpEstimate(m=m, log_prob_over_m=math.log(p_hat) / m, method="mc",
                       prob=p_hat, stderr=stderr, n_samples=n_samples,
                       threshold_attainable=attainable)


def _is_rational(f: Constraint) -> bool:
    try:
        _exact_coeff_lattice(f)
        return True
    except ValidationError:
        return False


# ---------------------------------------------------------------------------
# bounds report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    estimate: LdpEstimate
    gap: float
    corrected_gap: float | None


@dataclass(frozen=True)
class LdpReport:
    """Finite-size rates against the variational rate, with a fitted
    (a ln m + b)/m correction describing the approach to the limit."""

    rows: tuple[ReportRow, ...]
    rate: float
    primal: RateResult
    dual: RateResult | None
    fit_a: float | None
    fit_b: float | None
    trend_tol: float
    violation: bool


def ldp_bounds_report(measure: MarkovMeasure, potential: Potential,
                      constraints: ConstraintSet, m_grid: Sequence[int],
                      mc_n_samples: int = 200_000, seed: int = 0,
                      trend_tol: float = 5e-3) -> LdpReport:
    """Per-m finite-size rates (exact DP where possible, tilted MC beyond),
    the variational rate from both optimizers, the gap sequence, and a
    fitted (a ln m + b)/m finite-size correction.

    A violation is flagged when an exact finite-m rate exceeds the rate by
    more than the fitted correction plus ``trend_tol`` (the upper bound is
    an asymptotic statement; the report checks the trend, not per-m
    inequalities).
    """
    primal = rate_primal(constraints, potential, measure.sft)
    dual = None
    theta = None
    if len(constraints.functionals) == 1:
        dual = rate_dual(constraints, potential, measure.sft,
                         primal_value=primal.value if math.isfinite(primal.value) else None)
        theta = dual.dual_theta[0] if dual.dual_theta else None
    rate = primal.value

    estimates = []
    for m in sorted(set(int(m) for m in m_grid)):
        try:
            est = exact_probability(measure, constraints, m)
        except (CountSpaceTooLargeError, ValidationError):
            est = mc_probability(measure, constraints, m, mc_n_samples, seed,
                                 tilt=theta if theta and theta > 0 else None)
        estimates.append(est)

    fit_a = fit_b = None
    finite_exact = [e for e in estimates
                    if e.method == "exact" and math.isfinite(e.log_prob_over_m)]
    fit_pool = finite_exact if len(finite_exact) >= 2 else [
        e for e in estimates if math.isfinite(e.log_prob_over_m)]
    if len(fit_pool) >= 2 and math.isfinite(rate):
        X = np.column_stack([np.log([e.m for e in fit_pool]),
                             np.ones(len(fit_pool))])
        y = np.array([(e.log_prob_over_m - rate) * e.m for e in fit_pool])
        (fit_a, fit_b), *_ = np.linalg.lstsq(X, y, rcond=None)
        fit_a, fit_b = float(fit_a), float(fit_b)

    rows = []
    violation = False
    for e in estimates:
        gap = e.log_prob_over_m - rate if math.isfinite(rate) else math.inf
        corrected = None
        if fit_a is not None and math.isfinite(gap):
            corrected = gap - (fit_a * math.log(e.m) + fit_b) / e.m
            if e.method == "exact" and corrected > trend_tol:
                violation = True
        rows.append(ReportRow(estimate=e, gap=float(gap),
                              corrected_gap=corrected))
    return LdpReport(rows=tuple(rows), rate=float(rate), primal=primal,
                     dual=dual, fit_a=fit_a, fit_b=fit_b,
                     trend_tol=trend_tol, violation=violation)
