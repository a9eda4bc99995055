"""Built-in acceptance suite: every release-gating check, runnable from the
CLI (--selftest) and mirrored by the pytest acceptance module.

Each check returns a CheckResult; printed output is deterministic (no
timings), so repeated runs are byte-identical.  Elapsed seconds are kept
on the result objects for the runtime budget assertions in the tests and
for the manifest, never for stdout.

The Parry McMillan-Breiman row is expected to FAIL: the estimator's mean
carries the deterministic (H(pi) - h)/n boundary term while the maximal
entropy measure has near-deterministic cylinder masses, so the reported
half-width (about 8.5e-6 at n=500, 2e4 samples) cannot cover the bias
(about 2.2e-4) at any n; the companion row checks that the deviation
equals the predicted boundary term, which is the substance of the
almost-sure convergence at reachable scales.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np

from . import certify, ldp, measures, shift, thermo

# frozen seeds for every stochastic check (reproducibility criterion)
SEED_MC_PLAIN = 11
SEED_MC_TILTED = 11
SEED_MB = 15
SEED_RANDOM_POTENTIALS = 1000
SEED_RANDOM_MEASURES = 5000


@dataclass
class CheckResult:
    criterion: str
    name: str
    passed: bool
    detail: str
    elapsed: float
    expected_failure: bool = False

    def line(self) -> str:
        status = "PASS" if self.passed else (
            "FAIL (expected: spec-level impossibility, see notes)"
            if self.expected_failure else "FAIL")
        return f"{status:<6} {self.criterion:<4} {self.name:<34} {self.detail}"


def _systems():
    s2 = shift.full_shift(2)
    gm = shift.golden_mean_shift()
    return s2, gm


def check_pressure_identities(tol: float = 1e-9) -> CheckResult:
    t0 = time.perf_counter()
    s2, gm = _systems()
    p_full = thermo.pressure(thermo.constant_potential(s2, 0.0), s2).log_lambda
    p_gold = thermo.pressure(thermo.constant_potential(gm, 0.0), gm).log_lambda
    golden = math.log((1.0 + math.sqrt(5.0)) / 2.0)
    slope = math.log(shift.count_words(gm, 30) / shift.count_words(gm, 29))
    err = max(abs(p_full - math.log(2.0)), abs(p_gold - golden), abs(slope - p_gold))
    return CheckResult("1", "pressure-identities", err <= tol,
                       f"max error {err:.3e} (tol {tol:g})",
                       time.perf_counter() - t0)


def _random_cases():
    s2, gm = _systems()
    s3 = shift.full_shift(3)
    c3 = shift.build_sft(3, [[1, 1, 0], [0, 1, 1], [1, 0, 1]], name="three-cycle")
    sfts = [s2, gm, s3, c3]
    for i in range(20):
        sft = sfts[i % 4]
        yield sft, thermo.random_potential(sft, 1 + i % 3,
                                           seed=SEED_RANDOM_POTENTIALS + i)


def check_normalization_and_rate() -> CheckResult:
    t0 = time.perf_counter()
    worst_p0 = worst_rate = 0.0
    for sft, phi in _random_cases():
        pr = thermo.pressure(phi, sft)
        p0 = thermo.pressure(thermo.normalize(phi, sft, pr), sft).log_lambda
        worst_p0 = max(worst_p0, abs(p0))
        free = ldp.rate_primal(ldp.ConstraintSet(order=1, functionals=()), phi, sft)
        worst_rate = max(worst_rate, abs(free.value - pr.log_lambda))
    ok = worst_p0 <= 1e-9 and worst_rate <= 1e-8
    return CheckResult("2", "normalized-pressure-and-rate", ok,
                       f"|P(normalized)| <= {worst_p0:.3e}, "
                       f"|rate-P| <= {worst_rate:.3e}",
                       time.perf_counter() - t0)


def check_equilibrium_measures() -> CheckResult:
    t0 = time.perf_counter()
    worst_gibbs = 0.0
    worst_other = -math.inf
    for i, (sft, phi) in enumerate(_random_cases()):
        pr = thermo.pressure(phi, sft)
        nu = thermo.gibbs_measure(phi, sft)
        worst_gibbs = max(worst_gibbs, abs(thermo.equilibrium_residual(nu, phi, sft, pr)))
        rng = measures.philox_stream(SEED_RANDOM_MEASURES + i, 0)
        A = sft.alphabet_size
        Q = np.where(sft.transitions > 0, rng.random((A, A)) + 0.05, 0.0)
        Q /= Q.sum(axis=1, keepdims=True)
        other = measures.markov_measure(sft, Q, name=f"random-{i}")
        worst_other = max(worst_other,
                          thermo.equilibrium_residual(other, phi, sft, pr))
    ok = worst_gibbs <= 1e-9 and worst_other < -1e-4
    return CheckResult("3", "equilibrium-residuals", ok,
                       f"|gibbs residual| <= {worst_gibbs:.3e}, "
                       f"max other residual {worst_other:.3e}",
                       time.perf_counter() - t0)


def _matched_pairs():
    s2, gm = _systems()
    b7 = measures.bernoulli([0.3, 0.7])
    phi7 = thermo.site_potential(s2, [math.log(0.3), math.log(0.7)], name="log-p")
    phi0 = thermo.constant_potential(gm, 0.0)
    parry = thermo.gibbs_measure(phi0, gm)
    phin = thermo.normalize(phi0, gm)
    return (b7, phi7, s2), (parry, phin, gm)


def check_defect_certification() -> CheckResult:
    t0 = time.perf_counter()
    pair_b, pair_p = _matched_pairs()
    mismatch = 0
    worst_reeval = 0.0
    for nu, phi, _sft in (pair_b, pair_p):
        for n in range(1, 17):
            for m in range(1, n + 1):
                tt = n - m
                ex = certify.exact_defect_extrema(nu, phi, m, tt)
                _w, defects = certify.enumerate_defects(nu, phi, m, tt)
                if not (ex.min_defect == defects.min() and ex.max_defect == defects.max()):
                    mismatch += 1
                worst_reeval = max(
                    worst_reeval,
                    abs(certify.defect_of_word(nu, phi, ex.argmax_word, m, tt)
                        - ex.max_defect),
                    abs(certify.defect_of_word(nu, phi, ex.argmin_word, m, tt)
                        - ex.min_defect))
    nu7, phi7, s2 = pair_b
    kc = certify.strong_gibbs_constant(nu7, phi7, 3, 400)
    k_expect = 3.0 * abs(math.log(0.3))
    table = certify.weak_gibbs_table(nu7, phi7, [0.01], [0.125], 400)
    n_req = table.rows[0].n_required
    b5 = measures.bernoulli([0.5, 0.5])
    lo, hi = certify.defect_extrema_sweep(b5, phi7, 0, 2000)
    neg_ok = bool((hi[1:] >= 0.5).all()) and not certify.weak_gibbs_table(
        b5, phi7, [0.25], [1.0], 200).certified
    ok = (mismatch == 0 and worst_reeval <= 1e-12
          and abs(kc.constant - k_expect) <= 1e-12 and kc.fit_residual < 1e-9
          and n_req == 362 and neg_ok)
    return CheckResult("4", "weak-gibbs-certification", ok,
                       f"DP==enum mismatches {mismatch}, reeval {worst_reeval:.1e}, "
                       f"K={kc.constant:.6f} (resid {kc.fit_residual:.1e}), "
                       f"N(0.01,1/8)={n_req}, negative control "
                       f"{'flags FAILED' if neg_ok else 'NOT flagged'}",
                       time.perf_counter() - t0)


def _binomial_tail_rate(m: int) -> float:
    p = Fraction(sum(comb(m, j) for j in range((7 * m) // 10, m + 1)), 2 ** m)
    return math.log(p) / m


def check_ldp_trend() -> CheckResult:
    t0 = time.perf_counter()
    s2, _gm = _systems()
    b5 = measures.bernoulli([0.5, 0.5])
    phi = thermo.constant_potential(s2, -math.log(2.0))
    cset = ldp.frequency_constraint(s2, (1,), Fraction(7, 10))
    closed_form = -(0.7 * math.log(0.7) + 0.3 * math.log(0.3)) - math.log(2.0)
    rp = ldp.rate_primal(cset, phi, s2)
    rd = ldp.rate_dual(cset, phi, s2, primal_value=rp.value)
    rate_err = max(abs(rp.value - closed_form), abs(rd.value - closed_form))
    dp_err = 0.0
    for m in (20, 200, 400):
        est = ldp.exact_probability(b5, cset, m)
        oracle = _binomial_tail_rate(m)
        dp_err = max(dp_err, abs(est.log_prob_over_m - oracle)
                     / max(1.0, abs(oracle)))
    report = ldp.ldp_bounds_report(b5, phi, cset, [20, 100, 200, 400, 1000, 2000])
    tail = [row for row in report.rows if row.estimate.m == 2000][0]
    ok = (rate_err <= 1e-6 and dp_err <= 1e-12
          and abs(tail.corrected_gap) < 5e-3 and not report.violation)
    return CheckResult("5", "ldp-rate-and-trend", ok,
                       f"rate err {rate_err:.2e}, DP-vs-binomial rel {dp_err:.1e}, "
                       f"corrected gap at m=2000 {tail.corrected_gap:.2e}",
                       time.perf_counter() - t0)


def check_markov_cross(n_samples: int = 1_000_000) -> CheckResult:
    t0 = time.perf_counter()
    _s2, gm = _systems()
    phi0 = thermo.constant_potential(gm, 0.0)
    parry = thermo.gibbs_measure(phi0, gm)
    phin = thermo.normalize(phi0, gm)
    eq = measures.cylinder_mass(parry, (0, 1))
    threshold = Fraction(12, 10) * Fraction(eq).limit_denominator(10 ** 12)
    cset = ldp.frequency_constraint(gm, (0, 1), threshold)
    rp = ldp.rate_primal(cset, phin, gm)
    rd = ldp.rate_dual(cset, phin, gm, primal_value=rp.value)
    gap = abs(rp.value - rd.value)
    est = ldp.exact_probability(parry, cset, 500)
    mc = ldp.mc_probability(parry, cset, 500, n_samples, SEED_MC_TILTED,
                            tilt=rd.dual_theta[0])
    z = abs(mc.prob - est.prob) / mc.stderr
    ok = gap <= 1e-6 and z <= 3.0
    return CheckResult("6", "markov-tilted-cross-check", ok,
                       f"primal-dual gap {gap:.2e}, tilted MC z={z:.2f} "
                       f"(n={n_samples})",
                       time.perf_counter() - t0)


def check_mcmillan_breiman() -> list[CheckResult]:
    t0 = time.perf_counter()
    out = []
    b5 = measures.bernoulli([0.5, 0.5])
    st = measures.mcmillan_breiman_estimate(b5, 500, 2000, SEED_MB)
    ok = st.variance == 0.0 and abs(st.mean - math.log(2.0)) <= 1e-13
    out.append(CheckResult("7", "mcmillan-breiman-fair-coin", ok,
                           f"mean {st.mean!r}, variance {st.variance!r}",
                           time.perf_counter() - t0))
    t0 = time.perf_counter()
    b7 = measures.bernoulli([0.3, 0.7])
    h7 = measures.entropy(b7)
    st7 = measures.mcmillan_breiman_estimate(b7, 500, 20_000, SEED_MB)
    dev7 = abs(st7.mean - h7)
    out.append(CheckResult("7", "mcmillan-breiman-bernoulli-0.7",
                           dev7 <= st7.confidence_halfwidth,
                           f"|mean-h| {dev7:.2e} vs halfwidth "
                           f"{st7.confidence_halfwidth:.2e}",
                           time.perf_counter() - t0))
    t0 = time.perf_counter()
    _s2, gm = _systems()
    parry = thermo.gibbs_measure(thermo.constant_potential(gm, 0.0), gm)
    hp = measures.entropy(parry)
    stp = measures.mcmillan_breiman_estimate(parry, 500, 20_000, SEED_MB)
    devp = abs(stp.mean - hp)
    out.append(CheckResult("7", "mcmillan-breiman-parry-literal",
                           devp <= stp.confidence_halfwidth,
                           f"|mean-h| {devp:.2e} vs halfwidth "
                           f"{stp.confidence_halfwidth:.2e}",
                           time.perf_counter() - t0,
                           expected_failure=True))
    t0 = time.perf_counter()
    bias = (float(-(parry.pi * np.log(parry.pi)).sum()) - hp) / 500.0
    dev_corr = abs(stp.mean - (hp + bias))
    out.append(CheckResult("7", "mcmillan-breiman-parry-boundary",
                           dev_corr <= stp.confidence_halfwidth,
                           f"|mean-h-(H(pi)-h)/n| {dev_corr:.2e} vs halfwidth "
                           f"{stp.confidence_halfwidth:.2e}",
                           time.perf_counter() - t0))
    return out


def check_reproducibility() -> CheckResult:
    t0 = time.perf_counter()
    s2, _gm = _systems()
    b5 = measures.bernoulli([0.5, 0.5])
    cset = ldp.frequency_constraint(s2, (1,), Fraction(7, 10))
    mc1 = ldp.mc_probability(b5, cset, 20, 10_000, SEED_MC_PLAIN)
    mc2 = ldp.mc_probability(b5, cset, 20, 10_000, SEED_MC_PLAIN)
    orb1 = measures.sample_orbit(b5, 1000, SEED_MC_PLAIN)
    orb2 = measures.sample_orbit(b5, 1000, SEED_MC_PLAIN)
    split = np.vstack([measures.orbit_batch(b5, 64, 3, SEED_MC_PLAIN),
                       measures.orbit_batch(b5, 64, 5, SEED_MC_PLAIN, first_index=3)])
    whole = measures.orbit_batch(b5, 64, 8, SEED_MC_PLAIN)
    ok = (mc1.prob == mc2.prob and mc1.stderr == mc2.stderr
          and np.array_equal(orb1.symbols, orb2.symbols)
          and np.array_equal(split, whole))
    return CheckResult("8", "seeded-reproducibility", ok,
                       f"mc bitwise {'==' if mc1.prob == mc2.prob else '!='}, "
                       f"orbits bitwise equal, chunk-split invariant",
                       time.perf_counter() - t0)


def run_all(pressure_tol: float = 1e-9,
            mc_samples: int = 1_000_000) -> list[CheckResult]:
    """Run the full acceptance suite with the frozen seeds."""
    results = [
        check_pressure_identities(tol=pressure_tol),
        check_normalization_and_rate(),
        check_equilibrium_measures(),
        check_defect_certification(),
        check_ldp_trend(),
        check_markov_cross(n_samples=mc_samples),
    ]
    results.extend(check_mcmillan_breiman())
    results.append(check_reproducibility())
    return results
