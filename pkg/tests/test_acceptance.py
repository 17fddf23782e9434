"""Acceptance gate: one test per criterion, each recording a pass/fail line.

The summary hook in conftest.py prints the recorded lines at the end of the
run.  Seeds are fixed to the criterion number.  Monte-Carlo criteria are
marked ``slow`` (select them out with ``-m "not slow"``).
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from fbm_schemes.calculus import (
    SdeModel,
    affine,
    hermite,
    logistic,
    polynomial,
    power_to_hermite,
    sin_offset,
    tanh,
    zero,
)
from fbm_schemes.experiment import (
    ExperimentSetup,
    correlation_with_se,
    fit_slope,
    ks_standard_normal,
    run_experiment,
)
from fbm_schemes.grid_fbm import DyadicGrid, SeedSpec, fbm_covariance, restrict_path, sample_fbm
from fbm_schemes.reference import JacobianError, SolutionPath, discrete_jacobian_product, reference_solution
from fbm_schemes.schemes import SchemeSpec, classify_regime, cn_step
from fbm_schemes.variations import c_10star_constant, c_l_constant, hermite_variation_kernel, stieltjes_sum

ACCEPTANCE_LINES: list[str] = []


def _record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def _sin_logistic() -> SdeModel:
    return SdeModel(sin_offset(2.0), logistic(), 1.0, "sin+2/logistic")


# -- 1. fBm law ---------------------------------------------------------------

def test_criterion_1_fbm_law():
    t0 = time.perf_counter()
    grid = DyadicGrid(8)
    n_paths = 10_000
    rng = np.random.default_rng(1)
    pairs = rng.integers(1, grid.n_points, size=(10, 2))
    worst = 0.0
    failures = []
    for h in (0.25, 0.3, 0.4, 0.5):
        path = sample_fbm(grid, h, [SeedSpec(1, i) for i in range(n_paths)], n_paths=n_paths)
        for i, j in pairs:
            x, y = path.values[:, i], path.values[:, j]
            prod = (x - x.mean()) * (y - y.mean())
            emp = prod.mean()
            se = prod.std(ddof=1) / math.sqrt(n_paths)
            exact = fbm_covariance(grid.points[i], grid.points[j], h)
            z = abs(emp - exact) / se
            worst = max(worst, z)
            if z > 3:
                failures.append((h, i, j, round(z, 2)))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 60
    _record(1, ok, f"max |emp-exact|/SE = {worst:.2f} over 40 pairs (limit 3), {elapsed:.1f}s (limit 60s)"
            + (f", failing {failures}" if failures else ""))
    assert ok


# -- 2. constants ---------------------------------------------------------------

def test_criterion_2_constants():
    half = [abs(c_l_constant(l, 0.5).value - math.sqrt(math.factorial(l))) for l in (2, 3, 4)]
    ok_half = max(half) <= 1e-10
    c = c_l_constant(2, 0.3, tol=1e-10)
    c2 = c_l_constant(2, 0.3, terms=2 * c.truncation_terms)
    drift = abs(c.value - c2.value)
    ok_doubling = drift <= 1e-8
    grid = (0.3, 0.35, 0.4, 0.45, 0.5)
    c10 = [c_10star_constant(h).value for h in grid]
    ok_monotone = all(a > b for a, b in zip(c10, c10[1:]))
    ok_zero = c10[-1] < 1e-6
    ok = ok_half and ok_doubling and ok_monotone and ok_zero
    _record(2, ok, f"C_(l)(1/2) err {max(half):.1e}; C_(2)(0.3) doubling drift {drift:.1e}; "
            f"C_10* on {grid} = {[round(v, 4) for v in c10]} "
            f"(monotone={ok_monotone}, limit at 1/2 -> 0: {ok_zero})")
    assert ok_half and ok_doubling
    assert ok_monotone
    assert ok_zero, f"C_10*(1/2) = {c10[-1]:.6f}, not 0"


# -- 3. Milstein a.s. limit with drift --------------------------------------------

@pytest.mark.slow
def test_criterion_3_milstein_as_limit():
    t0 = time.perf_counter()
    h = 0.3
    setup = ExperimentSetup(_sin_logistic(), SchemeSpec.milstein(2), h, tuple(range(8, 14)), 19, 200,
                            seed=3, batch_size=100)
    res = run_experiment(setup)
    slope, slope_se = res.slope()
    target = -(4 * h - 1)
    med = float(np.median(res.ratios()[-1]))
    elapsed = time.perf_counter() - t0
    ok_slope = abs(slope - target) <= 0.08
    ok_ratio = 0.8 <= med <= 1.2
    ok = ok_slope and ok_ratio and elapsed < 600
    _record(3, ok, f"slope {slope:.3f} +/- {slope_se:.3f} (target {target:.2f} +/- 0.08); "
            f"median ratio at m=13 {med:.3f} (band [0.8, 1.2]); {elapsed:.0f}s")
    assert ok_ratio
    assert ok_slope
    assert elapsed < 600


# -- 4. Milstein driftless, linear sigma --------------------------------------------

@pytest.mark.slow
def test_criterion_4_milstein_driftless_linear():
    h, y0 = 0.35, 1.0
    model = SdeModel(affine(1.0), zero(), y0, "x/0")
    setup = ExperimentSetup(model, SchemeSpec.milstein(3), h, tuple(range(8, 14)), 19, 200, seed=4)
    res = run_experiment(setup)
    # closed-form oracle: kappa_4 = 3, g_{4,1} = -x/24, Y = y0 exp(B), J = exp(B)
    oracle = -3.0 * y0 * 1.0 * np.exp(res.B_T) / 24
    np.testing.assert_allclose(res.prediction, oracle, rtol=1e-12)
    ratio = res.normalized()[-1] / oracle
    frac = float(np.mean((ratio >= 0.9) & (ratio <= 1.1)))
    ok = frac >= 0.9
    _record(4, ok, f"{frac:.1%} of 200 per-path ratios in [0.9, 1.1] at m=13 (need >= 90%); "
            f"median {np.median(ratio):.3f}")
    assert ok


# -- 5. Crank-Nicolson mixed normal -------------------------------------------------

@pytest.mark.slow
def test_criterion_5_cn_mixed_normal():
    t0 = time.perf_counter()
    setup = ExperimentSetup(_sin_logistic(), SchemeSpec.cn(), 0.3, (12,), 18, 1000, seed=5, batch_size=250)
    res = run_experiment(setup)
    z = res.standardized()[-1]
    _, p = ks_standard_normal(z)
    r, r_se = correlation_with_se(z, res.B_T)
    elapsed = time.perf_counter() - t0
    ok_ks = p > 0.01
    ok_corr = abs(r) <= 3 * r_se
    ok = ok_ks and ok_corr and elapsed < 900
    _record(5, ok, f"KS p = {p:.3g} (need > 0.01), mean {z.mean():.3f}, var {z.var(ddof=1):.3f}; "
            f"corr with B_T {r:.3f} (3 SE = {3 * r_se:.3f}); {elapsed:.0f}s")
    assert ok_ks
    assert ok_corr
    assert elapsed < 900


# -- 6. Euler-Maruyama regression --------------------------------------------------

@pytest.mark.slow
def test_criterion_6_euler_maruyama():
    h = 0.4
    setup = ExperimentSetup(_sin_logistic(), SchemeSpec.em(), h, tuple(range(8, 14)), 19, 200, seed=6,
                            batch_size=100)
    res = run_experiment(setup)
    slope, slope_se = res.slope()
    target = -(2 * h - 1)
    med = float(np.median(res.ratios()[-1]))
    ok_slope = abs(slope - target) <= 0.08
    ok_ratio = 0.8 <= med <= 1.2
    _record(6, ok_slope and ok_ratio, f"slope {slope:.3f} +/- {slope_se:.3f} (target {target:.2f} +/- 0.08); "
            f"median ratio at m=13 {med:.3f} (band [0.8, 1.2])")
    assert ok_ratio
    assert ok_slope


# -- 7. Hermite-variation CLT ---------------------------------------------------

@pytest.mark.slow
def test_criterion_7_hermite_variation_variance():
    grid = DyadicGrid(10)
    n_paths = 2000
    rows = []
    ok = True
    for h in (0.3, 0.35):
        path = sample_fbm(grid, h, [SeedSpec(7, i) for i in range(n_paths)], n_paths=n_paths)
        for l in (2, 3):
            total = stieltjes_sum(1.0, hermite_variation_kernel(l, path))
            var = float(np.var(total, ddof=1)) / grid.horizon_T
            c2 = c_l_constant(l, h).value ** 2
            rel = var / c2 - 1
            ok &= abs(rel) <= 0.10
            rows.append(f"H={h} l={l}: {var:.3f} vs {c2:.3f} ({rel:+.1%})")
    _record(7, ok, "; ".join(rows) + " (limit 10%)")
    assert ok


# -- 8. discrete Jacobian product ---------------------------------------------------

@pytest.mark.slow
def test_criterion_8_jacobian_product():
    h, n_paths, levels = 0.35, 40, np.arange(6, 13)
    model = _sin_logistic()
    fine = sample_fbm(DyadicGrid(18), h, [SeedSpec(8, i) for i in range(n_paths)], n_paths=n_paths)
    ref = reference_solution(model, fine)
    errs, skipped = [], 0
    for i in range(n_paths):
        path, sol = fine.path(i), SolutionPath(ref.grid, ref.values[i], ref.jacobian[i])
        try:
            row = []
            for m in levels:
                M = discrete_jacobian_product(model, restrict_path(path, int(m)), sol)
                row.append(np.max(np.abs(M / sol.restrict(int(m)).jacobian - 1)))
        except JacobianError:
            # the product is only defined on paths where every factor is positive
            skipped += 1
            continue
        errs.append(row)
    errs = np.array(errs)
    slope, se = fit_slope(levels, errs.mean(axis=0))
    q = 2
    need = ((q + 1) * h - 1) * 0.8
    ok = -slope >= need and len(errs) >= n_paths // 2
    _record(8, ok, f"slope of log2 mean max|M/J-1| {slope:.3f} +/- {se:.3f} (need <= {-need:.3f}); "
            f"{len(errs)} paths used, {skipped} outside the positivity event")
    assert ok


# -- 9. regime classifier -------------------------------------------------------

def _expected_milstein(k: int, h: float, drift: bool):
    """Hand copy of the Milstein case list: (limit kind, rate, coefficient descriptor)."""
    eps = 1e-12
    top = {2: "kappa_3*gbar:3", 3: "kappa_4*g_k1:4", 4: "kappa_5*gbar:5", 5: "kappa_6*g_k1:6",
           6: "kappa_7*gbar:7"}[k]
    # lower end of the convergent range and the top-term rate
    low = {2: 1 / 4, 3: 1 / 4, 4: 1 / 6, 5: 1 / 6, 6: 1 / 8}[k]
    top_rate = {2: 4 * h - 1, 3: 4 * h - 1, 4: 6 * h - 1, 5: 6 * h - 1, 6: 8 * h - 1}[k]
    if h <= low + eps:
        return "divergent", None, "-"
    if not drift or k in (2, 3):
        return "almost_sure_drift_integral", top_rate, top
    mid = {4: 1 / 4, 5: 1 / 4, 6: 1 / 6}[k]
    if abs(h - mid) < eps:
        return "almost_sure_drift_integral", 2 * mid, f"g12 + {top}"
    if h > mid:
        return "almost_sure_drift_integral", 2 * h, "g12"
    return "almost_sure_drift_integral", top_rate, top


def _expected_cn(h: float):
    eps = 1e-12
    if h <= 1 / 6 + eps:
        return "divergent", None, "-"
    if h <= 1 / 4 + eps:
        return "open", None, "-"
    return "mixed_normal", 3 * h - 0.5, "C_(3)*cn_g3"


def test_criterion_9_regime_table():
    hs = sorted(set(np.round(np.linspace(0.01, 0.49, 50), 10).tolist())
                | {1 / 8, 1 / 7, 1 / 6, 1 / 5, 1 / 4, 1 / 3})
    mismatches = []
    checked = 0
    for drift in (True, False):
        for k in range(2, 7):
            spec = SchemeSpec.milstein(k)
            for h in hs:
                rep = classify_regime(spec, h, b_vanishes=not drift)
                got = (rep.limit_kind, rep.rate_exponent, rep.coefficient_descriptor)
                exp = _expected_milstein(k, h, drift)
                checked += 1
                if got[0] != exp[0] or got[2] != exp[2] or (exp[1] is not None and abs(got[1] - exp[1]) > 1e-12):
                    mismatches.append((k, drift, h, got, exp))
        for h in hs:
            rep = classify_regime(SchemeSpec.cn(), h, b_vanishes=not drift)
            got = (rep.limit_kind, rep.rate_exponent, rep.coefficient_descriptor)
            exp = _expected_cn(h)
            checked += 1
            if got[0] != exp[0] or got[2] != exp[2] or (exp[1] is not None and abs(got[1] - exp[1]) > 1e-12):
                mismatches.append(("cn", drift, h, got, exp))
    ok = not mismatches
    _record(9, ok, f"{checked} (scheme, H, drift) cells checked, {len(mismatches)} mismatches")
    assert ok, mismatches[:5]


# -- 10. invariant suites ------------------------------------------------------

def _fd(f, x, k, step=1e-2):
    j = np.arange(k + 1)
    w = np.array([(-1.0) ** (k - i) * math.comb(k, i) for i in j])

    def central(s):
        return sum(wi * f(x + (ji - k / 2) * s) for wi, ji in zip(w, j)) / s**k

    return (4 * central(step / 2) - central(step)) / 3


def test_criterion_10_invariants():
    t0 = time.perf_counter()
    failures = []
    x = np.linspace(-1.5, 1.5, 7)
    for f in (sin_offset(2.0), logistic(), tanh(rate=1.2), polynomial([1.0, -2.0, 0.5, 0.25])):
        jet = f.jet(x, 4)
        for k in range(1, 5):
            if not np.allclose(jet[k], _fd(f, x, k), rtol=2e-4, atol=2e-4):
                failures.append(f"jet {f.name} order {k}")
    xs = np.linspace(-3, 3, 13)
    for l in range(7):
        recon = sum(c * hermite(d, xs) for d, c in power_to_hermite(l).items())
        if not np.allclose(recon, xs**l, rtol=1e-12, atol=1e-10):
            failures.append(f"hermite decomposition l={l}")
    rng = np.random.default_rng(10)
    for _ in range(200):
        a, c = rng.uniform(0.1, 2.0), rng.uniform(-1, 1)
        y, dB, dt = rng.uniform(-3, 3), rng.uniform(-0.5, 0.5), rng.uniform(1e-4, 0.05)
        z = a * dB + c * dt
        if abs(cn_step(SdeModel(affine(a), affine(c)), y, dB, dt) - y * (1 + z / 2) / (1 - z / 2)) > 1e-11:
            failures.append("cn closed form")
            break
    for seed in range(20):
        p = sample_fbm(DyadicGrid(9), 0.3, SeedSpec(10, seed))
        if not np.array_equal(restrict_path(restrict_path(p, 6), 3).values, restrict_path(p, 3).values):
            failures.append("restriction")
        model = _sin_logistic()
        ref = reference_solution(model, p)
        if not np.array_equal(ref.restrict(6).restrict(3).values, ref.restrict(3).values):
            failures.append("solution restriction")
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 120
    _record(10, ok, f"jets, Hermite identity l<=6, CN closed form, restriction: "
            f"{len(failures)} failures, {elapsed:.1f}s (limit 120s)")
    assert ok, failures
