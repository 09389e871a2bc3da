"""Acceptance criteria, one recorded PASS/FAIL line each, at the stated tolerances."""

import time

import numpy as np
import pytest

from kahlerlab.errors import DefectiveM
from kahlerlab.foliation import cross_validate_linearization, extract_linearization, trace_leaf
from kahlerlab.geodesic_solver import (
    GeodesicProblem,
    SolverConfig,
    epsilon_sweep,
    monotonicity_check,
    newton_solve,
    symmetry_check,
)
from kahlerlab.linear_model import compatibility_search, solve_ivp
from kahlerlab.matrix_core import BlockSystem, HessianPair, Verdict, dichotomy_suite, obstruction_certificate
from kahlerlab.potential_builder import CutoffProfile, build_potential
from kahlerlab.torus import ScalarField, TorusSpec, involution_pullback

from conftest import cosine_field, record_criterion
from oracles import closed_form_constant, random_problems, rk4_linear


def test_dichotomy_suite():
    t0 = time.perf_counter()
    stats = dichotomy_suite(10_000, (1, 2, 3), seed=0, tol=1e-8)
    dt = time.perf_counter() - t0
    ok = stats.violations == 0 and stats.worst <= 1e-8 and dt < 60
    assert record_criterion(
        "dichotomy suite",
        ok,
        f"{stats.samples} systems, {stats.eigenpairs} eigenpairs, violations={stats.violations}, "
        f"worst min(|Im l^2|, ||x|-|y||)={stats.worst:.2e} (tol 1e-8), {dt:.1f}s (< 60s)",
    )


def test_obstruction_certificate():
    worst = 0.0
    all_obstructed = True
    for q in ([3.0], [2.5, 3.5], [2.1, 4.0, 7.5], [2.2, 2.9, 3.3, 5.0]):
        rep = obstruction_certificate(HessianPair.diagonal([1.0] * len(q), q))
        all_obstructed &= rep.verdict is Verdict.OBSTRUCTED
        want = np.sort(2 - np.square(q))
        worst = max(worst, float(np.abs(np.sort(rep.eigenvalues.real) - want).max()),
                    float(np.abs(rep.eigenvalues.imag).max()))
    boundary = obstruction_certificate(HessianPair.diagonal([1.0], [2.0])).verdict
    ok = all_obstructed and worst <= 1e-12 and boundary is Verdict.NOT_OBSTRUCTED
    assert record_criterion(
        "obstruction certificate",
        ok,
        f"distinct q > 2 obstructed={all_obstructed}, max |eig(R) - (2 - q^2)|={worst:.1e} (tol 1e-12), "
        f"m=1 |Q|=2 verdict={boundary.value}",
    )


def test_compatibility_search():
    t0 = time.perf_counter()
    s1 = compatibility_search(HessianPair.diagonal([1.0], [3.0]), 1000, seed=7)
    s2 = compatibility_search(HessianPair.diagonal([1.0, 1.0], [2.5, 3.5]), 1000, seed=7)
    ctrl = compatibility_search(HessianPair.diagonal([1.0, 1.0], [0.0, 0.0]), 1000, seed=7)
    dt = time.perf_counter() - t0
    ok = s1.successes == 0 and s2.successes == 0 and ctrl.successes >= 1 and dt < 120
    assert record_criterion(
        "compatibility search",
        ok,
        f"(1,3): {s1.successes}/1000 compatible; (I, diag(2.5,3.5)): {s2.successes}/1000; "
        f"(I, 0): {ctrl.successes}/1000 (need >= 1); {dt:.1f}s (< 120s)",
    )


def test_linear_model_oracle():
    t0 = time.perf_counter()
    worst, count, defective = 0.0, 0, 0
    for m, seed in ((1, 10), (2, 11), (3, 12)):
        n = 34 if m < 3 else 32
        A, B, a = random_problems(n, m, seed)
        ref = rk4_linear(A, B, a, 1.0, 1e-4)
        for i in range(n):
            try:
                got = solve_ivp(BlockSystem(A[i], B[i]), a[i])(1.0)
            except DefectiveM:
                defective += 1
                continue
            worst = max(worst, float(np.abs(got - ref[i]).max()))
            count += 1
    dt = time.perf_counter() - t0
    ok = count == 100 and worst <= 1e-6 and dt < 60
    assert record_criterion(
        "linear-model oracle",
        ok,
        f"{count} problems (defective {defective}), max |eigenmode - RK4(h=1e-4)| at s=1: {worst:.1e} "
        f"(tol 1e-6), {dt:.1f}s (< 60s)",
    )


def test_potential_builder():
    t0 = time.perf_counter()
    errors = {}
    built = None
    for N in (64, 128, 256):
        built = build_potential(0, 3, TorusSpec(1, 4.0, N), margin=0.1)
        errors[N] = built.hessian_error
    v = built.field
    invariant = bool(np.array_equal(involution_pullback(v).values, v.values))
    rates = [errors[64] / errors[128], errors[128] / errors[256]]
    second_order = all(3.0 <= r <= 5.0 for r in rates)
    bounds = [CutoffProfile(e) for e in (0.4, 0.2, 0.1, 0.05)]
    ratios = [max(b.bound_t_dpsi, b.bound_t2_d2psi) / b.epsilon for b in bounds]
    linear = max(ratios) / min(ratios) <= 2.0
    dt = time.perf_counter() - t0
    ok = built.psh_margin > 0 and invariant and errors[256] <= 1e-3 and second_order and linear and dt < 60
    assert record_criterion(
        "potential builder",
        ok,
        f"N=256: eps={built.cutoff.epsilon}, pshMargin={built.psh_margin:.3f} (> 0), h-invariant={invariant}, "
        f"hessianError={errors[256]:.3g} (tol 1e-3); error ratios over N=64/128/256: "
        f"{rates[0]:.2f}, {rates[1]:.2f} (need ~4); cutoff C spread {max(ratios) / min(ratios):.2f} (<= 2); "
        f"{dt:.1f}s",
    )


def test_solver_closed_form():
    T = TorusSpec(1, 4.0, 32)
    t0 = time.perf_counter()
    sol = newton_solve(GeodesicProblem(T, ScalarField(T, np.full(T.shape, 0.3)), 0.01, 16))
    dev = float(np.abs(sol.u - closed_form_constant(np.linspace(0, 1, 18), 0.3, 0.01)[:, None, None]).max())
    dt = time.perf_counter() - t0
    assert record_criterion(
        "solver closed form", dev <= 1e-8, f"max deviation {dev:.1e} (tol 1e-8), {dt:.2f}s"
    )


def test_symmetry_and_comparison(torus64):
    t0 = time.perf_counter()
    cfg = SolverConfig()
    built = build_potential(0, 3, torus64, margin=0.1)
    data = {"built(0,3)": built.field, "0.05cos": cosine_field(torus64)}
    sym, mono = {}, {}
    for name, v in data.items():
        s1 = newton_solve(GeodesicProblem(torus64, v, 0.05, 16), cfg)
        s2 = newton_solve(GeodesicProblem(torus64, ScalarField(torus64, v.values + 0.1), 0.05, 16), cfg)
        sym[name] = symmetry_check(s1)
        mono[name] = monotonicity_check(s1, s2, cfg.newton_tol, cfg.newton_tol)
    dt = time.perf_counter() - t0
    ok = max(sym.values()) <= 10 * cfg.newton_tol and all(mono.values()) and dt < 300
    detail = ", ".join(f"{k}: symmetry {sym[k]:.1e}, monotone(v, v+0.1)={mono[k]}" for k in data)
    assert record_criterion(
        "symmetry and comparison", ok, f"{detail} (tol {10 * cfg.newton_tol:.0e}), {dt:.1f}s (< 300s)"
    )


def test_foliation_consistency(small_solutions):
    t0 = time.perf_counter()
    C = 1.0
    drift, hol, ratio = {}, {}, {}
    for eps, sol in small_solutions.items():
        drift[eps] = trace_leaf(sol, 0j).drift()
        hol[eps] = trace_leaf(sol, 0.3 + 0.2j).hol_residual
    sol = small_solutions[0.01]
    ex = extract_linearization(sol)
    devs = [cross_validate_linearization(sol, ex, 1.0, dt) for dt in (0.1, 0.05, 0.025)]
    halving = [devs[0] / devs[1], devs[1] / devs[2]]
    drift_ok = all(drift[e] <= C * e for e in drift)
    hol_ok = hol[0.02] / hol[0.01] >= 1.5
    halves_ok = all(1.5 <= r <= 2.5 for r in halving)
    dt = time.perf_counter() - t0
    ok = drift_ok and hol_ok and halves_ok and dt < 600
    assert record_criterion(
        "foliation consistency",
        ok,
        f"central drift {max(drift.values()):.1e} (<= {C:g}*eps), holomorphy residual "
        f"{hol[0.02]:.2e} -> {hol[0.01]:.2e} (ratio {hol[0.02] / hol[0.01]:.2f} >= 1.5), "
        f"cross-validation deviation {devs[0]:.2e}/{devs[1]:.2e}/{devs[2]:.2e} at dt=0.1/0.05/0.025, "
        f"halving ratios {halving[0]:.2f}, {halving[1]:.2f} (need 2 +- 25%), {dt:.1f}s",
    )


def test_obstruction_diagnostic_sweep(torus64, tmp_path):
    t0 = time.perf_counter()
    schedule = [0.1, 0.05, 0.02, 0.01]
    built = build_potential(0, 3, torus64, margin=0.1)
    runs = {"obstructed": built.field, "unobstructed": cosine_field(torus64)}
    summary, ok = [], True
    for name, v in runs.items():
        rep = epsilon_sweep(GeodesicProblem(torus64, v, schedule[0], 16), schedule)
        path = tmp_path / f"{name}.csv"
        rep.to_csv(path)
        rows = path.read_text().strip().splitlines()
        ok &= rep.all_converged and len(rows) == len(schedule) + 1
        diag = ", ".join(f"{r.third_deriv:.3g}" for r in rep.rows)
        summary.append(f"{name}: converged={rep.all_converged}, diagnostic [{diag}], trend {rep.trend()}")
    dt = time.perf_counter() - t0
    ok &= dt < 1800
    assert record_criterion(
        "obstruction diagnostic (exploratory)", ok, "; ".join(summary) + f"; CSV emitted; {dt:.1f}s"
    )
