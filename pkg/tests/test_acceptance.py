"""Acceptance suite.  Each test prints one ``CRITERION n: PASS|FAIL`` line with its measurements.

Tolerances are pinned literals, not imported constants, so a change in the
package cannot silently loosen them.
"""
import math
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from conekit.audit import audit_assumptions
from conekit.cli import _initial, _model, load_config
from conekit.kinetic_models import KernelSpec, LinearEnvelope, build_model
from conekit.monotone_solver import SolverConfig, TimeGrid, residual_integral_form, solve
from conekit.oracle import closed_form_constant_kernel, compare, rk4_solve, split_step_transport_oracle
from conekit.ordered_space import StateVec, moment
from conekit.transport import TransportSpec, solve_mild

CFG = SolverConfig(audit_samples=256)


def report(capsys, n, checks):
    """Print the verdict line plus one indented line per sub-check, then assert."""
    ok = all(passed for _, passed, _ in checks)
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'}")
        for name, passed, detail in checks:
            print(f"    [{'ok' if passed else 'FAIL'}] {name}: {detail}")
    failed = [name for name, passed, _ in checks if not passed]
    assert not failed, f"criterion {n} failed: {failed}"


def bench(name):
    cfg, base = load_config(name)
    model, L = _model(cfg, base)
    f0 = _initial(cfg, base, model.sizes, L)
    return cfg, model, f0, TimeGrid(cfg["grid"]["T"], cfg["grid"]["M"])


def refinement_order(coarse, fine, ratio):
    if coarse <= 0 or fine <= 0:
        return float("nan")
    return math.log(coarse / fine) / math.log(ratio)


@pytest.fixture(scope="module")
def constant_bench():
    cfg, model, f0, grid = bench("bench_constant")
    with threadpool_limits(limits=1):
        start = time.perf_counter()
        res = solve(model, f0, grid, CFG)
        elapsed = time.perf_counter() - start
    return model, f0, grid, res, elapsed


@pytest.fixture(scope="module")
def additive_bench():
    _, model, f0, grid = bench("bench_additive")
    return model, f0, grid, solve(model, f0, grid, CFG)


@pytest.fixture(scope="module")
def transport_bench():
    cfg, model, f0, grid = bench("bench_transport")
    tr = TransportSpec(cfg["model"]["spatial"]["L"], cfg["model"]["spatial"]["c"])
    return model, tr, f0, grid, solve_mild(model, tr, f0, grid, CFG), cfg["oracle"]["substeps"]


@pytest.fixture(scope="module")
def constant_refinement(constant_bench):
    model, f0, _, res512, _ = constant_bench
    runs = {512: res512}
    for M in (256, 1024):
        runs[M] = solve(model, f0, TimeGrid(2.0, M), CFG)
    return runs


@pytest.fixture(scope="module")
def constant_rk4(constant_bench):
    model, f0, grid, _, _ = constant_bench
    return rk4_solve(model, f0, TimeGrid(2.0, 4096), grid)


def test_criterion_1_constant_benchmark(capsys, constant_bench, constant_rk4):
    model, f0, grid, res, elapsed = constant_bench
    N_T = float(res.trajectory.states[-1].sum())
    k = np.arange(1, 33)
    cf_err = 0.0
    for t in (0.5, 1.0, 2.0):
        node = int(round(t / grid.h))
        exact = closed_form_constant_kernel(1.0, 1.0, k, t)
        cf_err = max(cf_err, float(np.max(np.abs(constant_rk4.states[node, :32, 0] - exact))))
    report(capsys, 1, [
        ("N(T) vs 0.5", abs(N_T - 0.5) <= 2e-3, f"|{N_T:.10f} - 0.5| = {abs(N_T - 0.5):.3e} <= 2e-3"),
        ("closed form vs RK4", cf_err <= 1e-6, f"sup k<=32, t in {{0.5,1,2}}: {cf_err:.3e} <= 1e-6"),
        ("runtime, 1 thread", elapsed < 10.0, f"{elapsed:.2f} s < 10 s ({res.iterations_used} sweeps)"),
    ])


def test_criterion_2_eq5_ledger(capsys, constant_bench, additive_bench, transport_bench, constant_refinement):
    checks = []
    for name, model, f0, res in (
        ("constant", constant_bench[0], constant_bench[1], constant_bench[3]),
        ("additive", additive_bench[0], additive_bench[1], additive_bench[3]),
        ("transport", transport_bench[0], transport_bench[2], transport_bench[4]),
    ):
        L0 = moment(model.lam, 1, f0)
        worst = float(np.max(np.abs(res.diagnostics.nodes["eq5_residual"])))
        checks.append((f"{name} residual", worst <= 1e-5 * L0, f"{worst:.3e} <= 1e-5 * {L0:.4g}"))
    r = {M: float(np.max(np.abs(run.diagnostics.nodes["eq5_residual"]))) for M, run in constant_refinement.items()}
    order = refinement_order(r[256], r[1024], 4.0)
    checks.append(("refinement order M=256 -> 1024", order >= 1.8,
                   f"residuals {r[256]:.3e}, {r[512]:.3e}, {r[1024]:.3e}; order {order:.3f} >= 1.8"))
    report(capsys, 2, checks)


def test_criterion_3_bound7c(capsys, constant_bench, additive_bench, transport_bench):
    checks = []
    for name, res in (("constant", constant_bench[3]), ("additive", additive_bench[3]),
                      ("transport", transport_bench[4])):
        led = res.diagnostics
        worst = float(np.min(led.nodes["bound7c_margin"]))
        checks.append((name, worst >= -1e-6 * led.lam2_norm0,
                       f"min margin {worst:.4g} >= -1e-6 * {led.lam2_norm0:.4g}"))
    report(capsys, 3, checks)


def test_criterion_4_iterate_ledger(capsys, constant_bench, additive_bench, transport_bench):
    checks = []
    for name, res in (("constant", constant_bench[3]), ("additive", additive_bench[3]),
                      ("transport", transport_bench[4])):
        led = res.diagnostics
        viol = int(np.sum(led.sweeps["order_violations"]))
        m = led.sweep_margins
        checks.append((f"{name} order", viol == 0, f"{viol} violations beyond 1e-12 over {len(led.sweeps['sweep'])} sweeps"))
        checks.append((f"{name} Lambda ledger", m["apriori"] >= -1e-8, f"worst relative margin {m['apriori']:.3e} >= -1e-8"))
        checks.append((f"{name} Lambda_1 ledger", m["lambda1"] >= -1e-8, f"worst relative margin {m['lambda1']:.3e} >= -1e-8"))
        checks.append((f"{name} second moment", m["pov2"] >= -1e-6, f"worst relative margin {m['pov2']:.3e} >= -1e-6"))
    report(capsys, 4, checks)


def test_criterion_5_oracle_equivalence(capsys, constant_bench, additive_bench, constant_rk4):
    checks = []
    model, f0, grid, res = additive_bench
    additive_rk4 = rk4_solve(model, f0, TimeGrid(grid.T, 4096), grid)
    for name, mono, ref, tol in (("constant", constant_bench[3], constant_rk4, 2e-3),
                                 ("additive", res, additive_rk4, 5e-3)):
        rep = compare(mono.trajectory, ref)
        checks.append((f"{name} sup distance", rep.sup <= tol, f"{rep.sup:.3e} <= {tol:g}"))
        excess = np.asarray(mono.trajectory.states) - np.asarray(ref.states)
        worst = float(np.max(np.sum(np.clip(excess, 0, None), axis=(1, 2))))
        checks.append((f"{name} domination", worst <= tol, f"max ||(f - F)+|| = {worst:.3e} <= {tol:g}"))
    report(capsys, 5, checks)


def test_criterion_6_assumption_audit(capsys):
    checks = []
    for family in ("constant", "additive"):
        rep = audit_assumptions(build_model(KernelSpec(family), 64), samples=10_000, seed=0)
        worst = min(c.worst_margin for c in rep.checks.values())
        checks.append((f"{family} all checks", rep.passed and worst >= 0,
                       f"failed {rep.failed() or 'none'}; worst margin {worst:.3e}"))
    rep = audit_assumptions(build_model(KernelSpec("multiplicative"), 64), samples=10_000, seed=0)
    for name in ("A0", "A2_nonneg", "A2_isotone", "A3_lambda1", "A3_povzner"):
        c = rep.checks[name]
        checks.append((f"multiplicative {name}", c.passed, f"worst margin {c.worst_margin:.3e}"))
    a1 = rep.checks["A1_isotone"]
    verdict = "pass" if a1.passed else "fail, demoted to audit-only"
    checks.append(("multiplicative A1 isotonicity (recorded)", True, f"{verdict}; worst margin {a1.worst_margin:.3e}"))
    report(capsys, 6, checks)


def test_criterion_7_transport(capsys, transport_bench):
    model, tr, f0, grid, res, substeps = transport_bench
    rep = compare(res.trajectory, split_step_transport_oracle(model, tr, f0, grid, substeps))
    hom = build_model(KernelSpec("constant"), model.sizes)
    mild = np.asarray(solve_mild(hom, tr, f0, grid, CFG).trajectory.states)
    plain = np.asarray(solve(hom, f0, grid, CFG).trajectory.states)
    s = tr.shift_per_step(grid.h)
    gap = max(float(np.max(np.abs(mild[m] - np.roll(plain[m], m * s, axis=1)))) for m in range(grid.M + 1))
    scale = float(np.max(plain))
    report(capsys, 7, [
        ("split-step distance", rep.sup <= 1e-3, f"{rep.sup:.3e} <= 1e-3 (L={tr.cells}, c={tr.speed:g} cells/time)"),
        ("homogeneous commutation", gap <= 1e-12 * scale, f"max |mild - shifted| = {gap:.3e} <= 1e-12 * {scale:.3g}"),
    ])


def test_criterion_8_degenerate_branches(capsys):
    grid = TimeGrid(1.0, 16)
    m = build_model(KernelSpec("constant"), 8)
    zero = solve(m, StateVec.zeros(8), grid, CFG)
    inert = build_model(KernelSpec("constant", kappa=0.0), 8, a_env=LinearEnvelope(0, 0), rho_env=LinearEnvelope(0, 0))
    f0 = StateVec(np.linspace(1.0, 0.1, 8))
    const = solve(inert, f0, grid, CFG)
    states = np.asarray(const.trajectory.states)
    report(capsys, 8, [
        ("zero datum", zero.iterations_used == 0 and not np.asarray(zero.trajectory.states).any(),
         f"{zero.iterations_used} sweeps, trajectory identically 0"),
        ("a = 0 datum", bool(np.all(states == f0.entries)),
         f"{const.iterations_used} sweeps, every node equals f0 bitwise"),
    ])


def test_criterion_9_nested_monotonicity(capsys):
    model = build_model(KernelSpec("constant"), 16)
    f0_b = StateVec.monodisperse(16)
    f0_a = StateVec(0.5 * f0_b.entries)
    grid = TimeGrid(1.0, 64)
    big = solve(model, f0_b, grid, CFG, keep_iterates=True)
    small = solve(model, f0_a, grid, CFG, keep_iterates=True, a_frozen=big.a_f0)
    checks = []
    for n in (2, 3):
        for m in (3, 5):
            if n > m:
                continue
            lo, hi = small.iterates[n - 1], big.iterates[m - 1]
            slack = 1e-12 * np.maximum(np.abs(lo), np.abs(hi))
            viol = int(np.count_nonzero(lo > hi + slack))
            checks.append((f"n={n}, m={m}", viol == 0, f"{viol} violations beyond 1e-12 relative"))
    report(capsys, 9, checks)


def test_criterion_10_integral_form(capsys, constant_bench, constant_refinement):
    model, f0, _, _, _ = constant_bench
    r = {M: float(np.max(residual_integral_form(model, run, f0))) for M, run in constant_refinement.items()}
    order = refinement_order(r[256], r[1024], 4.0)
    report(capsys, 10, [
        ("residual at M=512", r[512] <= 5e-6, f"{r[512]:.3e} <= 5e-6"),
        ("refinement order M=256 -> 1024", order >= 1.8,
         f"residuals {r[256]:.3e}, {r[512]:.3e}, {r[1024]:.3e}; order {order:.3f} >= 1.8"),
    ])
