"""Acceptance gates, one test per criterion.

Each test records a single ``PASS``/``FAIL`` line; the lines are printed in
the pytest terminal summary (see ``conftest.py``) and also when this file is
run directly with ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from rsctmc.avg_eigen import (  # noqa: E402
    check_lyapunov,
    evaluate_policy,
    poisson_residual,
    search_certificate,
    stationary_distribution,
)
from rsctmc.hjb_discounted import (  # noqa: E402
    ThetaPolicy,
    risk_neutral_discounted_value,
    solve_eps,
    solve_limit,
)
from rsctmc.hjb_finite import hjb_residual, picard_solve, solve_finite_horizon  # noqa: E402
from rsctmc.model import load_model, random_model  # noqa: E402
from rsctmc.policy_iter import acdpe_residual, brute_force_average, policy_iteration  # noqa: E402
from rsctmc.sim import (  # noqa: E402
    mc_average_growth,
    mc_discounted_cost,
    mc_exp_hitting,
    mc_finite_cost,
)

from conftest import MODELS, SUITE10, SUITE20, single_state, symmetric, with_costs  # noqa: E402

RESULTS: dict[int, str] = {}
THETA = 0.5
N_MC = 100_000
CERT_GRID = np.round(np.arange(0.5, 3.0001, 0.05), 10)


def _record(n: int, title: str, failures: list[str], detail: str = "") -> None:
    status = "PASS" if not failures else "FAIL"
    text = detail if not failures else "; ".join(failures[:4])
    RESULTS[n] = f"{status} criterion {n}: {title}" + (f" ({text})" if text else "")
    assert not failures, RESULTS[n]


def _m2():
    return load_model((MODELS / "m2.json").read_text())


def _check(failures, ok, message):
    if not ok:
        failures.append(message)


# 1. closed forms

def test_criterion_1_closed_forms():
    fails = []
    one = single_state(c0=2.0, g0=1.0)
    grid, _ = solve_finite_horizon(one, THETA, 1.0, 1000)
    err_f = abs(grid.phi[0, 0] - math.exp(THETA * (2.0 * 1.0 + 1.0)))
    _check(fails, err_f <= 1e-6, f"finite error {err_f:.3g}")

    err_d = 0.0
    for c0, alpha in ((1.0, 1.0), (1.5, 0.5), (0.7, 3.0)):
        sol = solve_eps(single_state(c0=c0), alpha, 1e-3, 0.9, 10_000)
        err_d = max(err_d, float(np.abs(sol.W[:, 0] - np.exp(sol.theta_grid * c0 / alpha)).max()))
    _check(fails, err_d <= 1e-8, f"discounted error {err_d:.3g}")

    err_r = err_h = 0.0
    cases = [symmetric(c0=c0) for c0 in (0.0, 0.7, 2.0)]
    cases += [with_costs(random_model(s), cost=1.3) for s in SUITE10]
    for m in cases:
        for p in m.policies():
            ev = evaluate_policy(m, p, THETA)
            c0 = float(m.policy_cost(p)[0])
            err_r = max(err_r, abs(ev.rho - c0))
            err_h = max(err_h, float(np.abs(ev.h - 1.0).max()))
    _check(fails, err_r <= 1e-10 and err_h <= 1e-10, f"average errors rho {err_r:.3g}, h {err_h:.3g}")
    _record(1, "closed forms", fails,
            f"finite {err_f:.1e} <= 1e-6, discounted {err_d:.1e} <= 1e-8, "
            f"average rho {err_r:.1e} / h {err_h:.1e} <= 1e-10")


# 2. RK4 against Picard

def test_criterion_2_rk4_vs_picard():
    fails, worst = [], 0.0
    for s in SUITE10:
        m = random_model(s)
        rk, _ = solve_finite_horizon(m, THETA, 2.0, 2000)
        pc = picard_solve(m, THETA, 2.0, 2000)
        d = float(np.abs(rk.phi - pc.phi).max())
        worst = max(worst, d)
        _check(fails, d <= 1e-6, f"seed {s}: {d:.3g}")
    _record(2, "RK4 vs Picard on 10 models", fails, f"max sup gap {worst:.2e} <= 1e-6")


# 3. solvers against Monte Carlo on M2

@pytest.mark.slow
def test_criterion_3_solver_vs_mc():
    m2 = _m2()
    fails, notes = [], []

    grid, pol = solve_finite_horizon(m2, THETA, 2.0, 2000)
    for i in range(m2.n):
        e = mc_finite_cost(m2, pol, THETA, 2.0, N_MC, seed=7, start=i)
        ce, se = e.certainty_equivalent(THETA)
        d = abs(ce - grid.psi[0, i])
        notes.append(f"psi({i}) {d / se:.2f} SE")
        _check(fails, d <= 3 * se, f"finite psi({i}) off by {d:.3g} > 3 SE {3 * se:.3g}")

    # eps = 1e-3 with 8990 steps puts theta = 0.5 on the grid
    eps = 1e-3
    sol = solve_eps(m2, 1.0, eps, 0.9, 8990)
    k = int(np.argmin(np.abs(sol.theta_grid - THETA)))
    th = float(sol.theta_grid[k])
    for i in range(m2.n):
        e = mc_discounted_cost(m2, ThetaPolicy(sol, th), th, 1.0, N_MC, seed=3, start=i)
        eps_bias = math.expm1(eps * m2.cost_sup / 1.0) * sol.W[k, i]
        d = abs(e.mean - sol.W[k, i])
        tol = 3 * e.std_error + e.bias_bound + eps_bias
        notes.append(f"W({i}) {d:.2g}/{tol:.2g}")
        _check(fails, d <= tol, f"discounted W({i}) off by {d:.3g} > {tol:.3g}")

    for p in m2.policies():
        ev = evaluate_policy(m2, p, THETA)
        e = mc_average_growth(m2, p, THETA, 100.0, N_MC, seed=11)
        d = abs(e.mean - ev.rho)
        tol = 3 * e.std_error + e.bias_bound
        notes.append(f"rho{list(p)} {d:.2g}/{tol:.2g}")
        _check(fails, d <= tol, f"growth {list(p)} off by {d:.3g} > {tol:.3g}")
    _record(3, "solver vs Monte Carlo on M2, N=1e5", fails, ", ".join(notes))


# 4. policy iteration against brute force

def test_criterion_4_policy_iteration():
    fails, worst, runs = [], 0.0, 0
    for s in SUITE20:
        m = random_model(s)
        bf = brute_force_average(m, THETA)
        finals = []
        for start in m.policies():
            res = policy_iteration(m, THETA, start)
            runs += 1
            d = abs(res.rho_star - bf.rho_star)
            worst = max(worst, d)
            _check(fails, d <= 1e-8, f"seed {s} start {start}: {d:.3g}")
            r = [rho for _, rho in res.trace]
            _check(fails, all(b < a for a, b in zip(r, r[1:])), f"seed {s}: trace not decreasing")
            _check(fails, len(res.trace) <= m.n_policies, f"seed {s}: {len(res.trace)} iterations")
            finals.append(res.rho_star)
        _check(fails, max(finals) - min(finals) <= 1e-8, f"seed {s}: start dependence")
    _record(4, "policy iteration = brute force on 20 models", fails,
            f"{runs} runs from every start, max |rho - rho_bf| {worst:.1e} <= 1e-8")


# 5. residual gates

def test_criterion_5_residuals():
    fails = []
    m2 = _m2()
    r = [hjb_residual(m2, THETA, solve_finite_horizon(m2, THETA, 2.0, k)[0]) for k in (2000, 4000)]
    ratio = r[0] / r[1]
    _check(fails, 3.0 <= ratio <= 5.0, f"residual ratio {ratio:.3g}")

    worst_p = worst_a = 0.0
    for m in [m2] + [random_model(s) for s in SUITE20]:
        for p in m.policies():
            worst_p = max(worst_p, poisson_residual(m, p, THETA, evaluate_policy(m, p, THETA)))
        res = policy_iteration(m, THETA)
        worst_a = max(worst_a, acdpe_residual(m, THETA, res.rho_star, res.h))
    _check(fails, worst_p <= 1e-8, f"Poisson residual {worst_p:.3g}")
    _check(fails, worst_a <= 1e-8, f"optimality residual {worst_a:.3g}")
    _record(5, "residual gates", fails,
            f"K-halving ratio {ratio:.3f} in [3,5], Poisson {worst_p:.1e}, optimality {worst_a:.1e}")


# 6. eps-limit Cauchy gaps

def test_criterion_6_eps_gaps():
    fails, shown = [], []
    for s in SUITE10:
        m = random_model(s)
        lim = solve_limit(m, 1.0, 0.9, 10_000, (1e-2, 5e-3, 2.5e-3), compare_from=0.1)
        g = lim.gaps
        _check(fails, g[1] < g[0], f"seed {s}: gaps {g}")
        shown.append(g[1] / g[0])
    _record(6, "eps-halving gaps strictly decreasing on 10 models", fails,
            f"gap ratios in [{min(shown):.2f}, {max(shown):.2f}]")


# 7. exponential moment of the hitting time

def test_criterion_7_hitting_moment():
    m2 = _m2()
    fails, notes = [], []
    cert = search_certificate(m2, CERT_GRID)
    _check(fails, cert is not None, "no certificate found")
    rep = check_lyapunov(m2, cert)
    _check(fails, rep.holds and np.nanmin(rep.margins) >= 0, "certificate margins negative")
    eta = cert.delta / 2
    for p in m2.policies():
        for i in range(1, m2.n):
            e = mc_exp_hitting(m2, p, eta, i, N_MC, seed=5, certificate=cert)
            bound = math.exp(cert.V[i])
            notes.append(f"{list(p)} from {i}: {e.mean:.3f} <= {bound:.3f}")
            _check(fails, e.mean <= bound + 3 * e.std_error, f"{list(p)} from {i}: {e.mean:.4g}")
        # from the reference state tau_0 is the return time; reported, not gated
        e0 = mc_exp_hitting(m2, p, eta, 0, N_MC, seed=5)
        notes.append(f"{list(p)} return from 0: {e0.mean:.3f}")

    e = mc_exp_hitting(symmetric(), [0, 0], 0.5, 1, N_MC, seed=4)
    d = abs(e.mean - 2.0)
    _check(fails, d <= 3 * e.std_error, f"2-state closed form off by {d:.3g}")
    notes.append(f"2-state {e.mean:.4f} vs 2 ({d / e.std_error:.2f} SE)")
    _record(7, "hitting-time exponential moment", fails,
            f"delta {cert.delta:.4f}, eta {eta:.4f}; " + ", ".join(notes))


# 8. risk-neutral limit

def test_criterion_8_risk_neutral():
    fails = []
    worst_rho = worst_v = 0.0
    for m in [_m2()] + [random_model(s) for s in SUITE10]:
        for p in m.policies():
            pi = stationary_distribution(m.generator(p))
            neutral = float(pi @ m.policy_cost(p))
            worst_rho = max(worst_rho, abs(evaluate_policy(m, p, 1e-2).rho - neutral))
        v, _ = risk_neutral_discounted_value(m, 1.0)
        # finest eps 1e-5 keeps the boundary bias at theta = 1e-2 near 1e-3 ||c||
        lip = m.cost_sup + 2.0 * m.rate_bound / 1e-5
        steps = max(20_000, int(math.ceil(0.02 * lip * 1.25)))
        lim = solve_limit(m, 1.0, 0.02, steps, (1e-2, 1e-4, 1e-5))
        sol = lim.solution
        worst_v = max(worst_v, float(np.abs(sol.Valpha[0] - v).max()))
        _check(fails, sol.theta_grid[0] - 1e-2 <= 1e-6, "smallest row above theta = 1e-2")
    _check(fails, worst_rho <= 1e-2, f"average gap {worst_rho:.3g}")
    _check(fails, worst_v <= 1e-2, f"discounted gap {worst_v:.3g}")
    _record(8, "risk-neutral limit", fails,
            f"average {worst_rho:.1e} <= 1e-2, discounted at theta=1e-2 {worst_v:.1e} <= 1e-2")


if __name__ == "__main__":
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_criterion_")]
    for t in tests:
        try:
            t()
        except AssertionError:
            pass
    for n in sorted(RESULTS):
        print(RESULTS[n])
    sys.exit(0 if all(line.startswith("PASS") for line in RESULTS.values()) else 1)
