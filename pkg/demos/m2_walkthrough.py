"""Walk through every solver on the two-state model M2.

State 0 can leave slowly at cost 2 (action a) or quickly at cost 1
(action b); state 1 returns at rate 1 for free.  Run with

    python3 demos/m2_walkthrough.py
"""

from pathlib import Path

import numpy as np

from rsctmc import (
    ThetaPolicy,
    brute_force_average,
    check_lyapunov,
    load_model,
    mc_average_growth,
    mc_discounted_cost,
    mc_exp_hitting,
    mc_finite_cost,
    picard_solve,
    policy_iteration,
    search_certificate,
    solve_eps,
    solve_finite_horizon,
    solve_limit,
)

THETA = 0.5
N = 20_000

model = load_model((Path(__file__).parent / "models" / "m2.json").read_text())
print(f"M2: n={model.n}, M={model.rate_bound}, ||c||={model.cost_sup}")

# finite horizon T=2
grid, markov = solve_finite_horizon(model, THETA, 2.0, 2000)
pc = picard_solve(model, THETA, 2.0, 2000)
print("\nfinite horizon, T=2")
print("  psi(0, .)          ", np.round(grid.psi[0], 6))
print("  |RK4 - Picard|_inf  %.2e" % np.abs(grid.phi - pc.phi).max())
switch = markov.table[:, 0]
print("  state-0 action at t=0:", model.actions[0][switch[0]],
      "| switches at t=%s" % np.round(grid.times[1:][np.diff(switch) != 0], 3))
for i in range(model.n):
    e = mc_finite_cost(model, markov, THETA, 2.0, N, seed=1, start=i)
    ce, se = e.certainty_equivalent(THETA)
    print(f"  MC psi(0,{i}) = {ce:.4f} +- {se:.4f}")

# discounted, alpha = 1
lim = solve_limit(model, 1.0, 0.9, 10_000)
print("\ndiscounted, alpha=1")
print("  Cauchy gaps over eps:", ["%.2e" % g for g in lim.gaps])
sol = solve_eps(model, 1.0, 1e-3, 0.9, 8990)
k = int(np.argmin(np.abs(sol.theta_grid - THETA)))
print(f"  W({sol.theta_grid[k]:.3f}, .) =", np.round(sol.W[k], 5))
for i in range(model.n):
    e = mc_discounted_cost(model, ThetaPolicy(sol, sol.theta_grid[k]), sol.theta_grid[k], 1.0, N,
                           seed=2, start=i)
    print(f"  MC W(.,{i}) = {e.mean:.4f} +- {e.std_error:.4f} (truncation bias <= {e.bias_bound:.1e})")

# average cost
res = policy_iteration(model, THETA, (0, 0))
bf = brute_force_average(model, THETA)
print("\naverage cost")
for pol, rho in res.trace:
    print(f"  policy {pol.labels(model)}: rho = {rho:.6f}")
print(f"  brute force agrees: {abs(bf.rho_star - res.rho_star):.1e}")
e = mc_average_growth(model, res.policy, THETA, 100.0, N, seed=3)
print(f"  MC growth rate = {e.mean:.4f} +- {e.std_error:.4f} (bias <= {e.bias_bound:.1e})")

# Lyapunov certificate and the hitting-time moment
cert = search_certificate(model, np.round(np.arange(0.5, 3.0001, 0.05), 10))
rep = check_lyapunov(model, cert, theta=THETA)
print("\nLyapunov certificate")
print(f"  V={cert.V}, delta={cert.delta:.4f}, b={cert.b:.3f}, holds={rep.holds}")
e = mc_exp_hitting(model, res.policy, cert.delta / 2, 1, N, seed=4, certificate=cert)
print(f"  E exp(eta tau_0) from 1 = {e.mean:.4f} +- {e.std_error:.4f} <= {np.exp(cert.V[1]):.3f}")
