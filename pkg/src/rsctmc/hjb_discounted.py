"""Discounted exponential-cost HJB equation in the risk variable.

``W(theta, i)``, the optimal value of ``E exp(theta int_0^inf e^{-alpha t} c dt)``,
satisfies

    alpha theta dW/dtheta = min_a [theta c(i, a) W(theta, i) + sum_j lambda_ij(a) W(theta, j)]

with ``W -> 1`` as ``theta -> 0``.  The equation is singular at zero, so it
is integrated forward from a small ``eps`` with the state-independent
boundary value ``exp(eps ||c|| / alpha)``; the ``eps -> 0`` behaviour is
studied by halving ``eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .hjb_finite import SolverError
from .model import CtmdpModel

__all__ = [
    "DiscountedSolution",
    "LimitSolution",
    "PolicyLookup",
    "ThetaPolicy",
    "solve_eps",
    "solve_limit",
    "discounted_value",
    "discounted_policy_at_time",
    "risk_neutral_discounted_value",
]

UNDERSHOOT_TOL = 1e-9
# Cauchy gaps below this are rounding noise and exempt from the monotonicity check.
GAP_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class DiscountedSolution:
    alpha: float
    eps: float
    theta_grid: np.ndarray
    W: np.ndarray
    policy: np.ndarray
    dW: np.ndarray = field(repr=False)
    meta: dict = field(default_factory=dict)

    @property
    def Valpha(self) -> np.ndarray:
        return discounted_value(self)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "eps": self.eps,
            "theta_grid": self.theta_grid.tolist(),
            "W": self.W.tolist(),
            "Valpha": self.Valpha.tolist(),
            "policy": self.policy.tolist(),
            "meta": self.meta,
        }


@dataclass(frozen=True, eq=False)
class LimitSolution:
    """Finest-eps solution plus the Cauchy gaps of the halving study."""

    solution: DiscountedSolution
    eps_sequence: tuple[float, ...]
    gaps: tuple[float, ...]
    theta_min: float

    def to_dict(self) -> dict:
        d = self.solution.to_dict()
        d.update(eps_sequence=list(self.eps_sequence), cauchy_gaps=list(self.gaps),
                 theta_min=self.theta_min)
        return d


class PolicyLookup(NamedTuple):
    actions: np.ndarray
    theta: float
    spacing: float


def _rhs(model: CtmdpModel, alpha: float, theta: float, w: np.ndarray):
    q, idx = model.minimize(w, theta)
    return q / (alpha * theta), idx


def solve_eps(
    model: CtmdpModel,
    alpha: float,
    eps: float,
    theta_max: float,
    steps: int,
) -> DiscountedSolution:
    """Integrate the eps-boundary problem on ``[eps, theta_max]`` with RK4.

    The step ``h = (theta_max - eps) / steps`` must satisfy
    ``h (||c|| + 2M / eps) / alpha < 1``, the Lipschitz bound of the right
    side on the first slab.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if not 0.0 < eps < theta_max < 1.0:
        raise ValueError(f"need 0 < eps < theta_max < 1, got eps={eps}, theta_max={theta_max}")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    h = (theta_max - eps) / steps
    lip = (model.cost_sup + 2.0 * model.rate_bound / eps) / alpha
    if h * lip >= 1.0:
        raise SolverError(
            f"step-size guard violated: h*(||c|| + 2M/eps)/alpha = {h * lip:.4g} >= 1; "
            f"need steps > {math.ceil((theta_max - eps) * lip)}"
        )
    thetas = eps + h * np.arange(steps + 1)
    thetas[-1] = theta_max
    W = np.empty((steps + 1, model.n))
    dW = np.empty_like(W)
    policy = np.empty((steps + 1, model.n), dtype=int)
    W[0] = math.exp(eps * model.cost_sup / alpha)

    for k in range(steps):
        th, w = thetas[k], W[k]
        k1, idx = _rhs(model, alpha, th, w)
        dW[k], policy[k] = k1, idx
        k2 = _rhs(model, alpha, th + 0.5 * h, w + 0.5 * h * k1)[0]
        k3 = _rhs(model, alpha, th + 0.5 * h, w + 0.5 * h * k2)[0]
        k4 = _rhs(model, alpha, th + h, w + h * k3)[0]
        new = w + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(new).all():
            i = int(np.argmin(np.isfinite(new)))
            raise SolverError(f"non-finite value at theta={thetas[k + 1]:.6g}, state {i}")
        W[k + 1] = new
    dW[-1], policy[-1] = _rhs(model, alpha, thetas[-1], W[-1])
    return DiscountedSolution(
        alpha=alpha,
        eps=eps,
        theta_grid=thetas,
        W=W,
        policy=policy,
        dW=dW,
        meta={"method": "rk4", "steps": steps, "h": h, "theta_max": theta_max},
    )


def _interpolant(sol: DiscountedSolution) -> CubicHermiteSpline:
    return CubicHermiteSpline(sol.theta_grid, sol.W, sol.dW, axis=0)


def solve_limit(
    model: CtmdpModel,
    alpha: float,
    theta_max: float,
    steps: int,
    eps_sequence: Sequence[float] = (1e-2, 5e-3, 2.5e-3),
    compare_points: int = 801,
    compare_from: float | None = None,
) -> LimitSolution:
    """Run the eps-halving study.

    Each ``eps`` in ``eps_sequence`` is solved with ``steps`` RK4 steps.  The
    Cauchy gap between consecutive solutions is the sup-norm difference on
    ``compare_points`` evenly spaced thetas in ``[max(eps_sequence),
    theta_max]``, evaluated through cubic Hermite interpolation (the node
    derivatives are the right-hand side itself).  ``compare_from`` raises
    the left end of that window.  The returned solution is the finest one
    restricted to ``theta >= max(eps_sequence)``.

    Raises
    ------
    SolverError
        If the gap sequence is not strictly decreasing (gaps under
        ``GAP_FLOOR`` count as converged).
    """
    eps_sequence = tuple(float(e) for e in eps_sequence)
    if len(eps_sequence) < 2 or any(b >= a for a, b in zip(eps_sequence, eps_sequence[1:])):
        raise ValueError("eps_sequence must be strictly decreasing with at least two entries")
    sols = [solve_eps(model, alpha, e, theta_max, steps) for e in eps_sequence]
    lo = eps_sequence[0]
    left = lo if compare_from is None else max(lo, float(compare_from))
    probe = np.linspace(left, theta_max, compare_points)
    values = [_interpolant(s)(probe) for s in sols]
    gaps = tuple(float(np.abs(a - b).max()) for a, b in zip(values, values[1:]))
    if any(g2 >= g1 and g2 > GAP_FLOOR for g1, g2 in zip(gaps, gaps[1:])):
        raise SolverError(f"Cauchy gaps not decreasing: {gaps}")
    fine = sols[-1]
    keep = fine.theta_grid >= lo
    restricted = DiscountedSolution(
        alpha=alpha,
        eps=fine.eps,
        theta_grid=fine.theta_grid[keep],
        W=fine.W[keep],
        policy=fine.policy[keep],
        dW=fine.dW[keep],
        meta={**fine.meta, "restricted_to": lo},
    )
    return LimitSolution(restricted, eps_sequence, gaps, lo)


def discounted_value(sol: DiscountedSolution) -> np.ndarray:
    """``V_alpha = log(W) / theta`` on the solution grid."""
    if (sol.W < 1.0 - UNDERSHOOT_TOL).any():
        k, i = np.unravel_index(int(np.argmin(sol.W)), sol.W.shape)
        raise SolverError(f"W < 1 at theta={sol.theta_grid[k]:.6g}, state {i}")
    return np.log(np.maximum(sol.W, 1.0)) / sol.theta_grid[:, None]


def discounted_policy_at_time(sol: DiscountedSolution, theta: float, t: float) -> PolicyLookup:
    """Action per state of the optimal control at time ``t``.

    The optimal control applies the minimizer at the decayed risk level
    ``theta exp(-alpha t)``; the nearest grid row is used.
    """
    target = theta * math.exp(-sol.alpha * t)
    grid = sol.theta_grid
    if target < grid[0] * (1.0 - 1e-12):
        raise ValueError(
            f"theta*exp(-alpha t) = {target:.6g} is below the solution range "
            f"[{grid[0]:.6g}, ...]; solve with a smaller eps"
        )
    if target > grid[-1] * (1.0 + 1e-12):
        raise ValueError(f"theta*exp(-alpha t) = {target:.6g} exceeds theta_max {grid[-1]:.6g}")
    k = _nearest(grid, target)
    spacing = float(grid[1] - grid[0]) if len(grid) > 1 else 0.0
    return PolicyLookup(sol.policy[k].copy(), float(grid[k]), spacing)


def _nearest(grid: np.ndarray, x):
    k = np.clip(np.searchsorted(grid, x), 1, len(grid) - 1)
    left = grid[k - 1]
    return np.where(np.abs(x - left) <= np.abs(grid[k] - x), k - 1, k)


class ThetaPolicy:
    """The time-dependent optimal control ``u*(theta e^{-alpha t}, i)`` as a simulator policy.

    Once ``theta e^{-alpha t}`` drops below the solved range the smallest-theta
    row is held; the cost accrued from then on is at most
    ``eps ||c|| / alpha`` in the exponent.
    """

    def __init__(self, sol: DiscountedSolution, theta: float):
        if not sol.theta_grid[0] <= theta <= sol.theta_grid[-1] * (1 + 1e-12):
            raise ValueError("theta outside the solved range")
        self.sol = sol
        self.theta = theta

    def actions_at(self, t: np.ndarray, states: np.ndarray) -> np.ndarray:
        grid = self.sol.theta_grid
        target = np.clip(self.theta * np.exp(-self.sol.alpha * np.asarray(t)), grid[0], grid[-1])
        return self.sol.policy[_nearest(grid, target), states]

    def action(self, t: float, state: int) -> int:
        return int(self.actions_at(np.array([t]), np.array([state]))[0])


def risk_neutral_discounted_value(model: CtmdpModel, alpha: float) -> tuple[np.ndarray, tuple]:
    """Optimal ``min_u E int e^{-alpha t} c dt`` by enumerating stationary policies.

    Each policy is evaluated with one linear solve ``(alpha I - Q_u) v = c_u``.
    Returns the componentwise minimum and the policy with the smallest total
    value (which attains that minimum for a finite model).
    """
    eye = np.eye(model.n)
    values, pols = [], []
    for pol in model.policies():
        values.append(np.linalg.solve(alpha * eye - model.generator(pol), model.policy_cost(pol)))
        pols.append(pol)
    values = np.array(values)
    return values.min(axis=0), pols[int(np.argmin(values.sum(axis=1)))]
