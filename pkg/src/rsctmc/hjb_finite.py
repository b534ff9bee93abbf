"""Finite-horizon exponential-cost HJB system.

The exponential value ``phi(t, i)`` solves, backward from ``phi(T, i) =
exp(theta g(i))``,

    dphi/dt = -min_a [theta c(t, i, a) phi(t, i) + sum_j lambda_ij(a) phi(t, j)]

and ``psi = log(phi) / theta`` is the optimal certainty-equivalent cost.
Time-dependent running cost enters as a nonnegative multiplier on the time
grid, piecewise constant on ``[t_k, t_{k+1})``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .model import CtmdpModel

__all__ = [
    "ValueGrid",
    "MarkovPolicy",
    "SolverError",
    "solve_finite_horizon",
    "picard_solve",
    "extract_policy",
    "hjb_residual",
    "log_value",
]

# Undershoot of phi below 1 that is clamped rather than reported.
UNDERSHOOT_TOL = 1e-9


class SolverError(ArithmeticError):
    """A numerical solver failed (guard violated, non-finite value, no convergence)."""


@dataclass(frozen=True, eq=False)
class ValueGrid:
    times: np.ndarray
    phi: np.ndarray
    theta: float
    horizon: float
    psi: np.ndarray | None = None
    cost_multiplier: np.ndarray | None = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "horizon": self.horizon,
            "times": self.times.tolist(),
            "phi": self.phi.tolist(),
            "psi": None if self.psi is None else self.psi.tolist(),
            "meta": self.meta,
        }


@dataclass(frozen=True, eq=False)
class MarkovPolicy:
    """Action index per ``(t_k, i)``, held constant on ``[t_k, t_{k+1})``."""

    times: np.ndarray
    table: np.ndarray

    def row(self, t: float) -> int:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return min(max(k, 0), len(self.times) - 1)

    def action(self, t: float, state: int) -> int:
        return int(self.table[self.row(t), state])

    def actions_at(self, t: np.ndarray, states: np.ndarray) -> np.ndarray:
        k = np.searchsorted(self.times, t, side="right") - 1
        k = np.clip(k, 0, len(self.times) - 1)
        return self.table[k, states]

    def to_dict(self) -> dict:
        return {"times": self.times.tolist(), "table": self.table.tolist()}


def _check_theta(theta: float) -> None:
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")


def _multiplier(cost_multiplier, steps: int) -> np.ndarray:
    if cost_multiplier is None:
        return np.ones(steps + 1)
    m = np.asarray(cost_multiplier, dtype=float)
    if m.shape != (steps + 1,):
        raise ValueError(f"cost_multiplier must have length {steps + 1}, got {m.shape}")
    if (m < 0).any() or not np.isfinite(m).all():
        raise ValueError("cost_multiplier must be finite and nonnegative")
    return m


def _lipschitz(model: CtmdpModel, theta: float, mult: np.ndarray) -> float:
    return 2.0 * model.rate_bound + theta * model.cost_sup * float(mult.max())


def solve_finite_horizon(
    model: CtmdpModel,
    theta: float,
    horizon: float,
    steps: int,
    cost_multiplier: Sequence[float] | None = None,
) -> tuple[ValueGrid, MarkovPolicy]:
    """Integrate the HJB system backward in time with fixed-step RK4.

    Parameters
    ----------
    model : CtmdpModel
    theta : float
        Risk-aversion parameter in (0, 1).
    horizon : float
        Terminal time ``T > 0``.
    steps : int
        Number of time steps ``K``; the grid is ``t_k = k T / K``.
    cost_multiplier : sequence of float, optional
        Length ``K + 1`` multipliers of the running cost; entry ``k`` applies
        on ``[t_k, t_{k+1})``.  Defaults to all ones.

    Returns
    -------
    grid : ValueGrid
        ``phi`` and ``psi`` on the grid.
    policy : MarkovPolicy
        Minimizing action at every grid row.

    Raises
    ------
    SolverError
        If ``h (2M + theta ||c||) >= 1`` or a non-finite value appears.
    """
    _check_theta(theta)
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    mult = _multiplier(cost_multiplier, steps)
    h = horizon / steps
    L = _lipschitz(model, theta, mult)
    if h * L >= 1.0:
        raise SolverError(
            f"stability guard violated: h*(2M + theta*||c||) = {h * L:.4g} >= 1; "
            f"increase steps above {math.ceil(horizon * L)}"
        )
    times = np.linspace(0.0, horizon, steps + 1)
    phi = np.empty((steps + 1, model.n))
    phi[-1] = np.exp(theta * model.terminal)

    def rhs(f, m):
        # d phi / d(-t)
        return model.minimize(f, theta, m)[0]

    for k in range(steps - 1, -1, -1):
        f, m = phi[k + 1], mult[k]
        k1 = rhs(f, m)
        k2 = rhs(f + 0.5 * h * k1, m)
        k3 = rhs(f + 0.5 * h * k2, m)
        k4 = rhs(f + h * k3, m)
        new = f + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(new).all():
            i = int(np.argmin(np.isfinite(new)))
            raise SolverError(f"non-finite value at t={times[k]:.6g}, state {i}")
        low = new < 1.0
        if low.any():
            if (new < 1.0 - UNDERSHOOT_TOL).any():
                i = int(np.argmin(new))
                raise SolverError(
                    f"phi fell below 1 at t={times[k]:.6g}, state {i}: {new[i]!r}"
                )
            new[low] = 1.0
        phi[k] = new

    grid = ValueGrid(
        times=times,
        phi=phi,
        theta=theta,
        horizon=horizon,
        cost_multiplier=None if cost_multiplier is None else mult,
        meta={"method": "rk4", "steps": steps, "h": h},
    )
    grid = log_value(grid)
    return grid, extract_policy(model, theta, grid)


def picard_solve(
    model: CtmdpModel,
    theta: float,
    horizon: float,
    steps: int,
    cost_multiplier: Sequence[float] | None = None,
    tol: float = 1e-10,
    refine: int = 1,
) -> ValueGrid:
    """Solve the HJB system as a fixed point of its integral form.

    Works with ``psi~(t) = exp(gamma0 t) phi(t)``, ``gamma0 = 2M + theta ||c|| + 1``,
    for which the map

        psi~(t, i) = e^{gamma0 t} e^{theta g(i)}
                     + e^{gamma0 t} int_t^T e^{-gamma0 s} min_a[...](s) ds

    is a contraction with modulus ``beta = (2M + theta ||c||) / gamma0``.
    The integral is a cumulative trapezoid rule on a grid ``refine`` times
    finer than the output grid.  Iteration starts from ``phi = e^{theta g}``
    and stops when successive iterates differ by less than ``tol`` in the
    sup norm of ``phi``.
    """
    _check_theta(theta)
    if horizon <= 0 or steps < 1 or refine < 1:
        raise ValueError("horizon, steps and refine must be positive")
    mult = np.repeat(_multiplier(cost_multiplier, steps)[:-1], refine)
    mult = np.append(mult, _multiplier(cost_multiplier, steps)[-1])
    fine = steps * refine
    times = np.linspace(0.0, horizon, fine + 1)
    h = horizon / fine
    L = _lipschitz(model, theta, mult)
    gamma0 = L + 1.0
    beta = L / gamma0
    max_iter = (math.ceil(math.log(tol) / math.log(beta)) if beta > 0 else 0) + 50

    up = np.exp(gamma0 * times)[:, None]
    down = np.exp(-gamma0 * times)[:, None]
    g = np.exp(theta * model.terminal)
    tilde = up * g[None, :]

    def integrand(tl):
        return down * model.minimize(tl, theta, mult)[0]

    phi = np.broadcast_to(g, tilde.shape)
    for it in range(1, max_iter + 1):
        F = integrand(tilde)
        # int_t^T by trapezoid, accumulated from the right
        pieces = 0.5 * h * (F[1:] + F[:-1])
        tail = np.zeros_like(F)
        tail[:-1] = np.cumsum(pieces[::-1], axis=0)[::-1]
        # e^{-gamma0 t} psi~ = g + tail; form phi directly so constants stay exact
        new_phi = g[None, :] + tail
        tilde = up * new_phi
        if not np.isfinite(new_phi).all():
            raise SolverError(f"non-finite value in Picard iterate {it}")
        gap = float(np.abs(new_phi - phi).max())
        phi = new_phi
        if gap < tol:
            break
    else:
        raise SolverError(
            f"Picard iteration did not converge in {max_iter} iterations "
            f"(last gap {gap:.3g}, beta={beta:.4f})"
        )
    out = phi[::refine]
    grid = ValueGrid(
        times=times[::refine],
        phi=out,
        theta=theta,
        horizon=horizon,
        cost_multiplier=None if cost_multiplier is None else _multiplier(cost_multiplier, steps),
        meta={
            "method": "picard-trapezoid",
            "steps": steps,
            "refine": refine,
            "iterations": it,
            "gamma0": gamma0,
            "beta": beta,
            "last_gap": gap,
        },
    )
    return log_value(grid)


def extract_policy(model: CtmdpModel, theta: float, grid: ValueGrid) -> MarkovPolicy:
    """Minimizing action at every grid row (lowest index on ties)."""
    mult = grid.cost_multiplier
    if mult is None:
        mult = np.ones(len(grid.times))
    table = model.minimize(grid.phi, theta, mult)[1]
    return MarkovPolicy(times=grid.times, table=table)


def hjb_residual(model: CtmdpModel, theta: float, grid: ValueGrid) -> float:
    """Max over interior rows of ``|dphi/dt + min_a[...]|``, derivative by central differences."""
    phi, t = grid.phi, grid.times
    if len(t) < 3:
        raise ValueError("need at least two steps for a central difference")
    mult = grid.cost_multiplier
    if mult is None:
        mult = np.ones(len(t))
    dphi = (phi[2:] - phi[:-2]) / (t[2:] - t[:-2])[:, None]
    r = dphi + model.minimize(phi[1:-1], theta, mult[1:-1])[0]
    return float(np.abs(r).max())


def log_value(grid: ValueGrid) -> ValueGrid:
    """Return a copy of ``grid`` with ``psi = log(phi) / theta`` filled in."""
    phi = grid.phi
    if (phi < 1.0 - UNDERSHOOT_TOL).any():
        k, i = np.unravel_index(int(np.argmin(phi)), phi.shape)
        raise SolverError(f"phi < 1 at t={grid.times[k]:.6g}, state {i}: {phi[k, i]!r}")
    psi = np.log(np.maximum(phi, 1.0)) / grid.theta
    return replace(grid, psi=psi)
