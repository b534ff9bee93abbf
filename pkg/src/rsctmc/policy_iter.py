"""Policy improvement for the risk-sensitive average cost."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .avg_eigen import (
    LyapunovCertificate,
    ReducibleError,
    StationaryPolicy,
    evaluate_policy,
)
from .hjb_finite import SolverError
from .model import CtmdpModel

__all__ = [
    "AverageSolution",
    "BruteForceResult",
    "PolicyIterationError",
    "improve",
    "policy_iteration",
    "brute_force_average",
    "acdpe_residual",
]

# Relative tolerance for "the current action is already a minimizer".
EQUALITY_RTOL = 1e-10
# Required decrease of rho between non-final iterations.
STRICT_DECREASE = 1e-12
# Increase of rho that signals an evaluation failure.
INCREASE_TOL = 1e-10
BRUTE_FORCE_CAP = 1_000_000


class PolicyIterationError(SolverError):
    """Policy iteration broke one of its guarantees (monotonicity, termination)."""


@dataclass(frozen=True, eq=False)
class AverageSolution:
    rho_star: float
    policy: StationaryPolicy
    h: np.ndarray
    trace: list[tuple[StationaryPolicy, float]]
    acdpe_residual: float
    theta: float

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "rho_star": self.rho_star,
            "policy": list(self.policy.actions),
            "h": self.h.tolist(),
            "trace": [{"policy": list(p.actions), "rho": r} for p, r in self.trace],
            "acdpe_residual": self.acdpe_residual,
        }


@dataclass(frozen=True, eq=False)
class BruteForceResult:
    rho_star: float
    policy: StationaryPolicy
    table: list[tuple[StationaryPolicy, float]]
    skipped: list[StationaryPolicy] = field(default_factory=list)

    def __iter__(self):
        # unpacks as (rho_star, policy, table)
        return iter((self.rho_star, self.policy, self.table))

    def to_dict(self) -> dict:
        return {
            "rho_star": self.rho_star,
            "policy": list(self.policy.actions),
            "table": [{"policy": list(p.actions), "rho": r} for p, r in self.table],
            "skipped_reducible": [list(p.actions) for p in self.skipped],
        }


def _q(model: CtmdpModel, theta: float, h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if (h <= 0).any():
        raise ValueError("h must be positive")
    return model.q_values(h, theta)


def improve(model: CtmdpModel, theta: float, h: np.ndarray) -> StationaryPolicy:
    """Per state, the action minimizing ``theta c(i,a) h(i) + sum_j lambda_ij(a) h(j)``.

    Ties go to the lowest action index.
    """
    return StationaryPolicy(tuple(np.argmin(_q(model, theta, h), axis=1)))


def acdpe_residual(model: CtmdpModel, theta: float, rho: float, h: np.ndarray) -> float:
    """Residual of the average-cost HJB equation at ``(rho, h)``."""
    q = _q(model, theta, h)
    return float(np.abs(theta * rho * np.asarray(h) - q.min(axis=1)).max())


def policy_iteration(
    model: CtmdpModel,
    theta: float,
    initial=None,
    certificate: LyapunovCertificate | None = None,
) -> AverageSolution:
    """Alternate policy evaluation and improvement until no state can improve.

    Stops when the improved policy equals the current one, or when the current
    action already attains the minimum at every state to relative tolerance
    ``EQUALITY_RTOL`` (then the current policy is optimal).

    Parameters
    ----------
    initial : sequence of int, optional
        Starting policy; defaults to action 0 everywhere.
    certificate : LyapunovCertificate, optional
        If given and ``theta ||c|| >= delta``, a warning is issued; the solve
        proceeds regardless since the state space is finite.

    Raises
    ------
    ReducibleError
        If a policy met along the way is reducible.
    PolicyIterationError
        If rho fails to decrease strictly at a non-final step, or the number
        of iterations exceeds the number of stationary policies.
    """
    if not 0.0 < theta:
        raise ValueError("theta must be positive")
    if certificate is not None and not theta * model.cost_sup < certificate.delta:
        warnings.warn(
            f"theta*||c|| = {theta * model.cost_sup:.4g} is not below the drift rate "
            f"delta = {certificate.delta:.4g}; the existence result for an optimal "
            "stationary control assumes theta*||c|| < delta",
            RuntimeWarning,
            stacklevel=2,
        )
    current = StationaryPolicy(tuple([0] * model.n) if initial is None else tuple(initial))
    current.check(model)
    cap = model.n_policies
    idx = np.arange(model.n)
    trace: list[tuple[StationaryPolicy, float]] = []
    while True:
        ev = evaluate_policy(model, current, theta)
        if trace:
            prev = trace[-1][1]
            if ev.rho > prev + INCREASE_TOL:
                raise PolicyIterationError(
                    f"rho increased from {prev!r} to {ev.rho!r}; policy evaluation failed"
                )
            if ev.rho >= prev - STRICT_DECREASE:
                raise PolicyIterationError(
                    f"rho did not decrease strictly ({prev!r} -> {ev.rho!r})"
                )
        trace.append((current, ev.rho))
        if len(trace) > cap:
            raise PolicyIterationError(
                f"{len(trace)} evaluations exceed the {cap} stationary policies"
            )
        q = _q(model, theta, ev.h)
        cur_q = q[idx, np.asarray(current.actions)]
        best = q.min(axis=1)
        scale = np.maximum(np.abs(cur_q), theta * abs(ev.rho) * ev.h)
        if np.all(cur_q - best <= EQUALITY_RTOL * np.maximum(scale, 1.0)):
            break
        nxt = StationaryPolicy(tuple(np.argmin(q, axis=1)))
        if nxt == current:
            break
        current = nxt
    return AverageSolution(
        rho_star=ev.rho,
        policy=current,
        h=ev.h,
        trace=trace,
        acdpe_residual=acdpe_residual(model, theta, ev.rho, ev.h),
        theta=theta,
    )


def brute_force_average(model: CtmdpModel, theta: float) -> BruteForceResult:
    """Evaluate every stationary policy and return the best.

    Reducible policies are skipped and listed.  Ties in rho go to the
    lexicographically smallest policy.
    """
    if model.n_policies > BRUTE_FORCE_CAP:
        raise ValueError(f"{model.n_policies} policies exceed the cap of {BRUTE_FORCE_CAP}")
    table, skipped = [], []
    best = None
    for pol in model.policies():
        pol = StationaryPolicy(pol)
        try:
            rho = evaluate_policy(model, pol, theta).rho
        except ReducibleError:
            skipped.append(pol)
            continue
        table.append((pol, rho))
        if best is None or rho < best[1]:
            best = (pol, rho)
    if best is None:
        raise ReducibleError("every stationary policy is reducible")
    return BruteForceResult(best[1], best[0], table, skipped)
