"""Risk-sensitive average cost of a stationary policy.

For a stationary policy ``u`` the growth rate ``rho`` satisfies

    (Q_u + theta diag(c_u)) h = theta rho h,   h > 0,  h(0) = 1,

i.e. ``theta rho`` is the Perron root of the twisted generator.  The root is
found by power iteration on a nonnegative shift of that matrix.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .hjb_finite import SolverError
from .model import CtmdpModel, _strongly_connected

__all__ = [
    "StationaryPolicy",
    "PolicyEvaluation",
    "LyapunovCertificate",
    "LyapunovReport",
    "ReducibleError",
    "twisted_generator",
    "principal_eigen",
    "evaluate_policy",
    "poisson_residual",
    "check_lyapunov",
    "search_certificate",
    "stationary_distribution",
]

EIGVEC_TOL = 1e-12
MAX_POWER_ITER = 100_000
# exp() overflows above this
MAX_EXPONENT = math.log(np.finfo(float).max)


class ReducibleError(ValueError):
    """The support graph of a matrix or policy is not strongly connected."""


@dataclass(frozen=True)
class StationaryPolicy:
    """An action index per state."""

    actions: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))

    @classmethod
    def of(cls, policy) -> "StationaryPolicy":
        return policy if isinstance(policy, cls) else cls(tuple(policy))

    def check(self, model: CtmdpModel) -> None:
        if len(self.actions) != model.n:
            raise ValueError(f"policy has {len(self.actions)} entries, model has {model.n} states")
        for i, a in enumerate(self.actions):
            if not 0 <= a < len(model.actions[i]):
                raise ValueError(f"action {a} is not valid in state {i}")

    def labels(self, model: CtmdpModel) -> list[str]:
        return [model.actions[i][a] for i, a in enumerate(self.actions)]

    def action(self, t: float, state: int) -> int:
        return self.actions[state]

    def actions_at(self, t, states):
        return np.asarray(self.actions)[states]

    def __iter__(self):
        return iter(self.actions)

    def __len__(self):
        return len(self.actions)

    def __getitem__(self, i):
        return self.actions[i]


@dataclass(frozen=True, eq=False)
class PolicyEvaluation:
    rho: float
    h: np.ndarray
    residual: float
    iterations: int
    theta: float
    policy: StationaryPolicy | None = None

    def to_dict(self) -> dict:
        return {
            "policy": None if self.policy is None else list(self.policy.actions),
            "theta": self.theta,
            "rho": self.rho,
            "h": self.h.tolist(),
            "residual": self.residual,
            "iterations": self.iterations,
            "irreducible": True,
        }


@dataclass(frozen=True, eq=False)
class LyapunovCertificate:
    """Drift certificate ``e^{-V(i)} sum_j lambda_ij(u) e^{V(j)} <= -delta w(i) + b 1{i=0}``.

    ``drift_weight`` is the weight ``w >= 1`` on the right-hand side.
    """

    V: np.ndarray
    drift_weight: np.ndarray
    delta: float
    b: float

    def __post_init__(self):
        V = np.asarray(self.V, dtype=float)
        w = np.asarray(self.drift_weight, dtype=float)
        if V.shape != w.shape or V.ndim != 1:
            raise ValueError("V and drift_weight must be vectors of equal length")
        if (V < 0).any():
            raise ValueError("V must be nonnegative")
        if (w < 1).any():
            raise ValueError("drift_weight must be >= 1")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not np.isfinite(self.b):
            raise ValueError("b must be finite")
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "drift_weight", w)

    def to_dict(self) -> dict:
        return {"V": self.V.tolist(), "drift_weight": self.drift_weight.tolist(),
                "delta": self.delta, "b": self.b}


@dataclass(frozen=True, eq=False)
class LyapunovReport:
    margins: np.ndarray  # (n, A_max), nan on padding
    holds: bool
    theta_cost_below_delta: bool | None

    def to_dict(self) -> dict:
        return {
            "margins": [[None if np.isnan(x) else float(x) for x in row] for row in self.margins],
            "holds": self.holds,
            "theta_cost_below_delta": self.theta_cost_below_delta,
        }


def twisted_generator(model: CtmdpModel, policy, theta: float) -> np.ndarray:
    """``Q_u + theta diag(c_u)``; off-diagonal entries are nonnegative."""
    policy = StationaryPolicy.of(policy)
    policy.check(model)
    A = model.generator(policy.actions)
    A[np.diag_indices(model.n)] += theta * model.policy_cost(policy.actions)
    return A


def principal_eigen(A: np.ndarray, theta: float, tol: float = EIGVEC_TOL,
                    max_iter: int = MAX_POWER_ITER) -> PolicyEvaluation:
    """Perron root and eigenvector of an irreducible Metzler matrix.

    Power iteration runs on ``B = A + sigma I`` with ``sigma = max_i(-A_ii) + 1``,
    which is entrywise nonnegative with a positive diagonal, hence primitive.
    Iteration stops when the 1-normalised eigenvector moves by less than
    ``tol`` in the 1-norm.  The eigenvalue is the Rayleigh quotient of ``A``
    at the final vector, and ``rho = mu / theta``.

    Raises
    ------
    ReducibleError
        If the off-diagonal support of ``A`` is not strongly connected.
    SolverError
        On non-convergence (with an estimate of the subdominant ratio) or if
        the first component underflows.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if theta <= 0:
        raise ValueError("theta must be positive")
    off = A.copy()
    np.fill_diagonal(off, 0.0)
    if (off < 0).any():
        raise ValueError("matrix is not Metzler (negative off-diagonal entry)")
    if not _strongly_connected(off > 0):
        raise ReducibleError("matrix support graph is not strongly connected")

    sigma = float(np.max(-np.diag(A))) + 1.0
    sigma = max(sigma, 1.0)
    B = A + sigma * np.eye(n)
    v = np.full(n, 1.0 / n)
    change, prev_change = np.inf, np.inf
    for it in range(1, max_iter + 1):
        w = B @ v
        w /= w.sum()
        prev_change, change = change, float(np.abs(w - v).sum())
        v = w
        if change < tol:
            break
    else:
        ratio = change / prev_change if prev_change > 0 else float("nan")
        raise SolverError(
            f"power iteration did not converge in {max_iter} iterations "
            f"(last change {change:.3g}, subdominant ratio estimate {ratio:.6f})"
        )
    if v[0] < np.finfo(float).tiny * 1e3:
        raise SolverError(f"eigenvector component at state 0 underflowed ({v[0]!r})")
    h = v / v[0]
    h[0] = 1.0
    Ah = A @ h
    mu = float(h @ Ah / (h @ h))
    residual = float(np.abs(Ah - mu * h).max())
    return PolicyEvaluation(rho=mu / theta, h=h, residual=residual, iterations=it, theta=theta)


def evaluate_policy(model: CtmdpModel, policy, theta: float) -> PolicyEvaluation:
    """Growth rate and normalised eigenfunction of ``policy``."""
    policy = StationaryPolicy.of(policy)
    A = twisted_generator(model, policy, theta)
    try:
        ev = principal_eigen(A, theta)
    except ReducibleError as exc:
        raise ReducibleError(f"policy {list(policy.actions)} is reducible") from exc
    return PolicyEvaluation(ev.rho, ev.h, poisson_residual(model, policy, theta, ev),
                            ev.iterations, theta, policy)


def poisson_residual(model: CtmdpModel, policy, theta: float, ev: PolicyEvaluation) -> float:
    """``max_i |sum_j lambda_ij h(j) + theta c h(i) - theta rho h(i)|``."""
    policy = StationaryPolicy.of(policy)
    idx = np.arange(model.n)
    pol = np.asarray(policy.actions)
    h = ev.h
    gen = np.einsum("ij,ij->i", model.off[idx, pol], h[None, :] - h[:, None])
    r = gen + theta * (model.policy_cost(pol) - ev.rho) * h
    return float(np.abs(r).max())


def stationary_distribution(Q: np.ndarray) -> np.ndarray:
    """Stationary law of an irreducible generator (least-squares solve of ``pi Q = 0, sum pi = 1``)."""
    n = Q.shape[0]
    M = np.vstack([Q.T, np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi = np.linalg.lstsq(M, rhs, rcond=None)[0]
    return pi


def check_lyapunov(model: CtmdpModel, cert: LyapunovCertificate,
                   theta: float | None = None) -> LyapunovReport:
    """Margins ``RHS - LHS`` of the drift inequality for every (state, action).

    The left side is evaluated as ``sum_{j != i} lambda_ij (e^{V_j - V_i} - 1)``.
    When ``theta`` is given the report also says whether ``theta ||c|| < delta``.

    Raises
    ------
    OverflowError
        If some ``V_j - V_i`` exceeds the largest exponent representable.
    """
    V = cert.V
    if V.shape != (model.n,):
        raise ValueError(f"certificate has {V.shape[0]} entries, model has {model.n} states")
    diff = V[None, :] - V[:, None]
    if diff.max() > MAX_EXPONENT:
        raise OverflowError(
            f"V differences up to {diff.max():.4g} overflow exp(); keep |V_j - V_i| below "
            f"{MAX_EXPONENT:.4g}"
        )
    lhs = np.einsum("iaj,ij->ia", model.off, np.expm1(diff))
    rhs = -cert.delta * cert.drift_weight
    rhs[0] += cert.b
    margins = np.where(model.mask, rhs[:, None] - lhs, np.nan)
    holds = bool(np.all(margins[model.mask] >= 0))
    below = None if theta is None else bool(theta * model.cost_sup < cert.delta)
    return LyapunovReport(margins, holds, below)


def search_certificate(model: CtmdpModel, grid: Sequence[float],
                       drift_weight: np.ndarray | None = None) -> LyapunovCertificate | None:
    """Grid search for a drift certificate with ``V(0) = 0``.

    Every ``V`` with ``V(0) = 0`` and other entries drawn from ``grid`` is
    tried.  For each, ``delta`` is the largest value the non-reference states
    allow and ``b`` the smallest value state 0 then needs.  Returns the
    certificate with the largest ``delta`` (``None`` if no candidate has
    ``delta > 0``).
    """
    n = model.n
    if n == 1:
        return None
    w = np.ones(n) if drift_weight is None else np.asarray(drift_weight, dtype=float)
    best, best_delta = None, 0.0
    for tail in itertools.product(grid, repeat=n - 1):
        V = np.array((0.0, *tail))
        diff = V[None, :] - V[:, None]
        lhs = np.einsum("iaj,ij->ia", model.off, np.expm1(diff))
        lhs = np.where(model.mask, lhs, -np.inf)
        worst = lhs.max(axis=1)
        delta = float(np.min(-worst[1:] / w[1:]))
        if delta > best_delta:
            # leave rounding room so the binding margins stay >= 0
            delta *= 1.0 - 1e-12
            b = float(worst[0] + delta * w[0])
            b += 1e-12 * max(1.0, abs(b))
            best, best_delta = LyapunovCertificate(V, w, delta, max(b, 0.0)), delta
    return best
