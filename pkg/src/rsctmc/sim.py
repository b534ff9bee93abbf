"""Jump-chain simulation and Monte Carlo estimators of exponential cost functionals.

Every estimator shares one vectorised engine.  Paths are advanced in lockstep
in blocks of ``BLOCK`` trajectories; block ``b`` draws from its own stream
``default_rng([seed, b])``, so results depend only on ``(seed, N)`` and not on
how blocks are scheduled.

Cost integrals are accumulated by summation by parts,

    int_{t0}^{tau} c(s) dK(s) = c_last K(tau) - c_0 K(t0) - sum_jumps (c_after - c_before) K(s_jump),

with ``K(t) = t`` (undiscounted) or ``K(t) = (1 - e^{-alpha t}) / alpha``
(discounted).  Constant cost therefore gives the closed form bit for bit.
Means of ``exp(L)`` are formed as ``e^{max L} mean(e^{L - max L})``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .avg_eigen import LyapunovCertificate, StationaryPolicy, evaluate_policy
from .model import CtmdpModel

__all__ = [
    "Trajectory",
    "McEstimate",
    "SimulationError",
    "simulate",
    "mc_finite_cost",
    "mc_discounted_cost",
    "mc_average_growth",
    "mc_exp_hitting",
    "mc_poisson_h",
    "discounted_horizon",
]

BLOCK = 8192
# stop-at-0 runs give up after this many multiples of the mean holding time 1/M
GUARD_FACTOR = 1e6
DEFAULT_BIAS = 1e-4


class SimulationError(RuntimeError):
    """A simulation could not finish (absorbing state, guard time exceeded)."""


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One sample path.

    Sojourn ``k`` occupies ``[times[k], times[k+1])`` in ``states[k]`` under
    ``actions[k]``, where ``times[len(states)]`` is ``end``.
    """

    times: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    end: float
    hit_zero: bool = False

    @property
    def sojourns(self) -> np.ndarray:
        return np.diff(np.append(self.times, self.end))

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
            "end": self.end,
            "hit_zero": self.hit_zero,
        }


@dataclass(frozen=True, eq=False)
class McEstimate:
    """Sample mean of an exponential functional.

    ``log_mean`` and ``log_std_error`` describe ``log(mean)``; the latter is
    the delta-method value ``std_error / mean``.  For growth-rate estimates
    ``mean`` is already on the log scale (see ``functional``).
    """

    mean: float
    std_error: float
    n_samples: int
    functional: str
    seed: int
    log_mean: float
    log_std_error: float
    bias_bound: float | None = None
    params: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def certainty_equivalent(self, theta: float) -> tuple[float, float]:
        """``(log(mean) / theta, its delta-method SE)``."""
        return self.log_mean / theta, self.log_std_error / theta

    def within(self, target: float, k: float = 3.0, extra: float = 0.0) -> bool:
        return abs(self.mean - target) <= k * self.std_error + (self.bias_bound or 0.0) + extra

    def to_dict(self) -> dict:
        return {
            "functional": self.functional,
            "mean": self.mean,
            "std_error": self.std_error,
            "log_mean": self.log_mean,
            "log_std_error": self.log_std_error,
            "bias_bound": self.bias_bound,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "params": self.params,
            "notes": self.notes,
        }


def _policy(model: CtmdpModel, policy):
    """Anything with ``actions_at(t, states)`` passes through; sequences become stationary."""
    if hasattr(policy, "actions_at"):
        if isinstance(policy, StationaryPolicy):
            policy.check(model)
        return policy
    pol = StationaryPolicy.of(policy)
    pol.check(model)
    return pol


def _check_grid(policy, t0: float, t_end: float) -> None:
    times = getattr(policy, "times", None)
    if times is None or not math.isfinite(t_end):
        return
    if times[0] > t0 + 1e-12 or times[-1] < t_end - 1e-9 * max(1.0, abs(t_end)):
        raise ValueError(
            f"policy grid [{times[0]}, {times[-1]}] does not cover [{t0}, {t_end}]"
        )


def _guard_time(model: CtmdpModel, t0: float) -> float:
    M = model.rate_bound
    if M <= 0:
        raise SimulationError("every state is absorbing; state 0 can never be reached")
    return t0 + GUARD_FACTOR / M


def simulate(
    model: CtmdpModel,
    policy,
    start: int,
    t0: float = 0.0,
    t_end: float | None = None,
    stop_at_zero: bool = False,
    seed: int = 0,
) -> Trajectory:
    """Simulate one path by the jump-chain construction.

    In state ``i`` under action ``a`` the holding time is exponential with
    rate ``-lambda_ii(a)`` and the next state is ``j`` with probability
    ``lambda_ij(a) / (-lambda_ii(a))``.  The action is read from ``policy``
    at the start of each sojourn and held until the next jump.

    Parameters
    ----------
    policy
        A stationary policy (sequence of action indices) or any object with
        ``actions_at(t, states)``, such as a ``MarkovPolicy``.
    t_end : float, optional
        End of the observation window.  Required unless ``stop_at_zero``.
    stop_at_zero : bool
        Stop at the first jump into state 0.  From state 0 the path first
        leaves and then returns.

    Raises
    ------
    SimulationError
        If ``stop_at_zero`` and the path is absorbed away from 0 or runs past
        ``t0 + 1e6 / M``.
    """
    if t_end is None and not stop_at_zero:
        raise ValueError("give t_end or stop_at_zero")
    if not 0 <= start < model.n:
        raise ValueError(f"start state {start} out of range")
    policy = _policy(model, policy)
    horizon = math.inf if t_end is None else float(t_end)
    if horizon <= t0:
        raise ValueError("t_end must exceed t0")
    _check_grid(policy, t0, horizon)
    limit = _guard_time(model, t0) if stop_at_zero else math.inf
    rng = np.random.default_rng(seed)
    exit_rates = model.exit_rates

    t, i = float(t0), int(start)
    times, states, actions = [], [], []
    while True:
        a = int(policy.actions_at(np.array([t]), np.array([i]))[0])
        times.append(t)
        states.append(i)
        actions.append(a)
        rate = exit_rates[i, a]
        tn = t + rng.exponential() / rate if rate > 0 else math.inf
        if tn >= horizon and math.isfinite(horizon):
            end, hit = horizon, False
            break
        if tn > limit:
            raise SimulationError(
                f"state 0 not reached by t={limit:.4g} (= t0 + 1e6/M); "
                f"last state {i}" + (" is absorbing" if rate == 0 else "")
            )
        row = model.off[i, a]
        j = int(np.searchsorted(np.cumsum(row), rng.random() * rate, side="right"))
        j = min(j, int(np.flatnonzero(row)[-1]))
        t, i = tn, j
        if stop_at_zero and i == 0:
            end, hit = t, True
            break
    return Trajectory(np.array(times), np.array(states, dtype=int),
                      np.array(actions, dtype=int), float(end), hit)


def _block_integrals(
    model: CtmdpModel,
    policy,
    rate_cost: np.ndarray,
    K: Callable[[np.ndarray], np.ndarray],
    start: int,
    t0: float,
    t_end: float,
    stop_at_zero: bool,
    size: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """``int rate_cost(X, U) dK`` and the final state, for ``size`` paths."""
    n = model.n
    exit_rates = model.exit_rates
    cum = np.cumsum(model.off, axis=2)
    last = np.where(model.off > 0, np.arange(n), -1).max(axis=2)
    limit = _guard_time(model, t0) if stop_at_zero else math.inf

    state = np.full(size, start, dtype=int)
    t = np.full(size, float(t0))
    prev_cost = np.zeros(size)
    acc = np.zeros(size)
    live = np.arange(size)
    while live.size:
        s, tl = state[live], t[live]
        a = np.asarray(policy.actions_at(tl, s), dtype=int)
        c = rate_cost[s, a]
        acc[live] -= (c - prev_cost[live]) * K(tl)
        prev_cost[live] = c
        rate = exit_rates[s, a]
        with np.errstate(divide="ignore"):
            tn = tl + rng.exponential(size=live.size) / rate
        u = rng.random(live.size) * rate

        done = tn >= t_end if math.isfinite(t_end) else np.zeros(live.size, dtype=bool)
        if done.any():
            idx = live[done]
            acc[idx] += c[done] * K(np.full(idx.size, t_end))
            t[idx] = t_end
        if (tn[~done] > limit).any():
            k = int(np.argmax(np.where(done, -np.inf, tn)))
            raise SimulationError(
                f"state 0 not reached by t={limit:.4g} (= t0 + 1e6/M); last state {s[k]}"
                + (" is absorbing" if rate[k] == 0 else "")
            )
        move = ~done
        idx, s, a, u = live[move], s[move], a[move], u[move]
        j = (cum[s, a] <= u[:, None]).sum(axis=1)
        j = np.minimum(j, last[s, a])
        state[idx] = j
        t[idx] = tn[move]
        if stop_at_zero:
            hit = j == 0
            if hit.any():
                h = idx[hit]
                acc[h] += prev_cost[h] * K(t[h])
                idx = idx[~hit]
        live = idx
    return acc, state


def _integrals(model, policy, rate_cost, K, start, t0, t_end, stop_at_zero, N, seed):
    if N < 1:
        raise ValueError("N must be >= 1")
    if not 0 <= start < model.n:
        raise ValueError(f"start state {start} out of range")
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    accs, finals = [], []
    for b, lo in enumerate(range(0, N, BLOCK)):
        rng = np.random.default_rng([seed, b])
        acc, final = _block_integrals(model, policy, rate_cost, K, start, t0, t_end,
                                      stop_at_zero, min(BLOCK, N - lo), rng)
        accs.append(acc)
        finals.append(final)
    return np.concatenate(accs), np.concatenate(finals)


def _exp_mean(L: np.ndarray) -> tuple[float, float, float, float]:
    """Mean and SE of ``exp(L)`` plus log-mean and its delta-method SE."""
    m = float(L.max())
    z = np.exp(L - m)
    zbar = float(z.mean())
    zse = float(z.std(ddof=1)) / math.sqrt(L.size) if L.size > 1 else 0.0
    log_mean = m + math.log(zbar)
    log_se = zse / zbar
    with np.errstate(over="ignore"):
        scale = math.exp(m) if m < 709.0 else math.inf
    return scale * zbar, scale * zse, log_mean, log_se


def _undiscounted(t):
    return t


def _discounted(alpha: float):
    def K(t):
        return -np.expm1(-alpha * t) / alpha
    return K


def mc_finite_cost(
    model: CtmdpModel,
    policy,
    theta: float,
    horizon: float,
    N: int,
    seed: int = 0,
    start: int = 0,
) -> McEstimate:
    """Estimate ``E_start exp(theta (int_0^T c dt + g(X_T)))``.

    ``notes`` carries the certainty equivalent ``log(mean) / theta`` and its
    delta-method standard error.
    """
    if theta <= 0 or horizon <= 0:
        raise ValueError("theta and horizon must be positive")
    policy = _policy(model, policy)
    _check_grid(policy, 0.0, horizon)
    acc, final = _integrals(model, policy, model.C, _undiscounted, start, 0.0,
                            float(horizon), False, N, seed)
    mean, se, lm, lse = _exp_mean(theta * (acc + model.terminal[final]))
    return McEstimate(
        mean, se, N, "E exp(theta (int_0^T c dt + g(X_T)))", seed, lm, lse,
        params={"theta": theta, "T": horizon, "start": start},
        notes={"certainty_equivalent": lm / theta, "certainty_equivalent_se": lse / theta},
    )


def discounted_horizon(model: CtmdpModel, theta: float, alpha: float,
                       bias: float = DEFAULT_BIAS) -> float:
    """Smallest ``T`` with ``exp(theta ||c|| e^{-alpha T} / alpha) - 1 <= bias``."""
    top = theta * model.cost_sup / alpha
    if top == 0.0:
        return 0.0
    return max(0.0, math.log(top / math.log1p(bias)) / alpha)


def mc_discounted_cost(
    model: CtmdpModel,
    policy,
    theta: float,
    alpha: float,
    N: int,
    T_max: float | None = None,
    seed: int = 0,
    start: int = 0,
    bias: float = DEFAULT_BIAS,
) -> McEstimate:
    """Estimate ``E_start exp(theta int_0^inf e^{-alpha t} c dt)`` truncated at ``T_max``.

    The neglected tail is at most ``theta ||c|| e^{-alpha T_max} / alpha`` in
    the exponent; ``bias_bound`` is ``mean * (exp(that) - 1)``.  ``policy``
    may be a ``ThetaPolicy`` for the time-dependent optimal control.

    Raises
    ------
    ValueError
        If ``T_max`` leaves a relative bias above ``bias``.
    """
    if theta <= 0 or alpha <= 0:
        raise ValueError("theta and alpha must be positive")
    need = discounted_horizon(model, theta, alpha, bias)
    if T_max is None:
        T_max = need
    elif T_max < need:
        raise ValueError(
            f"T_max={T_max:.4g} leaves relative bias above {bias:g}; need T_max >= {need:.4g}"
        )
    policy = _policy(model, policy)
    if T_max <= 0:
        # zero cost: the functional is identically 1
        return McEstimate(1.0, 0.0, N, "E exp(theta int_0^inf e^{-alpha t} c dt)", seed,
                          0.0, 0.0, 0.0, {"theta": theta, "alpha": alpha, "T_max": 0.0,
                                          "start": start})
    acc, _ = _integrals(model, policy, model.C, _discounted(alpha), start, 0.0,
                        float(T_max), False, N, seed)
    mean, se, lm, lse = _exp_mean(theta * acc)
    tail = math.expm1(theta * model.cost_sup * math.exp(-alpha * T_max) / alpha)
    return McEstimate(
        mean, se, N, "E exp(theta int_0^inf e^{-alpha t} c dt)", seed, lm, lse,
        bias_bound=mean * tail,
        params={"theta": theta, "alpha": alpha, "T_max": T_max, "start": start},
    )


def _default_growth_horizon(model: CtmdpModel) -> float:
    positive = model.off[model.off > 0]
    return 100.0 / float(positive.min()) if positive.size else 100.0


def mc_average_growth(
    model: CtmdpModel,
    policy,
    theta: float,
    T: float | None = None,
    N: int = 10_000,
    seed: int = 0,
    start: int = 0,
) -> McEstimate:
    """Estimate ``(1 / (theta T)) log E_start exp(theta int_0^T c dt)``.

    ``mean`` is the growth-rate estimate and ``std_error`` its delta-method
    SE.  For an irreducible stationary policy the finite-``T`` value differs
    from ``rho`` by at most ``max(|log(h_i / max h)|, |log(h_i / min h)|) / (theta T)``,
    reported as ``bias_bound``.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    T = _default_growth_horizon(model) if T is None else float(T)
    policy = _policy(model, policy)
    acc, _ = _integrals(model, policy, model.C, _undiscounted, start, 0.0, T, False, N, seed)
    _, _, lm, lse = _exp_mean(theta * acc)
    bias = None
    if isinstance(policy, StationaryPolicy):
        h = evaluate_policy(model, policy, theta).h
        bias = max(abs(math.log(h[start] / h.max())), abs(math.log(h[start] / h.min())))
        bias /= theta * T
    return McEstimate(
        lm / (theta * T), lse / (theta * T), N,
        "(1/(theta T)) log E exp(theta int_0^T c dt)", seed, lm, lse,
        bias_bound=bias,
        params={"theta": theta, "T": T, "start": start},
    )


def mc_exp_hitting(
    model: CtmdpModel,
    policy,
    eta: float,
    start: int,
    N: int,
    seed: int = 0,
    certificate: LyapunovCertificate | None = None,
) -> McEstimate:
    """Estimate ``E_start exp(eta tau_0)``, ``tau_0`` the first hitting time of 0.

    From ``start = 0`` the path must leave 0 first (return time).  With a
    certificate, ``eta < delta`` is required and ``notes["bound"]`` holds
    ``e^{V(start)}`` with ``notes["below_bound"]`` the 3-SE comparison.
    """
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    if certificate is not None and not eta < certificate.delta:
        raise ValueError(f"eta={eta} must be below delta={certificate.delta}")
    policy = _policy(model, policy)
    ones = np.ones_like(model.C)
    acc, _ = _integrals(model, policy, ones, _undiscounted, start, 0.0, math.inf,
                        True, N, seed)
    mean, se, lm, lse = _exp_mean(eta * acc)
    notes = {"mean_tau0": float(acc.mean())}
    if start == 0:
        notes["start_zero"] = "return time: the path leaves 0 before the hit is counted"
    if certificate is not None:
        bound = math.exp(certificate.V[start])
        notes.update(bound=bound, below_bound=bool(mean <= bound + 3.0 * se))
    return McEstimate(mean, se, N, "E exp(eta tau_0)", seed, lm, lse,
                      params={"eta": eta, "start": start}, notes=notes)


def mc_poisson_h(
    model: CtmdpModel,
    policy,
    theta: float,
    rho: float,
    start: int,
    N: int,
    seed: int = 0,
) -> McEstimate:
    """Estimate ``E_start exp(theta int_0^{tau_0} (c - rho) dt)``, which equals ``h(start)``.

    At ``start = 0`` the return time is used and the value is informative
    only; ``h(0) = 1`` holds by normalisation.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    policy = _policy(model, policy)
    acc, _ = _integrals(model, policy, model.C - rho, _undiscounted, start, 0.0, math.inf,
                        True, N, seed)
    mean, se, lm, lse = _exp_mean(theta * acc)
    notes = {}
    if start == 0:
        notes["start_zero"] = "return time; h(0) = 1 by normalisation, not asserted"
    return McEstimate(mean, se, N, "E exp(theta int_0^tau_0 (c - rho) dt)", seed, lm, lse,
                      params={"theta": theta, "rho": rho, "start": start}, notes=notes)
