"""Finite controlled Markov chain models.

A model holds, for every state ``i`` and every action ``a`` available there,
a row of transition rates ``lambda_ij(a)``, a running cost ``c(i, a)`` and a
terminal cost ``g(i)``.  Rates follow the generator convention: the diagonal
entry is minus the sum of the off-diagonal entries.

Internally the per-state action lists are padded to a common width so the
solvers can work on ``(n, A_max, n)`` arrays; padded slots are masked out.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

logger = logging.getLogger(__name__)

__all__ = [
    "CtmdpModel",
    "ModelDiagnostics",
    "ModelError",
    "load_model",
    "dump_model",
    "model_from_dict",
    "model_to_dict",
    "validate",
    "is_irreducible",
    "random_model",
]

# Tolerance on a diagonal entry supplied in a document.
DIAGONAL_TOL = 1e-9

# Above this many stationary policies, irreducible_all falls back to the
# union-support test only.
IRREDUCIBILITY_ENUM_CAP = 100_000


class ModelError(ValueError):
    """A model document or model definition is invalid."""


@dataclass(frozen=True, eq=False)
class CtmdpModel:
    """Finite continuous-time Markov decision process.

    Parameters
    ----------
    actions : sequence of sequences of str
        ``actions[i]`` lists the labels of the actions available in state i.
    rates : sequence of arrays
        ``rates[i]`` has shape ``(len(actions[i]), n)``; row ``a`` holds
        ``lambda_ij(a)`` for all ``j`` with the diagonal equal to minus the
        off-diagonal sum.
    cost : sequence of arrays
        ``cost[i][a]`` is the running cost rate ``c(i, a) >= 0``.
    terminal : array
        Terminal cost ``g(i) >= 0`` (finite-horizon problems only).

    Use :func:`model_from_dict` or :func:`load_model` rather than calling the
    constructor directly; they check the invariants and fill the diagonal.
    """

    actions: tuple[tuple[str, ...], ...]
    rates: tuple[np.ndarray, ...]
    cost: tuple[np.ndarray, ...]
    terminal: np.ndarray
    # padded views, built in __post_init__
    R: np.ndarray = field(init=False, repr=False)
    C: np.ndarray = field(init=False, repr=False)
    mask: np.ndarray = field(init=False, repr=False)
    off: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.actions)
        amax = max(len(a) for a in self.actions)
        R = np.zeros((n, amax, n))
        C = np.zeros((n, amax))
        mask = np.zeros((n, amax), dtype=bool)
        for i in range(n):
            k = len(self.actions[i])
            R[i, :k] = self.rates[i]
            C[i, :k] = self.cost[i]
            mask[i, :k] = True
        off = R.copy()
        off[np.arange(n), :, np.arange(n)] = 0.0
        for name, arr in (("R", R), ("C", C), ("mask", mask), ("off", off)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for arr in (*self.rates, *self.cost, self.terminal):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.actions)

    @property
    def n_actions(self) -> np.ndarray:
        return np.array([len(a) for a in self.actions])

    @property
    def n_policies(self) -> int:
        return int(np.prod([len(a) for a in self.actions], dtype=object))

    @property
    def exit_rates(self) -> np.ndarray:
        """``-lambda_ii(a)`` as an ``(n, A_max)`` array (zero on padding)."""
        return self.off.sum(axis=2)

    @property
    def rate_bound(self) -> float:
        """The uniform bound ``M = max_{i,a} -lambda_ii(a)``."""
        return float(self.exit_rates.max())

    @property
    def cost_sup(self) -> float:
        return float(max(c.max() for c in self.cost))

    @property
    def terminal_sup(self) -> float:
        return float(self.terminal.max())

    def action_index(self, state: int, label: str) -> int:
        return self.actions[state].index(label)

    def generator(self, policy: Sequence[int]) -> np.ndarray:
        """Generator matrix of the chain under a stationary policy."""
        policy = np.asarray(policy)
        return self.R[np.arange(self.n), policy].copy()

    def policy_cost(self, policy: Sequence[int]) -> np.ndarray:
        policy = np.asarray(policy)
        return self.C[np.arange(self.n), policy].copy()

    def policies(self):
        """Iterate over all stationary policies in lexicographic order."""
        return itertools.product(*(range(len(a)) for a in self.actions))

    def q_values(self, f: np.ndarray, theta: float, cost_scale=1.0) -> np.ndarray:
        """Evaluate ``theta c(i,a) f(i) + sum_j lambda_ij(a) f(j)`` for all (i, a).

        ``f`` may be a single vector of length n or a stack of shape
        ``(K, n)``; ``cost_scale`` is a scalar or a length-K array.  The
        generator part is computed as ``sum_{j != i} lambda_ij (f_j - f_i)``
        so that it vanishes exactly on constant ``f``.  Padded action slots
        are set to ``+inf``.
        """
        f = np.asarray(f, dtype=float)
        diff = f[..., None, :] - f[..., :, None]
        q = np.einsum("iaj,...ij->...ia", self.off, diff)
        scale = theta * np.asarray(cost_scale, dtype=float)
        if scale.ndim:
            scale = scale[:, None, None]
        q = q + scale * self.C * f[..., :, None]
        return np.where(self.mask, q, np.inf)

    def minimize(self, f: np.ndarray, theta: float, cost_scale=1.0):
        """Return ``(min_a q, argmin_a q)``; ties go to the lowest action index."""
        q = self.q_values(f, theta, cost_scale)
        idx = np.argmin(q, axis=-1)
        return np.take_along_axis(q, idx[..., None], axis=-1)[..., 0], idx

    def __repr__(self):
        return f"CtmdpModel(n={self.n}, actions={[list(a) for a in self.actions]})"


@dataclass(frozen=True)
class ModelDiagnostics:
    M: float
    cost_sup: float
    terminal_sup: float
    row_sum_err: float
    irreducible_all: bool

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "cost_sup": self.cost_sup,
            "terminal_sup": self.terminal_sup,
            "row_sum_err": self.row_sum_err,
            "irreducible_all": self.irreducible_all,
        }


def _strongly_connected(support: np.ndarray) -> bool:
    if support.shape[0] == 1:
        return True
    ncomp, _ = connected_components(support, directed=True, connection="strong")
    return ncomp == 1


def is_irreducible(model: CtmdpModel, policy: Sequence[int]) -> bool:
    """True if the chain under the stationary ``policy`` is irreducible."""
    Q = model.generator(policy)
    np.fill_diagonal(Q, 0.0)
    return _strongly_connected(Q > 0)


def validate(model: CtmdpModel) -> ModelDiagnostics:
    """Compute the global bounds of a model and check irreducibility.

    ``irreducible_all`` is exact (every stationary policy is checked) when
    the model has at most ``IRREDUCIBILITY_ENUM_CAP`` policies; above that
    only the union-of-actions support is tested, which is necessary but not
    sufficient, and a warning is logged.
    """
    row_err = max(float(np.abs(r.sum(axis=1)).max()) for r in model.rates)
    union = (model.off * model.mask[:, :, None]).max(axis=1) > 0
    irreducible = _strongly_connected(union)
    if irreducible:
        if model.n_policies <= IRREDUCIBILITY_ENUM_CAP:
            irreducible = all(is_irreducible(model, p) for p in model.policies())
        else:
            logger.warning(
                "%d policies exceed the enumeration cap; irreducible_all "
                "reflects the union support only",
                model.n_policies,
            )
    return ModelDiagnostics(
        M=model.rate_bound,
        cost_sup=model.cost_sup,
        terminal_sup=model.terminal_sup,
        row_sum_err=row_err,
        irreducible_all=bool(irreducible),
    )


def _as_float(value: Any, where: str) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError) as exc:
        raise ModelError(f"{where}: expected a number, got {value!r}") from exc
    if not np.isfinite(x):
        raise ModelError(f"{where}: value {x} is not finite")
    return x


def model_from_dict(doc: dict) -> CtmdpModel:
    """Build a validated model from a parsed model document.

    Rate rows may give the diagonal entry as ``null`` (or omit nothing and
    give it explicitly); an explicit diagonal must agree with minus the
    off-diagonal sum to ``DIAGONAL_TOL``.  The stored diagonal is always the
    recomputed one.
    """
    for key in ("n", "actions", "rates", "cost"):
        if key not in doc:
            raise ModelError(f"model document is missing field {key!r}")
    n = doc["n"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ModelError(f"n must be a positive integer, got {n!r}")
    actions = doc["actions"]
    if len(actions) != n:
        raise ModelError(f"actions has {len(actions)} entries, expected n={n}")
    if len(doc["rates"]) != n or len(doc["cost"]) != n:
        raise ModelError("rates and cost must have one entry per state")

    labels_out, rates_out, cost_out = [], [], []
    for i in range(n):
        labels = [str(a) for a in actions[i]]
        if not labels:
            raise ModelError(f"state {i}: empty action set")
        if len(set(labels)) != len(labels):
            raise ModelError(f"state {i}: duplicate action labels {labels}")
        rate_map, cost_map = doc["rates"][i], doc["cost"][i]
        rows, costs = np.zeros((len(labels), n)), np.zeros(len(labels))
        for a, label in enumerate(labels):
            if label not in rate_map:
                raise ModelError(f"state {i}, action {a} ({label!r}): no rate row")
            if label not in cost_map:
                raise ModelError(f"state {i}, action {a} ({label!r}): no cost")
            row = rate_map[label]
            if len(row) != n:
                raise ModelError(
                    f"state {i}, action {a}: rate row has length {len(row)}, expected {n}"
                )
            for j in range(n):
                if j == i:
                    continue
                x = _as_float(row[j], f"state {i}, action {a}, target {j}")
                if x < 0:
                    raise ModelError(
                        f"negative rate {x} at (state {i}, action {a}, target {j})"
                    )
                rows[a, j] = x
            rows[a, i] = -rows[a].sum()
            if row[i] is not None:
                given = _as_float(row[i], f"state {i}, action {a}, diagonal")
                if abs(given - rows[a, i]) > DIAGONAL_TOL:
                    raise ModelError(
                        f"state {i}, action {a}: diagonal {given} does not match "
                        f"minus the off-diagonal sum {rows[a, i]}"
                    )
            c = _as_float(cost_map[label], f"cost at state {i}, action {a}")
            if c < 0:
                raise ModelError(f"negative cost {c} at (state {i}, action {a})")
            costs[a] = c
        labels_out.append(tuple(labels))
        rates_out.append(rows)
        cost_out.append(costs)

    terminal = doc.get("terminal")
    if terminal is None:
        g = np.zeros(n)
    else:
        if len(terminal) != n:
            raise ModelError(f"terminal has length {len(terminal)}, expected {n}")
        g = np.array([_as_float(x, f"terminal at state {i}") for i, x in enumerate(terminal)])
        if (g < 0).any():
            raise ModelError(f"negative terminal cost at state {int(np.argmax(g < 0))}")
    return CtmdpModel(tuple(labels_out), tuple(rates_out), tuple(cost_out), g)


def model_to_dict(model: CtmdpModel) -> dict:
    return {
        "n": model.n,
        "actions": [list(a) for a in model.actions],
        "rates": [
            {label: model.rates[i][a].tolist() for a, label in enumerate(model.actions[i])}
            for i in range(model.n)
        ],
        "cost": [
            {label: float(model.cost[i][a]) for a, label in enumerate(model.actions[i])}
            for i in range(model.n)
        ],
        "terminal": model.terminal.tolist(),
    }


def load_model(text: str) -> CtmdpModel:
    """Parse a JSON model document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"model document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelError("model document must be a JSON object")
    return model_from_dict(doc)


def dump_model(model: CtmdpModel, indent: int | None = 2) -> str:
    """Serialize to JSON.  Floats are written with ``repr`` and round-trip exactly."""
    return json.dumps(model_to_dict(model), indent=indent)


def random_model(
    seed: int,
    n_max: int = 4,
    actions_max: int = 3,
    rate_max: float = 2.0,
    cost_max: float = 2.0,
    density: float = 0.6,
    max_tries: int = 1000,
) -> CtmdpModel:
    """Draw a random model that is irreducible under every stationary policy.

    State count and per-state action counts are uniform on ``1..n_max`` and
    ``1..actions_max`` (at least two states).  Off-diagonal rates are zero
    with probability ``1 - density`` and otherwise uniform on
    ``(0, rate_max]``.  Draws are rejected until every policy is irreducible.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        n = int(rng.integers(2, n_max + 1))
        doc = {"n": n, "actions": [], "rates": [], "cost": []}
        for i in range(n):
            k = int(rng.integers(1, actions_max + 1))
            labels = [chr(ord("a") + a) for a in range(k)]
            rows, costs = {}, {}
            for label in labels:
                row = rate_max * (1.0 - rng.random(n))
                row[rng.random(n) > density] = 0.0
                rows[label] = [None if j == i else float(row[j]) for j in range(n)]
                costs[label] = float(cost_max * rng.random())
            doc["actions"].append(labels)
            doc["rates"].append(rows)
            doc["cost"].append(costs)
        doc["terminal"] = rng.random(n).tolist()
        model = model_from_dict(doc)
        if validate(model).irreducible_all:
            return model
    raise RuntimeError(f"no all-policy irreducible model found in {max_tries} draws")
