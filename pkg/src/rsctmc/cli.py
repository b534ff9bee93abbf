"""Command-line entry point.

Every subcommand reads a JSON model document and writes one JSON result
document (stdout, or ``--output``).  Each result embeds the full argument
set under ``config`` so a run can be repeated exactly.

Exit codes: 0 success, 1 invalid model, 2 numerical failure, 3 crosscheck
failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

from . import __version__
from .avg_eigen import (
    LyapunovCertificate,
    ReducibleError,
    StationaryPolicy,
    check_lyapunov,
    evaluate_policy,
    search_certificate,
)
from .hjb_discounted import (
    ThetaPolicy,
    discounted_policy_at_time,
    solve_eps,
    solve_limit,
)
from .hjb_finite import SolverError, hjb_residual, picard_solve, solve_finite_horizon
from .model import CtmdpModel, ModelError, load_model, validate
from .policy_iter import brute_force_average, policy_iteration
from .sim import (
    SimulationError,
    mc_average_growth,
    mc_discounted_cost,
    mc_exp_hitting,
    mc_finite_cost,
    mc_poisson_h,
    simulate,
)

logger = logging.getLogger("rsctmc")

EXIT_OK, EXIT_MODEL, EXIT_NUMERIC, EXIT_CROSSCHECK, EXIT_USAGE = 0, 1, 2, 3, 64
DEFAULT_EPS = (1e-2, 5e-3, 2.5e-3)
# policies simulated by `crosscheck hitting` when --policy is not given
HITTING_POLICY_CAP = 32


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from exc


def _add_common(p, *, theta=True, seed=False):
    p.add_argument("model", help="path to a JSON model document ('-' for stdin)")
    if theta:
        p.add_argument("--theta", type=float, default=0.5, help="risk parameter in (0, 1) (default 0.5)")
    if seed:
        p.add_argument("-N", "--samples", type=int, default=100_000, dest="N",
                       help="number of trajectories (default 1e5)")
        p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p.add_argument("-o", "--output", help="write the result here instead of stdout")


def _add_finite(p):
    p.add_argument("-T", "--horizon", type=float, default=1.0, help="horizon T (default 1)")
    p.add_argument("--steps", type=int, default=2000, help="time steps K (default 2000)")


def _add_discounted(p):
    p.add_argument("--alpha", type=float, default=1.0, help="discount rate (default 1)")
    p.add_argument("--theta-max", type=float, default=0.9, help="top of the theta grid (default 0.9)")
    p.add_argument("--theta-steps", type=int, default=10_000, help="theta steps L (default 1e4)")
    p.add_argument("--eps", type=_floats, default=list(DEFAULT_EPS),
                   help="decreasing eps list (default 1e-2,5e-3,2.5e-3)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rsctmc", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"rsctmc {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("validate", help="check a model and print its bounds")
    _add_common(p, theta=False)

    p = sub.add_parser("solve-finite", help="finite-horizon value and Markov policy")
    _add_common(p)
    _add_finite(p)
    p.add_argument("--picard", action="store_true", help="also run the Picard cross-check")

    p = sub.add_parser("solve-discounted", help="discounted value via the eps-halving study")
    _add_common(p)
    _add_discounted(p)

    p = sub.add_parser("solve-average", help="average cost by policy iteration")
    _add_common(p)
    p.add_argument("--initial", help="starting policy, labels or indices, comma-separated")

    p = sub.add_parser("brute-force", help="average cost of every stationary policy")
    _add_common(p)

    p = sub.add_parser("simulate", help="one sample path")
    _add_common(p, theta=False)
    p.add_argument("--policy", help="stationary policy (default: action 0 everywhere)")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--t-end", type=float)
    p.add_argument("--stop-at-zero", action="store_true")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("estimate", help="Monte Carlo estimate of one functional")
    p.add_argument("functional", choices=["finite", "discounted", "growth", "hitting", "poisson"])
    _add_common(p, seed=True)
    _add_finite(p)
    _add_discounted(p)
    p.add_argument("--policy", help="stationary policy; default is the solver's optimal control")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--eta", type=float, default=0.5, help="exponent rate for 'hitting'")
    p.add_argument("--rho", type=float, help="rho for 'poisson' (default: evaluated)")
    p.add_argument("--growth-T", type=float, help="horizon for 'growth' (default 100 / min rate)")
    p.add_argument("--T-max", type=float, help="truncation for 'discounted' (default from bias 1e-4)")

    p = sub.add_parser("check-lyapunov", help="check or search a drift certificate")
    _add_common(p)
    p.add_argument("--V", type=_floats, help="Lyapunov function, comma-separated")
    p.add_argument("--weight", type=_floats, help="drift weight (default all ones)")
    p.add_argument("--delta", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--grid", type=_floats, help="search grid for V (default 0.5..3 step 0.05)")

    p = sub.add_parser("crosscheck", help="solver against Monte Carlo, PASS/FAIL per start state")
    p.add_argument("kind", choices=["finite", "discounted", "average", "hitting", "poisson"])
    _add_common(p, seed=True)
    _add_finite(p)
    _add_discounted(p)
    p.add_argument("--policy", help="policy to simulate (hitting only)")
    p.add_argument("--growth-T", type=float)
    p.add_argument("--k", type=float, default=3.0, help="tolerance in standard errors (default 3)")
    return parser


def _read_model(path: str) -> CtmdpModel:
    text = sys.stdin.read() if path == "-" else open(path, encoding="utf-8").read()
    return load_model(text)


def _parse_policy(model: CtmdpModel, text: str | None) -> StationaryPolicy | None:
    if text is None:
        return None
    parts = [t.strip() for t in text.split(",")]
    if len(parts) != model.n:
        raise UsageError(f"policy has {len(parts)} entries, model has {model.n} states")
    out = []
    for i, tok in enumerate(parts):
        if tok in model.actions[i]:
            out.append(model.actions[i].index(tok))
        else:
            try:
                out.append(int(tok))
            except ValueError:
                raise UsageError(f"unknown action {tok!r} in state {i}") from None
    pol = StationaryPolicy(tuple(out))
    try:
        pol.check(model)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return pol


def _check_ranges(args) -> None:
    theta = getattr(args, "theta", None)
    if theta is not None and not 0.0 < theta < 1.0:
        raise UsageError(f"--theta must lie in (0, 1), got {theta}")
    if getattr(args, "alpha", 1.0) <= 0:
        raise UsageError("--alpha must be positive")
    if getattr(args, "N", 1) < 1:
        raise UsageError("-N must be >= 1")
    if getattr(args, "seed", 0) < 0:
        raise UsageError("--seed must be nonnegative")
    if getattr(args, "horizon", 1.0) <= 0:
        raise UsageError("-T must be positive")
    tmax = getattr(args, "theta_max", None)
    if tmax is not None and not 0.0 < tmax < 1.0:
        raise UsageError("--theta-max must lie in (0, 1)")


def _theta_row(sol, theta: float) -> int:
    return int(np.argmin(np.abs(sol.theta_grid - theta)))


# ---- subcommands -------------------------------------------------------------

def cmd_validate(model, args):
    return {"diagnostics": validate(model).to_dict(), "n": model.n,
            "actions": [list(a) for a in model.actions]}


def cmd_solve_finite(model, args):
    grid, policy = solve_finite_horizon(model, args.theta, args.horizon, args.steps)
    out = {
        "value": grid.to_dict(),
        "policy": {**policy.to_dict(),
                   "labels": [[model.actions[i][a] for i, a in enumerate(row)]
                              for row in policy.table[:1]]},
        "hjb_residual": hjb_residual(model, args.theta, grid),
    }
    if args.picard:
        pg = picard_solve(model, args.theta, args.horizon, args.steps)
        out["picard"] = {"phi0": pg.phi[0].tolist(), "meta": pg.meta,
                         "sup_gap": float(np.abs(pg.phi - grid.phi).max())}
    return out


def cmd_solve_discounted(model, args):
    lim = solve_limit(model, args.alpha, args.theta_max, args.theta_steps, args.eps)
    sol = lim.solution
    out = lim.to_dict()
    k = _theta_row(sol, args.theta) if sol.theta_grid[0] <= args.theta else None
    if k is not None:
        out["at_theta"] = {"theta": float(sol.theta_grid[k]), "W": sol.W[k].tolist(),
                           "Valpha": sol.Valpha[k].tolist(), "policy": sol.policy[k].tolist()}
    out["smallest_theta_row"] = {"theta": float(sol.theta_grid[0]),
                                 "Valpha": sol.Valpha[0].tolist()}
    return out


def cmd_solve_average(model, args):
    init = _parse_policy(model, args.initial)
    res = policy_iteration(model, args.theta, None if init is None else init.actions)
    out = res.to_dict()
    out["policy_labels"] = res.policy.labels(model)
    return out


def cmd_brute_force(model, args):
    res = brute_force_average(model, args.theta)
    out = res.to_dict()
    out["policy_labels"] = res.policy.labels(model)
    return out


def cmd_simulate(model, args):
    pol = _parse_policy(model, args.policy) or StationaryPolicy((0,) * model.n)
    if args.t_end is None and not args.stop_at_zero:
        raise UsageError("give --t-end or --stop-at-zero")
    tr = simulate(model, pol, args.start, 0.0, args.t_end, args.stop_at_zero, args.seed)
    return {"trajectory": tr.to_dict(), "policy": list(pol.actions)}


def _optimal_stationary(model, theta):
    return policy_iteration(model, theta).policy


def cmd_estimate(model, args):
    pol = _parse_policy(model, args.policy)
    f = args.functional
    if f == "finite":
        if pol is None:
            pol = solve_finite_horizon(model, args.theta, args.horizon, args.steps)[1]
        est = mc_finite_cost(model, pol, args.theta, args.horizon, args.N, args.seed, args.start)
    elif f == "discounted":
        if pol is None:
            sol = solve_eps(model, args.alpha, min(args.eps), args.theta_max, args.theta_steps)
            pol = ThetaPolicy(sol, args.theta)
        est = mc_discounted_cost(model, pol, args.theta, args.alpha, args.N, args.T_max,
                                 args.seed, args.start)
    elif f == "growth":
        pol = pol or _optimal_stationary(model, args.theta)
        est = mc_average_growth(model, pol, args.theta, args.growth_T, args.N, args.seed,
                                args.start)
    elif f == "hitting":
        pol = pol or StationaryPolicy((0,) * model.n)
        est = mc_exp_hitting(model, pol, args.eta, args.start, args.N, args.seed)
    else:
        pol = pol or _optimal_stationary(model, args.theta)
        rho = args.rho if args.rho is not None else evaluate_policy(model, pol, args.theta).rho
        est = mc_poisson_h(model, pol, args.theta, rho, args.start, args.N, args.seed)
    return {"estimate": est.to_dict()}


def cmd_check_lyapunov(model, args):
    if args.V is not None:
        if args.delta is None or args.b is None:
            raise UsageError("--V needs --delta and --b")
        w = args.weight if args.weight is not None else [1.0] * model.n
        try:
            cert = LyapunovCertificate(np.array(args.V), np.array(w), args.delta, args.b)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        searched = False
    else:
        grid = args.grid if args.grid is not None else np.round(np.arange(0.5, 3.0001, 0.05), 10)
        cert = search_certificate(model, grid)
        searched = True
        if cert is None:
            return {"certificate": None, "searched": True, "holds": False}
    rep = check_lyapunov(model, cert, args.theta)
    return {"certificate": cert.to_dict(), "searched": searched, **rep.to_dict()}


def _row(start, solver, est, tol, **extra):
    return {"start": start, "solver": solver, "mc": est, "tolerance": tol,
            "abs_diff": abs(est - solver), "pass": bool(abs(est - solver) <= tol), **extra}


def cmd_crosscheck(model, args):
    rows = []
    k = args.k
    if args.kind == "finite":
        grid, pol = solve_finite_horizon(model, args.theta, args.horizon, args.steps)
        for i in range(model.n):
            est = mc_finite_cost(model, pol, args.theta, args.horizon, args.N, args.seed, i)
            ce, se = est.certainty_equivalent(args.theta)
            rows.append(_row(i, float(grid.psi[0, i]), ce, k * se, se=se, quantity="psi(0,i)"))
    elif args.kind == "discounted":
        eps = min(args.eps)
        sol = solve_eps(model, args.alpha, eps, args.theta_max, args.theta_steps)
        r = _theta_row(sol, args.theta)
        th = float(sol.theta_grid[r])
        pol = ThetaPolicy(sol, th)
        eps_rel = math.expm1(eps * model.cost_sup / args.alpha)
        for i in range(model.n):
            est = mc_discounted_cost(model, pol, th, args.alpha, args.N, None, args.seed, i)
            w = float(sol.W[r, i])
            tol = k * est.std_error + est.bias_bound + eps_rel * w
            rows.append(_row(i, w, est.mean, tol, se=est.std_error, quantity="W(theta,i)",
                             theta=th, truncation_bias=est.bias_bound, eps_bias=eps_rel * w))
    elif args.kind == "average":
        res = policy_iteration(model, args.theta)
        for i in range(model.n):
            est = mc_average_growth(model, res.policy, args.theta, args.growth_T, args.N,
                                    args.seed, i)
            rows.append(_row(i, res.rho_star, est.mean, k * est.std_error + est.bias_bound,
                             se=est.std_error, quantity="rho", finite_T_bias=est.bias_bound,
                             policy=list(res.policy.actions)))
    elif args.kind == "poisson":
        res = policy_iteration(model, args.theta)
        for i in range(1, model.n):
            est = mc_poisson_h(model, res.policy, args.theta, res.rho_star, i, args.N, args.seed)
            rows.append(_row(i, float(res.h[i]), est.mean, k * est.std_error,
                             se=est.std_error, quantity="h(i)"))
    else:
        cert = search_certificate(model, np.round(np.arange(0.5, 3.0001, 0.05), 10))
        if cert is None or not check_lyapunov(model, cert).holds:
            raise SolverError("no drift certificate found on the default grid")
        eta = cert.delta / 2.0
        pol = _parse_policy(model, args.policy)
        if pol is not None:
            pols = [pol]
        elif model.n_policies <= HITTING_POLICY_CAP:
            pols = [StationaryPolicy(p) for p in model.policies()]
        else:
            pols = [StationaryPolicy((0,) * model.n)]
        for p in pols:
            for i in range(1, model.n):
                est = mc_exp_hitting(model, p, eta, i, args.N, args.seed, cert)
                bound = est.notes["bound"]
                ok = est.mean <= bound + k * est.std_error
                rows.append({"start": i, "policy": list(p.actions), "mc": est.mean,
                             "se": est.std_error, "bound": bound, "eta": eta, "pass": bool(ok)})
    passed = all(r["pass"] for r in rows)
    return {"kind": args.kind, "rows": rows, "pass": passed}, (EXIT_OK if passed else EXIT_CROSSCHECK)


COMMANDS = {
    "validate": cmd_validate,
    "solve-finite": cmd_solve_finite,
    "solve-discounted": cmd_solve_discounted,
    "solve-average": cmd_solve_average,
    "brute-force": cmd_brute_force,
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "check-lyapunov": cmd_check_lyapunov,
    "crosscheck": cmd_crosscheck,
}


def _emit(doc: dict, path: str | None) -> None:
    text = json.dumps(doc, indent=2)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _strip_output(argv: list[str]) -> list[str]:
    """``argv`` without the output-path flag, which does not affect results."""
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
        elif tok in ("-o", "--output"):
            skip = True
        elif not tok.startswith("--output="):
            out.append(tok)
    return out


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    config = {k: v for k, v in vars(args).items() if k not in ("output", "verbose")}
    try:
        _check_ranges(args)
        model = _read_model(args.model)
        result = COMMANDS[args.command](model, args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rsctmc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, ReducibleError, json.JSONDecodeError, OSError) as exc:
        print(f"rsctmc: invalid model: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (SolverError, SimulationError, OverflowError, FloatingPointError) as exc:
        print(f"rsctmc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"rsctmc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    code = EXIT_OK
    if isinstance(result, tuple):
        result, code = result
    doc = {"command": args.command, "config": config, "argv": _strip_output(argv),
           "version": __version__, "result": result}
    if "seed" in config:
        doc["seed"] = config["seed"]
    _emit(doc, args.output)
    return code


if __name__ == "__main__":
    sys.exit(main())
