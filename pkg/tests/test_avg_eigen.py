import math

import numpy as np
import pytest

from rsctmc.avg_eigen import (
    LyapunovCertificate,
    ReducibleError,
    StationaryPolicy,
    check_lyapunov,
    evaluate_policy,
    poisson_residual,
    principal_eigen,
    search_certificate,
    stationary_distribution,
    twisted_generator,
)
from rsctmc.hjb_finite import SolverError
from rsctmc.model import model_from_dict, random_model

from conftest import SUITE20, symmetric, with_costs


def _dense_rho(A, theta):
    # oracle: largest real part among the eigenvalues of the small dense matrix
    return float(np.linalg.eigvals(A).real.max()) / theta


def test_twisted_symmetric():
    A = twisted_generator(symmetric(c0=3.0), (0, 0), 0.5)
    assert np.array_equal(A, [[-1 + 1.5, 1.0], [1.0, -1 + 1.5]])


def test_twisted_zero_cost_is_generator(m2):
    z = with_costs(m2, cost=0.0)
    for p in z.policies():
        assert np.array_equal(twisted_generator(z, p, 0.5), z.generator(p))


def test_twisted_m2_by_hand(m2):
    A = twisted_generator(m2, (1, 0), 0.5)
    assert np.array_equal(A, [[-2.0 + 0.5, 2.0], [1.0, -1.0]])
    sym = 0.5 * (A + A.T)
    assert np.array_equal(sym, [[-1.5, 1.5], [1.5, -1.0]])


@pytest.mark.parametrize("c0", [0.0, 0.7, 2.0])
@pytest.mark.parametrize("theta", [0.1, 0.5, 0.9])
def test_constant_cost_symmetric(c0, theta):
    m = symmetric(c0=c0)
    ev = evaluate_policy(m, (0, 0), theta)
    assert abs(ev.rho - c0) <= 1e-10
    assert np.abs(ev.h - 1.0).max() <= 1e-10
    assert ev.h[0] == 1.0


def test_m2_policy_aa_dense_oracle(m2):
    ev = evaluate_policy(m2, (0, 0), 0.5)
    A = twisted_generator(m2, (0, 0), 0.5)
    # characteristic polynomial of the 2x2 matrix
    tr, det = np.trace(A), np.linalg.det(A)
    mu = 0.5 * (tr + math.sqrt(tr * tr - 4 * det))
    assert abs(ev.rho - mu / 0.5) <= 1e-9
    assert ev.residual <= 1e-8


def test_m2_values(m2):
    ev = evaluate_policy(m2, (1, 0), 0.5)
    assert abs(ev.rho - 0.372281323) <= 1e-8
    assert np.allclose(ev.h, [1.0, 0.84307033], atol=1e-8)


def test_reducible_rejected():
    m = model_from_dict({"n": 2, "actions": [["a"], ["a"]],
                         "rates": [{"a": [None, 1.0]}, {"a": [0.0, None]}],
                         "cost": [{"a": 1.0}, {"a": 0.0}]})
    with pytest.raises(ReducibleError, match="reducible"):
        evaluate_policy(m, (0, 0), 0.5)


def test_non_metzler_rejected():
    with pytest.raises(ValueError, match="Metzler"):
        principal_eigen(np.array([[0.0, -1.0], [1.0, 0.0]]), 0.5)


def test_non_convergence_reported():
    # weak coupling: the subdominant ratio of the shifted matrix is 1 - O(1e-6)
    A = np.array([[0.0, 1e-6], [1e-6, -1e-6]])
    with pytest.raises(SolverError, match="subdominant ratio"):
        principal_eigen(A, 0.5, max_iter=50)


def test_single_state():
    A = np.array([[0.5 * 2.0]])
    ev = principal_eigen(A, 0.5)
    assert ev.rho == 2.0 and ev.h[0] == 1.0


@pytest.mark.parametrize("seed", SUITE20)
def test_dense_agreement_and_invariants(seed):
    m = random_model(seed)
    for theta in (0.2, 0.5, 0.9):
        for p in m.policies():
            ev = evaluate_policy(m, p, theta)
            A = twisted_generator(m, p, theta)
            assert abs(ev.rho - _dense_rho(A, theta)) <= 1e-9
            assert ev.residual <= 1e-8
            assert (ev.h > 0).all() and ev.h[0] == 1.0
            c = m.policy_cost(p)
            assert c.min() - 1e-12 <= ev.rho <= c.max() + 1e-12


@pytest.mark.parametrize("seed", SUITE20[:10])
def test_constant_shift(seed):
    m = random_model(seed)
    beta = 0.8
    shifted = with_costs(m, shift=beta)
    for p in m.policies():
        a = evaluate_policy(m, p, 0.5)
        b = evaluate_policy(shifted, p, 0.5)
        assert abs(b.rho - a.rho - beta) <= 1e-10
        assert np.abs(a.h - b.h).max() <= 1e-10


@pytest.mark.parametrize("seed", SUITE20[:10])
def test_monotone_in_theta_and_risk_neutral_limit(seed):
    m = random_model(seed)
    for p in m.policies():
        rhos = [evaluate_policy(m, p, th).rho for th in np.arange(1, 10) / 10]
        assert (np.diff(rhos) >= -1e-8).all()
        pi = stationary_distribution(m.generator(p))
        neutral = float(pi @ m.policy_cost(p))
        for th in (1e-3, 1e-2):
            assert abs(evaluate_policy(m, p, th).rho - neutral) <= 1e-2


def test_poisson_residual_cases(m2):
    m = symmetric(c0=1.5)
    ev = evaluate_policy(m, (0, 0), 0.5)
    assert poisson_residual(m, (0, 0), 0.5, ev) == 0.0
    z = with_costs(m2, cost=0.0)
    assert poisson_residual(z, (1, 0), 0.5, evaluate_policy(z, (1, 0), 0.5)) <= 1e-15
    assert poisson_residual(m2, (1, 0), 0.5, evaluate_policy(m2, (1, 0), 0.5)) <= 1e-8


def test_stationary_policy_checks(m2):
    with pytest.raises(ValueError):
        StationaryPolicy((2, 0)).check(m2)
    with pytest.raises(ValueError):
        StationaryPolicy((0,)).check(m2)
    assert StationaryPolicy((1, 0)).labels(m2) == ["b", "a"]


# ---- Lyapunov certificates ----

def test_zero_V_fails_off_reference(m2):
    cert = LyapunovCertificate(np.zeros(2), np.ones(2), 0.5, 10.0)
    rep = check_lyapunov(m2, cert)
    assert not rep.holds
    assert (rep.margins[1, 0] < 0)
    assert (rep.margins[0][m2.mask[0]] >= 0).all()


@pytest.mark.parametrize("v1", [0.5, 1.0, 2.0, 3.0])
def test_two_state_closed_form(v1):
    # state 1: LHS = e^{-v1} - 1, so delta = 1 - e^{-v1} is tight;
    # state 0: LHS = e^{v1} - 1 must sit below -delta + b
    m = symmetric(c0=1.0)
    delta = 1.0 - math.exp(-v1)
    b = math.expm1(v1) + delta
    cert = LyapunovCertificate(np.array([0.0, v1]), np.ones(2), delta * (1 - 1e-12), b)
    rep = check_lyapunov(m, cert)
    assert rep.holds
    assert abs(rep.margins[1, 0]) <= 1e-12
    tighter = LyapunovCertificate(np.array([0.0, v1]), np.ones(2), delta * (1 + 1e-6), b)
    assert not check_lyapunov(m, tighter).holds


def test_m2_grid_search(m2):
    cert = search_certificate(m2, np.round(np.arange(0.5, 3.0001, 0.05), 10))
    assert cert is not None
    rep = check_lyapunov(m2, cert, theta=0.5)
    assert rep.holds
    assert np.nanmin(rep.margins) >= 0
    assert cert.V[0] == 0.0 and 0.5 <= cert.V[1] <= 3.0
    assert rep.theta_cost_below_delta == (0.5 * m2.cost_sup < cert.delta)


@pytest.mark.parametrize("seed", SUITE20[:10])
def test_search_certificates_hold(seed):
    m = random_model(seed)
    cert = search_certificate(m, [0.5, 1.0, 2.0])
    if cert is not None:
        assert check_lyapunov(m, cert).holds


def test_overflow_reported(m2):
    cert = LyapunovCertificate(np.array([0.0, 800.0]), np.ones(2), 0.5, 1.0)
    with pytest.raises(OverflowError, match="overflow"):
        check_lyapunov(m2, cert)


@pytest.mark.parametrize("kw", [dict(V=[-1.0, 0.0]), dict(w=[0.5, 1.0]), dict(delta=0.0),
                                dict(b=math.inf)])
def test_certificate_validation(kw):
    args = dict(V=[0.0, 1.0], w=[1.0, 1.0], delta=0.5, b=1.0)
    args.update(kw)
    with pytest.raises(ValueError):
        LyapunovCertificate(np.array(args["V"]), np.array(args["w"]), args["delta"], args["b"])
