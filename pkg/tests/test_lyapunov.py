import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import RISKY, SAFE, make_chain2
from lyapcmdp.baselines import dual_lp_solve, unconstrained_solve
from lyapcmdp.cmdp import TransientCmdp, deterministic_policy, evaluate_policy, uniform_policy
from lyapcmdp.lyapunov import (
    CertificateError,
    InfeasibleBaselineError,
    LyapunovCertificate,
    auxiliary_cost_constant,
    auxiliary_cost_indicator,
    auxiliary_cost_lp,
    bellman_apply,
    build_certificate,
    certificate_for,
    check_assumption1,
    improvement_bound,
    is_member,
    lemma1_epsilon,
)
from lyapcmdp.random_instances import dense_cmdp, random_policy


def policies(mdp):
    return deterministic_policy(mdp, [SAFE, SAFE]), deterministic_policy(mdp, [RISKY, SAFE])


def test_constant_aux_cost_chain():
    mdp = make_chain2(2.0)
    safe, _ = policies(mdp)
    assert auxiliary_cost_constant(mdp, safe).tolist() == [0.5, 0.5]
    assert auxiliary_cost_constant(mdp, safe, use_horizon_bound=True).tolist() == [0.5, 0.5]
    assert auxiliary_cost_constant(make_chain2(1.0), safe).tolist() == [0.0, 0.0]
    with pytest.raises(InfeasibleBaselineError) as err:
        auxiliary_cost_constant(make_chain2(0.5), safe)
    assert err.value.constraint_value == 1.0


def test_indicator_aux_cost_chain():
    mdp = make_chain2(2.0)
    safe, risky = policies(mdp)
    assert auxiliary_cost_indicator(mdp, safe).tolist() == [1.0, 0.0]
    assert auxiliary_cost_indicator(make_chain2(1.0), safe).tolist() == [0.0, 0.0]
    # under risky s1 is never visited, so it cannot be chosen
    assert auxiliary_cost_indicator(mdp, risky).tolist() == [2.0, 0.0]


def test_lp_aux_cost_chain():
    mdp = make_chain2(2.0)
    safe, _ = policies(mdp)
    assert auxiliary_cost_lp(mdp, safe).sum() == pytest.approx(1.0)
    assert auxiliary_cost_lp(make_chain2(1.0), safe) == pytest.approx([0.0, 0.0])


def test_lp_aux_cost_caps_unreachable_states():
    mdp = make_chain2(2.0)
    _, risky = policies(mdp)
    eps = auxiliary_cost_lp(mdp, risky)
    cap = mdp.horizon_bound * mdp.constraint_cost.max()
    assert eps[1] == pytest.approx(cap)
    assert eps[0] == pytest.approx(2.0)


def test_certificate_examples():
    mdp = make_chain2(2.0)
    safe, _ = policies(mdp)
    cert = build_certificate(mdp, safe, np.zeros(2))
    assert cert.l_values.tolist() == evaluate_policy(mdp, safe, mdp.constraint_cost).tolist()
    assert build_certificate(mdp, safe, [0.5, 0.5]).l_values[0] == pytest.approx(2.0)
    assert build_certificate(mdp, safe, [1.0, 0.0]).l_values[0] == pytest.approx(2.0)
    with pytest.raises(CertificateError):
        build_certificate(mdp, safe, [2.0, 0.0])
    with pytest.raises(CertificateError):
        build_certificate(mdp, safe, [-0.1, 0.0])


def test_certificate_round_trip():
    mdp = make_chain2(2.0)
    cert = certificate_for(mdp, policies(mdp)[0], "indicator")
    back = LyapunovCertificate.from_dict(cert.to_dict(), mdp)
    assert np.array_equal(back.l_values, cert.l_values) and np.array_equal(back.ql, cert.ql)
    assert np.array_equal(back.epsilon, cert.epsilon)


def test_membership_chain():
    mdp = make_chain2(1.0)
    safe, risky = policies(mdp)
    cert = build_certificate(mdp, safe, np.zeros(2))
    assert all(is_member(cert, safe, x) for x in range(2))
    assert is_member(cert, risky, 0)


def test_membership_rejects_exposed_policy():
    # s0 can stop quietly or step into the costly s1
    P = np.zeros((2, 2, 2))
    P[0, 1, 1] = 1.0
    mdp = TransientCmdp(2, 2, P, np.zeros((2, 2)), [0.0, 5.0], 0, 0.0, 2)
    quiet = deterministic_policy(mdp, [0, 0])
    cert = build_certificate(mdp, quiet, np.zeros(2))
    assert not is_member(cert, deterministic_policy(mdp, [1, 0]), 0)


@pytest.mark.parametrize("form", ["constant", "indicator", "lp"])
def test_certificate_invariants_random(form):
    rng = np.random.default_rng({"constant": 1, "indicator": 2, "lp": 3}[form])
    for _ in range(15):
        mdp = dense_cmdp(rng, n_states=int(rng.integers(2, 8)), n_actions=3)
        base = unconstrained_solve(mdp, "min_constraint").final_policy
        cert = certificate_for(mdp, base, form)
        d = mdp.constraint_cost
        assert np.all(cert.epsilon >= 0)
        assert cert.l_values == pytest.approx(evaluate_policy(mdp, base, d + cert.epsilon), abs=1e-8)
        assert np.all(bellman_apply(mdp, base, d, cert.l_values) <= cert.l_values + 1e-9)
        assert cert.l_values[mdp.initial_state] <= mdp.threshold + 1e-9
        assert np.all(cert.l_values >= evaluate_policy(mdp, base, d) - 1e-9)
        # any policy that is a member everywhere stays within budget
        pi = random_policy(mdp, rng, 0.3)
        if all(is_member(cert, pi, x) for x in range(mdp.n_states)):
            assert evaluate_policy(mdp, pi, d)[mdp.initial_state] <= mdp.threshold + 1e-8


def test_lp_matches_indicator_objective():
    rng = np.random.default_rng(4)
    for _ in range(20):
        mdp = dense_cmdp(rng, n_states=int(rng.integers(2, 8)), n_actions=3)
        base = random_policy(mdp, rng)
        if evaluate_policy(mdp, base, mdp.constraint_cost)[0] > mdp.threshold:
            base = unconstrained_solve(mdp, "min_constraint").final_policy
        assert auxiliary_cost_lp(mdp, base).sum() == pytest.approx(auxiliary_cost_indicator(mdp, base).sum(),
                                                                   abs=1e-7)


def test_closeness_check_examples():
    mdp = make_chain2(1.0)
    safe, risky = policies(mdp)
    same = check_assumption1(mdp, safe, safe)
    assert same.holds and same.lhs == 0.0
    rep = check_assumption1(mdp, safe, risky)
    # TV is 1 at s0, T_bar = 2, D_max = 1: eps* = 4; zero slack gives rhs 0
    assert rep.lhs == 4.0 and rep.rhs == 0.0 and not rep.holds
    assert rep.d_bar == 1.0 and rep.slack == 0.0
    flat = TransientCmdp(2, 2, mdp.dense_transition(), mdp.cost, [0.0, 0.0], 0, 1.0, 2)
    rep = check_assumption1(flat, safe, risky)
    assert rep.holds and rep.lhs == 0.0 and rep.rhs == 0.0


def test_exact_epsilon_chain_and_identity():
    mdp = make_chain2(1.0)
    safe, risky = policies(mdp)
    assert np.all(lemma1_epsilon(mdp, safe, safe) == 0)
    eps = lemma1_epsilon(mdp, safe, risky)
    assert eps.tolist() == [-1.0, 0.0]
    d = mdp.constraint_cost
    assert evaluate_policy(mdp, safe, d + eps) == pytest.approx(evaluate_policy(mdp, risky, d), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_exact_epsilon_identity_random(seed):
    rng = np.random.default_rng(seed)
    mdp = dense_cmdp(rng, n_states=int(rng.integers(2, 7)), n_actions=3)
    base = random_policy(mdp, rng)
    star = dual_lp_solve(mdp).final_policy
    eps = lemma1_epsilon(mdp, base, star)
    d = mdp.constraint_cost
    assert np.max(np.abs(evaluate_policy(mdp, base, d + eps) - evaluate_policy(mdp, star, d))) <= 1e-8


def test_improvement_bound_examples(chain2, safe, risky):
    same = improvement_bound(chain2, safe, safe)
    assert (same.lambda_term, same.tv_term, same.lower, same.upper) == (0.0, 0.0, 0.0, 0.0)
    b = improvement_bound(chain2, safe, risky)
    # advantage -2 at s0, TV 1 at s0 only, risky stops within one step: 2 * 2 * 1 * 1
    assert b.lambda_term == -2.0 and b.tv_term == 4.0
    assert b.contains(-2.0)


def test_improvement_bound_random_pairs():
    rng = np.random.default_rng(8)
    for _ in range(20):
        mdp = dense_cmdp(rng, n_states=4, n_actions=3, threshold=1.0)
        pi, pi_prime = random_policy(mdp, rng), random_policy(mdp, rng)
        truth = (evaluate_policy(mdp, pi_prime, mdp.cost) - evaluate_policy(mdp, pi, mdp.cost))[0]
        assert improvement_bound(mdp, pi, pi_prime).contains(truth)


def test_oracle_certificate_accepts_signed_epsilon(chain2, safe, risky):
    eps = lemma1_epsilon(chain2, safe, risky)
    cert = build_certificate(chain2, safe, eps, oracle=True)
    assert cert.oracle and cert.l_values[0] == pytest.approx(0.0)
    with pytest.raises(CertificateError):
        build_certificate(chain2.with_threshold(-0.5), uniform_policy(chain2), np.zeros(2), oracle=True)
