import numpy as np
import pytest

from conftest import RISKY, SAFE, make_chain2
from lyapcmdp.baselines import dual_lp_solve, unconstrained_solve, value_iteration
from lyapcmdp.cmdp import TransientCmdp, deterministic_policy, evaluate_policy
from lyapcmdp.lyapunov import InfeasibleBaselineError, build_certificate, certificate_for
from lyapcmdp.random_instances import dense_cmdp
from lyapcmdp.safe_dp import SafeDpOptions, SolveReport, safe_bellman, safe_fixed_point, spi, svi


def test_safe_bellman_zero(chain2, safe):
    zero = TransientCmdp(2, 2, chain2.dense_transition(), np.zeros((2, 2)), chain2.constraint_cost, 0, 1.0, 2)
    cert = build_certificate(zero, safe, np.zeros(2))
    v, _ = safe_bellman(zero, cert, np.zeros(2))
    assert np.all(v == 0)


def test_safe_bellman_chain(chain2, safe):
    cert = build_certificate(chain2, safe, np.zeros(2))
    v, pi = safe_bellman(chain2, cert, np.zeros(2))
    assert pi[0].tolist() == [0.0, 1.0] and v[0] == 1.0


def test_safe_bellman_singleton_set_is_baseline_backup():
    # only the quiet action keeps L; the exposed action is cheaper but excluded
    P = np.zeros((2, 2, 2))
    P[0, 1, 1] = 1.0
    mdp = TransientCmdp(2, 2, P, [[1.0, 0.0], [0.0, 0.0]], [0.0, 1.0], 0, 0.0, 2)
    quiet = deterministic_policy(mdp, [0, 0])
    cert = build_certificate(mdp, quiet, np.zeros(2))
    v, pi = safe_bellman(mdp, cert, np.zeros(2))
    assert pi[0].tolist() == [1.0, 0.0] and v[0] == 1.0


def test_spi_chain(chain2, safe):
    rep = spi(chain2, safe)
    assert rep.final_policy[0].tolist() == [0.0, 1.0]
    assert rep.objective == 1.0 and rep.feasible and rep.iterations <= 2
    assert len(rep.trace) == rep.iterations and not rep.flags


def test_spi_rejects_infeasible_start():
    mdp = make_chain2(0.5)
    with pytest.raises(InfeasibleBaselineError):
        spi(mdp, deterministic_policy(mdp, [SAFE, SAFE]))
    with pytest.raises(InfeasibleBaselineError):
        svi(mdp, deterministic_policy(mdp, [SAFE, SAFE]))


def test_spi_stays_at_optimum():
    mdp = make_chain2(0.5)
    rep = spi(mdp, deterministic_policy(mdp, [RISKY, SAFE]))
    assert rep.final_policy[0].tolist() == [0.0, 1.0] and rep.objective == 1.0


@pytest.mark.parametrize("q_init", ["baseline", "zero"])
def test_svi_chain(chain2, safe, q_init):
    rep = svi(chain2, safe, SafeDpOptions(q_init=q_init))
    assert rep.final_policy[0].tolist() == [0.0, 1.0] and rep.objective == 1.0 and rep.feasible


def test_svi_hand_trace(chain2, safe):
    rep = svi(chain2, safe, SafeDpOptions(q_init="zero"))
    # Q0 = 0 ties to the safe action; Q1(s0) = [2, 1] picks risky; Q2(s0) = [3, 1] is stable
    assert [row.objective for row in rep.trace] == [3.0, 1.0, 1.0]
    assert rep.extras["q_table"].tolist() == [[3.0, 1.0], [1.0, 1.0]]


def test_svi_vacuous_constraint_is_value_iteration():
    rng = np.random.default_rng(5)
    mdp = dense_cmdp(rng, n_states=6, n_actions=3, threshold=0.0)
    mdp = TransientCmdp(6, 3, mdp.transition, mdp.cost, np.zeros(6), 0, 0.0, mdp.horizon_bound)
    v, pi, _ = value_iteration(mdp, mdp.cost)
    rep = svi(mdp, deterministic_policy(mdp, np.zeros(6, dtype=int)), SafeDpOptions(max_iters=500))
    assert rep.objective == pytest.approx(v[0], abs=1e-7)
    assert rep.feasible


def test_iterates_feasible_and_spi_monotone():
    rng = np.random.default_rng(12)
    for _ in range(25):
        mdp = dense_cmdp(rng, n_states=int(rng.integers(3, 10)), n_actions=4)
        base = unconstrained_solve(mdp, "min_constraint").final_policy
        opt = dual_lp_solve(mdp).objective
        for solver in (spi, svi):
            rep = solver(mdp, base)
            assert all(row.constraint <= mdp.threshold + 1e-8 for row in rep.trace)
            assert rep.feasible and rep.objective >= opt - 1e-7
        objs = [rep.extras["initial_objective"]] + [row.objective for row in spi(mdp, base).trace]
        assert np.all(np.diff(objs) <= 1e-8)


def test_fixed_point_iterates_converge_monotonically():
    rng = np.random.default_rng(13)
    mdp = dense_cmdp(rng, n_states=8, n_actions=3)
    base = unconstrained_solve(mdp, "min_constraint").final_policy
    cert = certificate_for(mdp, base)
    v_star, _, _ = safe_fixed_point(mdp, cert)
    v = np.zeros(mdp.n_states)
    gaps = []
    for _ in range(80):
        v, _ = safe_bellman(mdp, cert, v)
        gaps.append(np.max(np.abs(v - v_star)))
    assert np.all(np.diff(gaps) <= 1e-12)
    assert gaps[-1] <= 1e-3 * gaps[0]


def test_safe_bellman_nonexpansive_short_horizon():
    rng = np.random.default_rng(14)
    mdp = dense_cmdp(rng, n_states=8, n_actions=3)
    cert = certificate_for(mdp, unconstrained_solve(mdp, "min_constraint").final_policy)
    for _ in range(20):
        a, b = rng.normal(size=8), rng.normal(size=8)
        ta, _ = safe_bellman(mdp, cert, a)
        tb, _ = safe_bellman(mdp, cert, b)
        assert np.max(np.abs(ta - tb)) <= np.max(np.abs(a - b)) + 1e-12


def test_entropy_option_runs(chain2, safe):
    rep = spi(chain2, safe, SafeDpOptions(entropy=1e-6))
    assert rep.feasible and rep.objective == pytest.approx(1.0, abs=1e-4)


def test_report_serialization(chain2, safe):
    rep = spi(chain2, safe)
    doc = rep.to_dict()
    assert doc["feasible"] is True and doc["solver"] == "spi"
    assert rep.trace_csv().splitlines()[0] == "iteration,objective,constraint,policy_delta,epsilon"
    assert len(rep.trace_csv().splitlines()) == rep.iterations + 1
    assert isinstance(rep.to_json(), str)
    assert isinstance(rep, SolveReport)


def test_max_iters_flag(chain2, safe):
    rep = spi(chain2, safe, SafeDpOptions(max_iters=1))
    assert "max_iters" in rep.flags and rep.iterations == 1
