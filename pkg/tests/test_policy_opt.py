import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lyapcmdp.linprog import LinearProgram, solve_lp
from lyapcmdp.policy_opt import (
    MultiplierBracketError,
    PolicySubproblem,
    constraint_violation,
    multiplier_polynomial,
    solve_multiplier_root,
    solve_policy_entropy,
    solve_policy_lp,
)

CHAIN_SP = PolicySubproblem([3.0, 1.0], [1.0, 0.0], [1.0, 0.0], 0.0)


def lp_reference(sp):
    A = sp.q_row.size
    lp = LinearProgram(sp.q_row, a_eq=np.ones((1, A)), b_eq=[1.0], a_ub=sp.ql_row[None], b_ub=[sp.bound])
    return solve_lp(lp).objective_value


def test_chain_subproblem_picks_risky():
    pi = solve_policy_lp(CHAIN_SP)
    assert pi.tolist() == [0.0, 1.0]
    assert pi @ CHAIN_SP.q_row == 1.0


def test_huge_budget_is_unconstrained_argmin():
    sp = PolicySubproblem([2.0, 0.5, 1.0], [0.0, 9.0, 0.0], [1.0, 0.0, 0.0], 1e9)
    assert solve_policy_lp(sp).tolist() == [0.0, 1.0, 0.0]


def test_flat_objective_takes_lowest_feasible_vertex():
    sp = PolicySubproblem([4.0, 4.0, 4.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0], 0.0)
    pi = solve_policy_lp(sp)
    assert pi.tolist() == [1.0, 0.0, 0.0] and pi @ sp.q_row == 4.0


def test_only_baseline_feasible_returns_baseline():
    # every action is at least as exposed as the baseline mix, which sits exactly on the bound
    sp = PolicySubproblem([0.0, 5.0], [1.0, 1.0], [0.3, 0.7], 0.0)
    pi = solve_policy_lp(sp)
    assert pi @ sp.ql_row <= sp.bound + 1e-9
    sp = PolicySubproblem([0.0, 0.0, 5.0], [2.0, 2.0, 0.0], [0.0, 0.0, 1.0], 0.0)
    assert solve_policy_lp(sp).tolist() == [0.0, 0.0, 1.0]


def test_mixed_vertex_on_constraint_boundary():
    sp = PolicySubproblem([0.0, 1.0], [2.0, 0.0], [0.0, 1.0], 1.0)
    pi = solve_policy_lp(sp)
    assert pi == pytest.approx([0.5, 0.5]) and sp.slack(pi) == pytest.approx(0.0, abs=1e-12)


def test_subproblem_validation():
    with pytest.raises(ValueError):
        PolicySubproblem([1.0], [1.0], [0.5], 0.0)
    with pytest.raises(ValueError):
        PolicySubproblem([1.0, 2.0], [1.0, 0.0], [1.0, 0.0], -1.0)
    with pytest.raises(ValueError):
        PolicySubproblem([1.0, 2.0], [1.0], [1.0, 0.0], 0.0)


def random_subproblem(rng, n_actions=None):
    A = int(rng.integers(2, 6)) if n_actions is None else n_actions
    base = rng.dirichlet(np.ones(A))
    return PolicySubproblem(rng.normal(size=A), rng.normal(size=A), base, float(rng.exponential(0.3)))


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 1_000_000))
def test_lp_matches_simplex_reference(seed):
    sp = random_subproblem(np.random.default_rng(seed))
    pi = solve_policy_lp(sp)
    assert np.all(pi >= 0) and pi.sum() == pytest.approx(1.0, abs=1e-12)
    assert sp.slack(pi) >= -1e-9
    assert pi @ sp.q_row <= sp.baseline_row @ sp.q_row + 1e-12
    assert pi @ sp.q_row == pytest.approx(lp_reference(sp), abs=1e-9)


def test_entropy_inactive_is_softmax():
    sp = PolicySubproblem([1.0, 2.0, 0.5], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], 1e9)
    tau = 0.7
    expect = np.exp(-sp.q_row / tau)
    assert solve_multiplier_root(sp, tau) == 0.0
    assert solve_policy_entropy(sp, tau) == pytest.approx(expect / expect.sum(), abs=1e-12)


def test_entropy_large_tau_is_uniform():
    sp = PolicySubproblem([1.0, -2.0, 0.5], [0.3, 0.0, 0.1], [0.0, 1.0, 0.0], 1.0)
    tau = 1e6 * np.max(np.abs(sp.q_row))
    assert np.max(np.abs(solve_policy_entropy(sp, tau) - 1 / 3)) <= 1e-6


def test_entropy_small_tau_near_lp_on_chain():
    pi = solve_policy_entropy(CHAIN_SP, 1e-4)
    assert np.abs(pi - solve_policy_lp(CHAIN_SP)).sum() <= 1e-3


def test_multiplier_makes_constraint_tight():
    sp = PolicySubproblem([0.0, 1.0], [1.0, 0.0], [0.0, 1.0], 0.3)
    lam = solve_multiplier_root(sp, 1.0)
    assert lam > 0
    assert constraint_violation(sp, lam, 1.0) == pytest.approx(0.0, abs=1e-8)
    grid = np.linspace(0, 10, 100001)
    scan = np.array([constraint_violation(sp, g, 1.0) for g in grid[::100]])
    assert grid[::100][np.argmax(scan <= 0)] == pytest.approx(lam, abs=0.02)
    assert multiplier_polynomial(sp, 1.0, np.exp(-lam)) == pytest.approx(0.0, abs=1e-7)


def test_constant_constraint_row_gives_zero_multiplier():
    sp = PolicySubproblem([0.0, 1.0, 2.0], [1.5, 1.5, 1.5], [0.2, 0.3, 0.5], 0.0)
    assert solve_multiplier_root(sp, 0.5) == 0.0


def test_bracket_failure_reported():
    sp = PolicySubproblem([0.0, 1.0], [1.0, 0.0], [0.0, 1.0], 0.0)
    with pytest.raises(MultiplierBracketError):
        solve_multiplier_root(sp, 1.0, lam_max=1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 1_000_000), st.sampled_from([1.0, 0.1, 0.01]))
def test_entropy_kkt_residual(seed, tau):
    sp = random_subproblem(np.random.default_rng(seed))
    lam = solve_multiplier_root(sp, tau)
    pi = solve_policy_entropy(sp, tau)
    assert np.all(pi >= 0) and pi.sum() == pytest.approx(1.0, abs=1e-12)
    viol = constraint_violation(sp, lam, tau)
    if lam > 0:
        assert abs(viol) <= 1e-7
    else:
        assert viol <= 1e-7
