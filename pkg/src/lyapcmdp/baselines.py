"""Comparison solvers: unconstrained DP, Lagrangian primal-dual, the occupation
measure LP, and the step-wise and super-martingale surrogates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cmdp import PolicySystem, TransientCmdp, check_policy, deterministic_policy, uniform_policy
from .linprog import LinearProgram, solve_lp
from .policy_opt import min_over_cut_simplex
from .safe_dp import FEASIBLE_TOL, SolveReport, TraceRow, make_report

VI_TOL = 1e-10
VI_MAX_ITER = 1_000_000
ARGMIN_TOL = 1e-12
MEMBERSHIP_TOL = 1e-8
ZERO_VISIT_TOL = 1e-12


class DivergenceError(RuntimeError):
    """Value iteration failed to settle (every admissible policy looks improper)."""


def first_argmin(q: np.ndarray) -> np.ndarray:
    """Row-wise argmin with near-ties resolved to the lowest action index."""
    best = np.min(q, axis=1, keepdims=True)
    near = q <= best + ARGMIN_TOL * np.maximum(1.0, np.abs(best))
    return np.argmax(near, axis=1)


def value_iteration(mdp: TransientCmdp, cost_sa: np.ndarray, mask: np.ndarray | None = None,
                    tol: float = VI_TOL, max_iter: int = VI_MAX_ITER, v0=None):
    """Deterministic-policy value iteration on a state-action cost, optionally over a subset of actions.

    Returns ``(values, policy, sweeps)``; raises ``DivergenceError`` at the sweep cap.
    """
    v = np.zeros(mdp.n_states) if v0 is None else np.array(v0, dtype=float)
    for it in range(1, max_iter + 1):
        q = cost_sa + mdp.backup(v)
        if mask is not None:
            q = np.where(mask, q, np.inf)
        new = np.min(q, axis=1)
        if np.max(np.abs(new - v), initial=0.0) < tol:
            return new, deterministic_policy(mdp, first_argmin(q)), it
        v = new
    raise DivergenceError(f"value iteration did not settle in {max_iter} sweeps")


def unconstrained_solve(mdp: TransientCmdp, which: str = "min_cost") -> SolveReport:
    """Optimal deterministic policy for ``c`` alone or for ``d`` alone.

    ``min_constraint`` is lexicographic: among the actions that minimize the
    constraint value it then minimizes ``c``, which keeps the baseline away
    from zero-cost loops that never terminate.
    """
    if which == "min_cost":
        _, pi, sweeps = value_iteration(mdp, mdp.cost)
    elif which == "min_constraint":
        d_sa = np.broadcast_to(mdp.constraint_cost[:, None], mdp.shape)
        # Iterate down from the constraint values of the cost-optimal policy.
        # From below, loops that stay clear of costly states for a long time
        # make the iterates creep up extremely slowly.
        _, pi_c, sweeps_c = value_iteration(mdp, mdp.cost)
        upper = PolicySystem(mdp, pi_c).values(mdp.constraint_cost)
        v_d, _, sweeps_d = value_iteration(mdp, d_sa, v0=upper)
        sweeps_d += sweeps_c
        q_d = d_sa + mdp.backup(v_d)
        best = np.min(q_d, axis=1, keepdims=True)
        mask = q_d <= best + MEMBERSHIP_TOL * np.maximum(1.0, np.abs(best))
        _, pi, sweeps = value_iteration(mdp, mdp.cost, mask)
        sweeps += sweeps_d
    else:
        raise ValueError(f"which must be 'min_cost' or 'min_constraint', got {which!r}")
    return make_report(mdp, which, pi, sweeps)


def lambda_bellman(mdp: TransientCmdp, lam: float, v):
    """One sweep of the Bellman operator on ``c + lam * d``."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    q = mdp.cost + lam * mdp.constraint_cost[:, None] + mdp.backup(np.asarray(v, dtype=float))
    return np.min(q, axis=1), deterministic_policy(mdp, first_argmin(q))


@dataclass
class LagrangianOptions:
    lambda_init: float = 0.0
    step0: float = 1.0  # eta_k = step0 / sqrt(k)
    max_outer_iters: int = 200
    inner_tol: float = 1e-8
    lambda_tol: float = 1e-6

    def __post_init__(self):
        if self.lambda_init < 0:
            raise ValueError("lambda_init must be nonnegative")
        if self.step0 <= 0:
            raise ValueError("step0 must be positive")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be at least 1")

    def step(self, k: int) -> float:
        return self.step0 / np.sqrt(k)


def lagrangian_solve(mdp: TransientCmdp, opts: LagrangianOptions | None = None) -> SolveReport:
    """Projected subgradient on the multiplier with an exact inner DP.

    Iterates are not feasible in general; the trace records each one. When the
    multiplier stops moving the last policy is returned, otherwise the best
    feasible iterate seen (flagged ``not_converged``).
    """
    opts = opts or LagrangianOptions()
    x0 = mdp.initial_state
    lam = float(opts.lambda_init)
    v = None
    trace, lambdas = [], []
    best = None  # (objective, policy)
    pi_prev = None
    stabilized = False
    for k in range(1, opts.max_outer_iters + 1):
        cost = mdp.cost + lam * mdp.constraint_cost[:, None]
        v, pi, _ = value_iteration(mdp, cost, tol=opts.inner_tol, v0=v)
        system = PolicySystem(mdp, pi)
        c_val = float(system.values(mdp.cost)[x0])
        d_val = float(system.values(mdp.constraint_cost)[x0])
        delta = 1.0 if pi_prev is None else float(np.max(np.abs(pi - pi_prev)))
        trace.append(TraceRow(k, c_val, d_val, delta, lam))
        lambdas.append(lam)
        if d_val <= mdp.threshold + FEASIBLE_TOL and (best is None or c_val < best[0]):
            best = (c_val, pi)
        new_lam = max(0.0, lam + opts.step(k) * (d_val - mdp.threshold))
        pi_prev = pi
        moved = abs(new_lam - lam)
        lam = new_lam
        if moved < opts.lambda_tol:
            stabilized = True
            break
    extras = {"lambda_trace": lambdas, "lambda": lam,
              "violations": sum(row.constraint > mdp.threshold + FEASIBLE_TOL for row in trace)}
    if stabilized:
        return make_report(mdp, "lagrangian", pi_prev, len(trace), trace, (), extras)
    flags = ["not_converged"]
    if best is None:
        flags.append("no_feasible_iterate")
        return make_report(mdp, "lagrangian", pi_prev, len(trace), trace, flags, extras)
    return make_report(mdp, "lagrangian", best[1], len(trace), trace, flags, extras)


def infeasible_report(mdp: TransientCmdp, solver: str, flags, extras=None) -> SolveReport:
    return SolveReport(solver, uniform_policy(mdp), float("nan"), float("nan"), float(mdp.threshold),
                       0, (), tuple(flags), dict(extras or {}))


def occupation_lp(mdp: TransientCmdp) -> LinearProgram:
    """Occupation-measure LP over ``rho(x, a)``, variable index ``x * A + a``."""
    S, A = mdp.shape
    P = mdp.transition  # (S*A, S)
    out_flow = sp.kron(sp.identity(S, format="csr"), np.ones((1, A)), format="csr")  # (S, S*A)
    a_eq = (out_flow - P.T).toarray()
    b_eq = np.zeros(S)
    b_eq[mdp.initial_state] = 1.0
    d_row = np.repeat(mdp.constraint_cost, A)[None]
    return LinearProgram(mdp.cost.ravel(), a_eq=a_eq, b_eq=b_eq, a_ub=d_row, b_ub=[mdp.threshold])


def dual_lp_solve(mdp: TransientCmdp) -> SolveReport:
    """Exact CMDP optimum from the occupation-measure LP, solved with the package simplex."""
    sol = solve_lp(occupation_lp(mdp))
    if not sol.optimal:
        return infeasible_report(mdp, "dual_lp", [sol.status], {"lp_iterations": sol.iterations})
    S, A = mdp.shape
    rho = np.maximum(sol.point.reshape(S, A), 0.0)
    mass = rho.sum(axis=1)
    visited = mass > ZERO_VISIT_TOL
    pi = np.full((S, A), 1.0 / A)
    pi[visited] = rho[visited] / mass[visited, None]
    extras = {"lp_objective": sol.objective_value, "lp_iterations": sol.iterations, "occupation": rho}
    return make_report(mdp, "dual_lp", pi, sol.iterations, (), (), extras)


def _surrogate_fallback(mdp, solver, flags, fallback_policy, extras):
    """A surrogate that admits no policy hands back the fallback (typically the initial baseline)."""
    if fallback_policy is None:
        return infeasible_report(mdp, solver, flags, extras)
    extras = dict(extras, fallback=True)
    return make_report(mdp, solver, check_policy(mdp, fallback_policy), 0, (), flags, extras)


def stepwise_solve(mdp: TransientCmdp, fallback_policy=None, tol: float = VI_TOL,
                   max_iter: int = VI_MAX_ITER) -> SolveReport:
    """Value iteration restricted to policies whose expected next-state ``d`` is at most ``d0 / T_bar``.

    States where no action meets the per-step budget use the least-exposed
    action; if the final policy visits such a state the surrogate is declared
    infeasible.
    """
    budget = mdp.threshold / mdp.horizon_bound
    row = mdp.backup(mdp.constraint_cost)
    bad = np.min(row, axis=1) > budget + MEMBERSHIP_TOL
    # on bad states the cut is replaced by a pin onto the least-exposed action
    least = deterministic_policy(mdp, first_argmin(row))
    bound = np.where(bad, np.min(row, axis=1) - 1.0, budget)
    v = np.zeros(mdp.n_states)
    for it in range(1, max_iter + 1):
        q = mdp.cost + mdp.backup(v)
        pi, value, _ = min_over_cut_simplex(q, row, bound, fallback=least)
        if np.max(np.abs(value - v), initial=0.0) < tol:
            break
        v = value
    else:
        return _surrogate_fallback(mdp, "stepwise", ["not_converged"], fallback_policy, {})
    visits = PolicySystem(mdp, pi).visits()
    extras = {"per_step_budget": budget, "blocked_states": int(bad.sum())}
    if np.any(bad & (visits > ZERO_VISIT_TOL)):
        return _surrogate_fallback(mdp, "stepwise", ["surrogate_infeasible"], fallback_policy, extras)
    return make_report(mdp, "stepwise", pi, it, (), (), extras)


def supermartingale_values(mdp: TransientCmdp, policy=None, tol: float = VI_TOL, max_iter: int = VI_MAX_ITER):
    """Fixed point of ``V(x) = min_a max{d0, d(x) + sum_x' P V}`` and its action values.

    The iteration starts at ``d0 + D_policy`` (cost-optimal policy by default),
    which the operator maps below itself, so the iterates decrease.
    """
    d0 = mdp.threshold
    d_sa = mdp.constraint_cost[:, None]
    if policy is None:
        _, policy, _ = value_iteration(mdp, mdp.cost)
    v = d0 + PolicySystem(mdp, check_policy(mdp, policy)).values(mdp.constraint_cost)
    for _ in range(max_iter):
        q = np.maximum(d0, d_sa + mdp.backup(v))
        new = np.min(q, axis=1)
        if np.max(np.abs(new - v), initial=0.0) < tol:
            return new, np.maximum(d0, d_sa + mdp.backup(new))
        v = new
    raise DivergenceError("super-martingale value iteration did not settle")


def supermartingale_solve(mdp: TransientCmdp, fallback_policy=None) -> SolveReport:
    """Two-step scheme: admissible actions keep the clipped constraint value at its minimum,
    then ``c`` is minimized over them."""
    try:
        ds, q_ds = supermartingale_values(mdp, fallback_policy)
    except DivergenceError:
        return _surrogate_fallback(mdp, "supermartingale", ["not_converged"], fallback_policy, {})
    x0 = mdp.initial_state
    extras = {"ds_x0": float(ds[x0])}
    if ds[x0] > mdp.threshold + MEMBERSHIP_TOL:
        return _surrogate_fallback(mdp, "supermartingale", ["surrogate_infeasible"], fallback_policy, extras)
    mask = q_ds <= ds[:, None] + MEMBERSHIP_TOL
    try:
        _, pi, sweeps = value_iteration(mdp, mdp.cost, mask)
    except DivergenceError:
        return _surrogate_fallback(mdp, "supermartingale", ["not_converged"], fallback_policy, extras)
    return make_report(mdp, "supermartingale", pi, sweeps, (), (), extras)
