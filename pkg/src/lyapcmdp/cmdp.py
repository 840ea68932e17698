"""Transient constrained MDPs: data model, Bellman operators and exact evaluation.

States are the transient states only. The terminal state is implicit: any
probability mass missing from a transition row flows to it, and its value is
zero for every cost channel.

Transitions are kept as a CSR matrix of shape ``(n_states * n_actions,
n_states)``; row ``x * n_actions + a`` holds ``P(. | x, a)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

ROW_SUM_TOL = 1e-12
POLICY_SUM_TOL = 1e-9
RESIDUAL_TOL = 1e-8


class TransienceError(RuntimeError):
    """Raised when ``I - P_pi`` is singular for the policy being evaluated."""


@dataclass(frozen=True, eq=False)
class TransientCmdp:
    n_states: int
    n_actions: int
    transition: Any
    cost: np.ndarray
    constraint_cost: np.ndarray
    initial_state: int
    threshold: float
    horizon_bound: int
    name: str = field(default="", compare=False)

    def __post_init__(self):
        S, A = int(self.n_states), int(self.n_actions)
        if S < 1 or A < 1:
            raise ValueError("need at least one state and one action")
        P = self.transition
        if sp.issparse(P):
            P = sp.csr_matrix(P, dtype=float)
            if P.shape != (S * A, S):
                raise ValueError(f"transition shape {P.shape} != {(S * A, S)}")
        else:
            P = np.asarray(P, dtype=float)
            if P.shape == (S, A, S):
                P = P.reshape(S * A, S)
            if P.shape != (S * A, S):
                raise ValueError(f"transition shape {P.shape} incompatible with ({S}, {A}, {S})")
            P = sp.csr_matrix(P)
        P.sort_indices()
        cost = np.array(self.cost, dtype=float)
        if cost.shape != (S, A):
            raise ValueError(f"cost shape {cost.shape} != {(S, A)}")
        d = np.array(self.constraint_cost, dtype=float)
        if d.shape != (S,):
            raise ValueError(f"constraint_cost shape {d.shape} != {(S,)}")
        if not 0 <= int(self.initial_state) < S:
            raise ValueError(f"initial_state {self.initial_state} out of range")
        if int(self.horizon_bound) < 1:
            raise ValueError("horizon_bound must be a positive integer")
        cost.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "n_states", S)
        object.__setattr__(self, "n_actions", A)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "constraint_cost", d)
        object.__setattr__(self, "initial_state", int(self.initial_state))
        object.__setattr__(self, "threshold", float(self.threshold))
        object.__setattr__(self, "horizon_bound", int(self.horizon_bound))

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_states, self.n_actions

    def dense_transition(self) -> np.ndarray:
        """``P[x, a, x']`` as a dense array. Only sensible for small instances."""
        return self.transition.toarray().reshape(self.n_states, self.n_actions, self.n_states)

    @cached_property
    def _state_sum(self) -> sp.csr_matrix:
        # G[x, x*A + a] = 1, aggregates state-action rows into state rows.
        S, A = self.shape
        rows = np.repeat(np.arange(S), A)
        return sp.csr_matrix((np.ones(S * A), (rows, np.arange(S * A))), shape=(S, S * A))

    @cached_property
    def terminal_mass(self) -> np.ndarray:
        """Probability of moving to the terminal state, shape (S, A)."""
        sums = np.asarray(self.transition.sum(axis=1)).ravel()
        return np.clip(1.0 - sums, 0.0, None).reshape(self.shape)

    def backup(self, v: np.ndarray) -> np.ndarray:
        """``sum_x' P(x'|x,a) v(x')`` for every (x, a), shape (S, A)."""
        v = np.asarray(v, dtype=float)
        return (self.transition @ v).reshape(self.shape)

    def policy_matrix(self, policy: np.ndarray) -> sp.csr_matrix:
        """Transient-to-transient transition matrix ``P_pi``."""
        w = sp.diags(np.asarray(policy, dtype=float).ravel())
        return (self._state_sum @ w @ self.transition).tocsr()

    def with_threshold(self, threshold: float) -> "TransientCmdp":
        return TransientCmdp(self.n_states, self.n_actions, self.transition, self.cost,
                             self.constraint_cost, self.initial_state, threshold,
                             self.horizon_bound, self.name)

    # serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.dense_transition().tolist(),
            "cost": self.cost.tolist(),
            "constraint_cost": self.constraint_cost.tolist(),
            "initial_state": self.initial_state,
            "threshold": self.threshold,
            "horizon_bound": self.horizon_bound,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TransientCmdp":
        return cls(
            n_states=data["n_states"],
            n_actions=data["n_actions"],
            transition=np.array(data["transition"], dtype=float),
            cost=data["cost"],
            constraint_cost=data["constraint_cost"],
            initial_state=data["initial_state"],
            threshold=data["threshold"],
            horizon_bound=data["horizon_bound"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "TransientCmdp":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TransientCmdp":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


# policies -------------------------------------------------------------------

def check_policy(mdp: TransientCmdp, policy) -> np.ndarray:
    """Validate a stochastic policy table ``pi[x, a]`` and return it as floats."""
    pi = np.asarray(policy, dtype=float)
    if pi.shape != mdp.shape:
        raise ValueError(f"policy shape {pi.shape} != {mdp.shape}")
    if not np.all(np.isfinite(pi)) or np.any(pi < 0):
        raise ValueError("policy has negative or non-finite entries")
    if np.max(np.abs(pi.sum(axis=1) - 1.0)) > POLICY_SUM_TOL:
        raise ValueError("policy rows must sum to 1")
    return pi


def deterministic_policy(mdp: TransientCmdp, actions) -> np.ndarray:
    actions = np.broadcast_to(np.asarray(actions, dtype=int), (mdp.n_states,))
    pi = np.zeros(mdp.shape)
    pi[np.arange(mdp.n_states), actions] = 1.0
    return pi


def uniform_policy(mdp: TransientCmdp) -> np.ndarray:
    return np.full(mdp.shape, 1.0 / mdp.n_actions)


def state_action_cost(mdp: TransientCmdp, step_cost) -> np.ndarray:
    """Broadcast a per-state vector (e.g. ``d``) or scalar to an (S, A) table."""
    h = np.asarray(step_cost, dtype=float)
    if h.ndim == 0:
        return np.full(mdp.shape, float(h))
    if h.shape == (mdp.n_states,):
        return np.repeat(h[:, None], mdp.n_actions, axis=1)
    if h.shape != mdp.shape:
        raise ValueError(f"step cost shape {h.shape} incompatible with {mdp.shape}")
    return h


# evaluation -----------------------------------------------------------------

def bellman_apply(mdp: TransientCmdp, policy, step_cost, v) -> np.ndarray:
    """One application of ``T_{pi,h}``; the terminal state contributes zero."""
    pi = check_policy(mdp, policy)
    h = state_action_cost(mdp, step_cost)
    v = np.asarray(v, dtype=float)
    if v.shape != (mdp.n_states,):
        raise ValueError(f"value shape {v.shape} != {(mdp.n_states,)}")
    return np.sum(pi * (h + mdp.backup(v)), axis=1)


class PolicySystem:
    """LU factorization of ``I - P_pi``, shared by every solve for one policy."""

    def __init__(self, mdp: TransientCmdp, policy):
        self.mdp = mdp
        self.policy = check_policy(mdp, policy)
        S = mdp.n_states
        self.matrix = (sp.identity(S, format="csc") - mdp.policy_matrix(self.policy).tocsc()).tocsc()
        try:
            self._lu = splu(self.matrix)
        except RuntimeError as exc:
            raise TransienceError(f"I - P_pi is singular for policy {_describe(self.policy)}") from exc

    def _checked(self, sol: np.ndarray, rhs: np.ndarray, transpose: bool) -> np.ndarray:
        m = self.matrix.T if transpose else self.matrix
        scale = 1.0 + np.max(np.abs(rhs)) + np.max(np.abs(sol), initial=0.0)
        if not np.all(np.isfinite(sol)) or np.max(np.abs(m @ sol - rhs), initial=0.0) > RESIDUAL_TOL * scale:
            raise TransienceError(f"I - P_pi is numerically singular for policy {_describe(self.policy)}")
        return sol

    def values(self, step_cost) -> np.ndarray:
        """Fixed point of ``T_{pi,h}``."""
        h = state_action_cost(self.mdp, step_cost)
        rhs = np.sum(self.policy * h, axis=1)
        return self._checked(self._lu.solve(rhs), rhs, transpose=False)

    def visits(self, start: int | None = None) -> np.ndarray:
        """Expected visit counts ``1(x0)^T (I - P_pi)^{-1}``."""
        x0 = self.mdp.initial_state if start is None else start
        rhs = np.zeros(self.mdp.n_states)
        rhs[x0] = 1.0
        return self._checked(self._lu.solve(rhs, trans="T"), rhs, transpose=True)


def _describe(pi: np.ndarray) -> str:
    if np.all((pi == 0) | (pi == 1)):
        return "deterministic " + np.array2string(pi.argmax(axis=1), threshold=20)
    return f"stochastic (shape {pi.shape})"


def evaluate_policy(mdp: TransientCmdp, policy, step_cost) -> np.ndarray:
    """Exact value of ``policy`` for per-step cost ``step_cost`` (direct solve)."""
    return PolicySystem(mdp, policy).values(step_cost)


def expected_stopping_time(mdp: TransientCmdp, policy) -> np.ndarray:
    return PolicySystem(mdp, policy).values(1.0)


def occupation_measure(mdp: TransientCmdp, policy) -> np.ndarray:
    """State-action occupation measure ``rho(x, a)`` from the initial state."""
    system = PolicySystem(mdp, policy)
    return system.visits()[:, None] * system.policy


def flow_residual(mdp: TransientCmdp, rho) -> float:
    """Sup-norm violation of the occupation-measure flow constraints."""
    rho = np.asarray(rho, dtype=float)
    inflow = mdp.transition.T @ rho.ravel()
    rhs = np.zeros(mdp.n_states)
    rhs[mdp.initial_state] = 1.0
    return float(np.max(np.abs(rho.sum(axis=1) - inflow - rhs)))


# simulation -----------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    states: list[int]
    actions: list[int]
    costs: list[float]
    constraint_costs: list[float]
    truncated: bool

    @property
    def total_cost(self) -> float:
        return float(sum(self.costs))

    @property
    def total_constraint_cost(self) -> float:
        return float(sum(self.constraint_costs))


def simulate_rollout(mdp: TransientCmdp, policy, seed=None, max_steps: int = 10_000) -> Trajectory:
    """Sample one episode; stops at terminal absorption or after ``max_steps``."""
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    pi = check_policy(mdp, policy)
    rng = np.random.default_rng(seed)
    P = mdp.transition
    A = mdp.n_actions
    x = mdp.initial_state
    states, actions, costs, dcosts = [], [], [], []
    for _ in range(max_steps):
        a = int(rng.choice(A, p=pi[x] / pi[x].sum()))
        states.append(x)
        actions.append(a)
        costs.append(float(mdp.cost[x, a]))
        dcosts.append(float(mdp.constraint_cost[x]))
        row = x * A + a
        lo, hi = P.indptr[row], P.indptr[row + 1]
        k = int(np.searchsorted(np.cumsum(P.data[lo:hi]), rng.random(), side="right"))
        if k >= hi - lo:
            return Trajectory(states, actions, costs, dcosts, truncated=False)
        x = int(P.indices[lo + k])
    return Trajectory(states, actions, costs, dcosts, truncated=True)


# diagnostics ----------------------------------------------------------------

@dataclass(frozen=True)
class Diagnostics:
    row_sum_violations: list[tuple[int, int]]
    negative_entries: int
    survival_after_horizon: float
    transient: bool
    threshold_nonnegative: bool
    finite_costs: bool

    @property
    def ok(self) -> bool:
        return (not self.row_sum_violations and self.negative_entries == 0 and self.transient
                and self.threshold_nonnegative and self.finite_costs)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "row_sum_violations": [list(v) for v in self.row_sum_violations],
            "negative_entries": self.negative_entries,
            "survival_after_horizon": self.survival_after_horizon,
            "transient": self.transient,
            "threshold_nonnegative": self.threshold_nonnegative,
            "finite_costs": self.finite_costs,
        }


def validate(mdp: TransientCmdp) -> Diagnostics:
    """Structural checks; never raises."""
    P = mdp.transition
    negative = int(np.sum(P.data < 0))
    sums = np.asarray(P.sum(axis=1)).ravel()
    A = mdp.n_actions
    row_min = np.asarray(P.min(axis=1).todense()).ravel()
    bad_rows = np.flatnonzero((sums > 1.0 + ROW_SUM_TOL) | ~np.isfinite(sums) | (row_min < 0))
    violations = [(int(r // A), int(r % A)) for r in bad_rows]
    # probability of still being transient after T-bar steps, uniform policy
    P_unif = mdp.policy_matrix(uniform_policy(mdp))
    alive = np.ones(mdp.n_states)
    for _ in range(mdp.horizon_bound):
        alive = P_unif @ alive
    survival = float(np.max(alive)) if alive.size else 0.0
    return Diagnostics(
        row_sum_violations=violations,
        negative_entries=negative,
        survival_after_horizon=survival,
        transient=bool(survival < 1.0 - 1e-12),
        threshold_nonnegative=bool(mdp.threshold >= 0),
        finite_costs=bool(np.all(np.isfinite(mdp.cost)) and np.all(np.isfinite(mdp.constraint_cost))),
    )
