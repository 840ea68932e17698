"""Lyapunov certificates built from a feasible baseline policy.

A certificate adds an auxiliary per-state cost ``eps`` to the constraint cost
and evaluates the baseline on ``d + eps``:

    L(x)      = E[ sum_t d(x_t) + eps(x_t) | baseline, x ]
    Q_L(x, a) = d(x) + eps(x) + sum_x' P(x'|x,a) L(x')

Any policy whose one-step ``d``-backup of ``L`` does not exceed ``L`` at every
state satisfies the trajectory constraint whenever ``L(x0) <= d0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .cmdp import PolicySystem, TransientCmdp, bellman_apply, check_policy, evaluate_policy
from .linprog import LinearProgram, solve_lp

CERT_TOL = 1e-9
ZERO_VISIT_TOL = 1e-12
FEASIBILITY_TOL = 1e-9


class InfeasibleBaselineError(ValueError):
    def __init__(self, constraint_value: float, threshold: float):
        super().__init__(f"baseline violates the constraint: D(x0)={constraint_value:.10g} > d0={threshold:.10g}")
        self.constraint_value = constraint_value
        self.threshold = threshold


class CertificateError(ValueError):
    """A certificate invariant does not hold."""


@dataclass(frozen=True, eq=False)
class LyapunovCertificate:
    epsilon: np.ndarray
    l_values: np.ndarray
    ql: np.ndarray
    baseline: np.ndarray
    mdp: TransientCmdp = field(repr=False)
    oracle: bool = False

    @property
    def budget(self) -> np.ndarray:
        return self.epsilon

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon.tolist(),
            "l_values": self.l_values.tolist(),
            "ql": self.ql.tolist(),
            "baseline": self.baseline.tolist(),
            "oracle": self.oracle,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict, mdp: TransientCmdp) -> "LyapunovCertificate":
        return cls(np.array(data["epsilon"], float), np.array(data["l_values"], float),
                   np.array(data["ql"], float), np.array(data["baseline"], float), mdp,
                   bool(data.get("oracle", False)))


def _slack(mdp: TransientCmdp, system: PolicySystem) -> float:
    d_b = system.values(mdp.constraint_cost)[mdp.initial_state]
    slack = mdp.threshold - d_b
    if slack < -FEASIBILITY_TOL:
        raise InfeasibleBaselineError(d_b, mdp.threshold)
    return max(slack, 0.0)


def auxiliary_cost_constant(mdp: TransientCmdp, baseline, use_horizon_bound: bool = False) -> np.ndarray:
    """Largest constant auxiliary cost: slack spread over the expected stopping time."""
    system = PolicySystem(mdp, baseline)
    slack = _slack(mdp, system)
    if use_horizon_bound:
        denom = float(mdp.horizon_bound)
    else:
        denom = system.values(1.0)[mdp.initial_state]
    return np.full(mdp.n_states, slack / denom)


def auxiliary_cost_indicator(mdp: TransientCmdp, baseline) -> np.ndarray:
    """All slack on the least-visited reachable state (ties: lowest index)."""
    system = PolicySystem(mdp, baseline)
    slack = _slack(mdp, system)
    visits = system.visits()
    eps = np.zeros(mdp.n_states)
    reachable = visits > ZERO_VISIT_TOL
    masked = np.where(reachable, visits, np.inf)
    x_min = int(np.argmin(masked))
    eps[x_min] = slack / visits[x_min]
    return eps


def auxiliary_cost_lp(mdp: TransientCmdp, baseline) -> np.ndarray:
    """Maximize ``sum eps`` subject to the visit-weighted budget, by simplex.

    Unreachable states would make the LP unbounded; their variables are capped
    at ``T_bar * max(d)``.
    """
    system = PolicySystem(mdp, baseline)
    slack = _slack(mdp, system)
    visits = system.visits()
    zero = visits <= ZERO_VISIT_TOL
    weights = np.where(zero, 0.0, visits)
    cap = mdp.horizon_bound * float(np.max(mdp.constraint_cost, initial=0.0))
    bounds = np.column_stack([np.zeros(mdp.n_states), np.where(zero, cap, np.inf)])
    lp = LinearProgram(-np.ones(mdp.n_states), a_ub=weights[None], b_ub=[slack], bounds=bounds)
    sol = solve_lp(lp)
    if not sol.optimal:
        raise RuntimeError(f"auxiliary-cost LP returned status {sol.status}")
    return np.maximum(sol.point, 0.0)


AUX_COSTS = {
    "constant": auxiliary_cost_constant,
    "indicator": auxiliary_cost_indicator,
    "lp": auxiliary_cost_lp,
}


def auxiliary_cost(mdp: TransientCmdp, baseline, form: str = "constant") -> np.ndarray:
    try:
        fn = AUX_COSTS[form]
    except KeyError:
        raise ValueError(f"unknown auxiliary cost form {form!r}; choose from {sorted(AUX_COSTS)}") from None
    return fn(mdp, baseline)


def build_certificate(mdp: TransientCmdp, baseline, epsilon, oracle: bool = False) -> LyapunovCertificate:
    """Evaluate ``L`` and ``Q_L`` for ``eps`` and check the certificate invariants.

    With ``oracle=True`` a signed ``eps`` is accepted and only ``L(x0) <= d0``
    is enforced; this is how exact constructions that know the optimal policy
    are checked.
    """
    pi_b = check_policy(mdp, baseline)
    eps = np.asarray(epsilon, dtype=float)
    if eps.shape != (mdp.n_states,):
        raise ValueError(f"epsilon shape {eps.shape} != {(mdp.n_states,)}")
    if not oracle and np.any(eps < 0):
        raise CertificateError("auxiliary cost must be nonnegative")
    system = PolicySystem(mdp, pi_b)
    d = mdp.constraint_cost
    L = system.values(d + eps)
    ql = (d + eps)[:, None] + mdp.backup(L)
    x0 = mdp.initial_state
    if L[x0] > mdp.threshold + CERT_TOL:
        raise CertificateError(f"L(x0)={L[x0]:.10g} exceeds d0={mdp.threshold:.10g}")
    if not oracle:
        backed = bellman_apply(mdp, pi_b, d, L)
        worst = np.max(backed - L)
        if worst > CERT_TOL:
            raise CertificateError(f"baseline backup exceeds L by {worst:.3e} at state {int(np.argmax(backed - L))}")
        d_b = system.values(d)
        if np.min(L - d_b) < -CERT_TOL:
            raise CertificateError("L is not an upper bound on the baseline constraint value")
    return LyapunovCertificate(eps, L, ql, pi_b, mdp, oracle)


def certificate_for(mdp: TransientCmdp, baseline, form: str = "constant") -> LyapunovCertificate:
    return build_certificate(mdp, baseline, auxiliary_cost(mdp, baseline, form))


def lyapunov_backup(cert: LyapunovCertificate, policy) -> np.ndarray:
    """``T_{pi,d}[L]`` for every state."""
    return bellman_apply(cert.mdp, policy, cert.mdp.constraint_cost, cert.l_values)


def is_member(cert: LyapunovCertificate, policy, state: int) -> bool:
    """Whether ``policy`` at ``state`` belongs to the L-induced policy set."""
    backed = lyapunov_backup(cert, policy)
    return bool(backed[state] <= cert.l_values[state] + CERT_TOL)


# baseline-closeness check and the exact constructions ------------------------

def tv_distance(pi, pi_prime) -> np.ndarray:
    """Per-state total-variation distance between two policies."""
    return 0.5 * np.sum(np.abs(np.asarray(pi, float) - np.asarray(pi_prime, float)), axis=1)


def max_constraint_value(mdp: TransientCmdp, tol: float = 1e-10, max_iter: int = 1_000_000) -> np.ndarray:
    """``max_pi D_pi(x)`` per state, by value iteration on the maximizing operator.

    Returns ``inf`` entries if the iteration does not settle (some policy keeps
    accumulating constraint cost).
    """
    d = mdp.constraint_cost
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        new = np.max(d[:, None] + mdp.backup(v), axis=1)
        if np.max(np.abs(new - v), initial=0.0) < tol:
            return new
        v = new
    return np.full(mdp.n_states, np.inf)


@dataclass(frozen=True)
class Assumption1Report:
    holds: bool
    lhs: float
    rhs: float
    eps_star: np.ndarray
    tv: np.ndarray
    d_bar: float
    d_max: float
    slack: float


def optimal_aux_bound(mdp: TransientCmdp, baseline, optimal_policy) -> np.ndarray:
    """``eps*(x) = 2 T_bar D_max TV(pi*, pi_B)(x)``."""
    d_max = float(np.max(mdp.constraint_cost, initial=0.0))
    return 2.0 * mdp.horizon_bound * d_max * tv_distance(optimal_policy, baseline)


def check_assumption1(mdp: TransientCmdp, baseline, optimal_policy, tol: float = 1e-9) -> Assumption1Report:
    """Compare ``max eps*`` with its admissible bound; ``tol`` absorbs rounding in a zero slack."""
    pi_b = check_policy(mdp, baseline)
    pi_star = check_policy(mdp, optimal_policy)
    T = float(mdp.horizon_bound)
    d_max = float(np.max(mdp.constraint_cost, initial=0.0))
    tv = tv_distance(pi_star, pi_b)
    eps_star = 2.0 * T * d_max * tv
    d_bar = float(np.max(max_constraint_value(mdp)))
    slack = mdp.threshold - evaluate_policy(mdp, pi_b, mdp.constraint_cost)[mdp.initial_state]
    lhs = float(np.max(eps_star))
    if d_max == 0.0:
        rhs = 0.0
    else:
        rhs = d_max * min(slack / (T * d_max), (T * d_max - d_bar) / (T * d_max + d_bar))
    return Assumption1Report(bool(lhs <= rhs + tol), lhs, float(rhs), eps_star, tv, d_bar, d_max, float(slack))


def lemma1_epsilon(mdp: TransientCmdp, baseline, optimal_policy) -> np.ndarray:
    """Signed auxiliary cost whose baseline evaluation equals ``D_{pi*}``.

    ``eps(x) = sum_a (pi*(a|x) - pi_B(a|x)) sum_x' P(x'|x,a) D_{pi*}(x')``
    """
    pi_b = check_policy(mdp, baseline)
    pi_star = check_policy(mdp, optimal_policy)
    d_star = evaluate_policy(mdp, pi_star, mdp.constraint_cost)
    return np.sum((pi_star - pi_b) * mdp.backup(d_star), axis=1)


@dataclass(frozen=True)
class ImprovementBound:
    lambda_term: float
    tv_term: float

    @property
    def lower(self) -> float:
        return self.lambda_term - self.tv_term

    @property
    def upper(self) -> float:
        return self.lambda_term + self.tv_term

    def contains(self, value: float, tol: float = 1e-9) -> bool:
        return self.lower - tol <= value <= self.upper + tol


def improvement_bound(mdp: TransientCmdp, pi, pi_prime) -> ImprovementBound:
    """Bracket on ``C_{pi'}(x0) - C_pi(x0)`` computed from quantities under ``pi``."""
    pi = check_policy(mdp, pi)
    pi_prime = check_policy(mdp, pi_prime)
    system = PolicySystem(mdp, pi)
    v = system.values(mdp.cost)
    q = mdp.cost + mdp.backup(v)
    advantage = np.sum(pi_prime * q, axis=1) - v
    visits = system.visits()
    lam = float(visits @ advantage)
    delta = float(np.max(np.abs(advantage)))
    max_stop = float(np.max(PolicySystem(mdp, pi_prime).values(1.0)))
    tv_sum = float(visits @ tv_distance(pi_prime, pi))
    return ImprovementBound(lam, 2.0 * delta * max_stop * tv_sum)
