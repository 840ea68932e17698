"""Per-state policy optimization under one linear Lyapunov constraint.

The subproblem at a state ``x`` is

    min_pi  pi . q    s.t.  pi in simplex,  (pi - pi_B) . q_L <= budget

The feasible set is a simplex cut by one half-space, so its vertices are the
pure actions that satisfy the cut plus the points where the cut crosses an
edge of the simplex. Enumerating them gives the exact optimum; the batched
routines below do this for every state of a sweep at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import logsumexp, softmax

VERTEX_TOL = 1e-12
TIE_TOL = 1e-12
SIMPLEX_TOL = 1e-9


class MultiplierBracketError(RuntimeError):
    """The constraint stays violated at the multiplier cap."""


@dataclass(frozen=True)
class PolicySubproblem:
    q_row: np.ndarray
    ql_row: np.ndarray
    baseline_row: np.ndarray
    budget: float

    def __post_init__(self):
        q = np.asarray(self.q_row, dtype=float).ravel()
        ql = np.asarray(self.ql_row, dtype=float).ravel()
        base = np.asarray(self.baseline_row, dtype=float).ravel()
        if not q.size == ql.size == base.size:
            raise ValueError("q_row, ql_row and baseline_row must have equal length")
        if np.any(base < -SIMPLEX_TOL) or abs(base.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError("baseline_row must lie on the simplex")
        if self.budget < 0:
            raise ValueError("budget must be nonnegative")
        object.__setattr__(self, "q_row", q)
        object.__setattr__(self, "ql_row", ql)
        object.__setattr__(self, "baseline_row", base)
        object.__setattr__(self, "budget", float(self.budget))

    @property
    def bound(self) -> float:
        """Right-hand side of ``pi . q_L <= bound``."""
        return float(self.baseline_row @ self.ql_row + self.budget)

    def slack(self, pi: np.ndarray) -> float:
        return self.bound - float(np.asarray(pi) @ self.ql_row)


def min_over_cut_simplex(q: np.ndarray, r: np.ndarray, bound: np.ndarray,
                         fallback: np.ndarray | None = None):
    """Batched ``min pi.q[x] s.t. pi.r[x] <= bound[x]`` over the simplex.

    ``q`` and ``r`` have shape (S, A). Candidates are tried in a fixed order
    (pure actions by index, then action pairs lexicographically, then the
    ``fallback`` row) and the first one within ``TIE_TOL`` of the optimum wins.
    Returns ``(policy, value, feasible)``; rows with no feasible vertex and no
    fallback get ``nan`` values and ``feasible=False``.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    S, A = q.shape
    bound = np.broadcast_to(np.asarray(bound, dtype=float), (S,))
    tol = VERTEX_TOL * np.maximum(1.0, np.abs(bound))

    best_val = np.full(S, np.inf)
    best_kind = np.full(S, -1)  # 0 pure, 1 pair, 2 fallback
    best_i = np.zeros(S, dtype=int)
    best_j = np.zeros(S, dtype=int)
    best_w = np.zeros(S)

    def offer(val, ok, kind, i, j, w):
        nonlocal best_val
        finite = np.isfinite(best_val)
        margin = TIE_TOL * np.maximum(1.0, np.abs(np.where(finite, best_val, 0.0)))
        better = ok & (~finite | (val < np.where(finite, best_val, 0.0) - margin))
        best_val = np.where(better, val, best_val)
        best_kind[better] = kind
        best_i[better] = i
        best_j[better] = j
        best_w[better] = w if np.ndim(w) == 0 else w[better]

    gap = r - bound[:, None]
    for a in range(A):
        offer(q[:, a], gap[:, a] <= tol, 0, a, a, 1.0)
    for i, j in combinations(range(A), 2):
        gi, gj = gap[:, i], gap[:, j]
        cross = (gi * gj < 0) & (np.abs(gi) > tol) & (np.abs(gj) > tol)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(cross, gj / (gj - gi), 0.0)  # mass on i
        offer(w * q[:, i] + (1 - w) * q[:, j], cross, 1, i, j, w)
    if fallback is not None:
        fallback = np.asarray(fallback, dtype=float)
        offer(np.sum(fallback * q, axis=1), np.ones(S, dtype=bool), 2, 0, 0, 0.0)

    pi = np.zeros((S, A))
    rows = np.arange(S)
    pure = best_kind == 0
    pi[rows[pure], best_i[pure]] = 1.0
    pair = best_kind == 1
    pi[rows[pair], best_i[pair]] = best_w[pair]
    pi[rows[pair], best_j[pair]] += 1.0 - best_w[pair]
    fb = best_kind == 2
    if fallback is not None:
        pi[fb] = fallback[fb]
    feasible = best_kind >= 0
    value = np.where(feasible, np.sum(pi * q, axis=1), np.nan)
    return pi, value, feasible


def solve_policy_lp(sp: PolicySubproblem) -> np.ndarray:
    """Exact minimizer of the per-state Lyapunov-constrained LP."""
    pi, _, _ = min_over_cut_simplex(sp.q_row[None], sp.ql_row[None], np.array([sp.bound]),
                                    fallback=sp.baseline_row[None])
    return pi[0]


def solve_policy_lp_batch(q, ql, baseline, budget):
    """``solve_policy_lp`` for every state; returns ``(policy, value)``."""
    baseline = np.asarray(baseline, dtype=float)
    bound = np.sum(baseline * ql, axis=1) + np.asarray(budget, dtype=float)
    pi, value, _ = min_over_cut_simplex(q, ql, bound, fallback=baseline)
    return pi, value


# entropy-regularized variant -------------------------------------------------

def _softmax_policy(q, ql, lam, tau):
    return softmax(-(q + lam[..., None] * ql) / tau, axis=-1)


def constraint_violation(sp: PolicySubproblem, lam: float, tau: float) -> float:
    """``E_{pi_lam}[q_L] - bound``; nonincreasing in ``lam``."""
    pi = _softmax_policy(sp.q_row, sp.ql_row, np.asarray(lam, dtype=float), tau)
    return float(pi @ sp.ql_row - sp.bound)


def _bisect_multipliers(q, ql, bound, tau, lam_max):
    """Vectorized bisection for the KKT multiplier of each row."""
    S = q.shape[0]
    zero = np.zeros(S)
    g0 = np.sum(_softmax_policy(q, ql, zero, tau) * ql, axis=1) - bound
    active = g0 > 0
    lam = np.zeros(S)
    if not np.any(active):
        return lam, np.zeros(S, dtype=bool)
    lo = np.zeros(S)
    hi = np.full(S, lam_max)
    g_hi = np.sum(_softmax_policy(q, ql, hi, tau) * ql, axis=1) - bound
    stuck = active & (g_hi > 0)
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if np.all((mid <= lo) | (mid >= hi) | ~active):
            break
        g = np.sum(_softmax_policy(q, ql, mid, tau) * ql, axis=1) - bound
        go_up = g > 0
        lo = np.where(active & go_up, mid, lo)
        hi = np.where(active & ~go_up, mid, hi)
    # hi always satisfies the constraint; lo may not
    lam = np.where(active, hi, 0.0)
    return lam, stuck


def solve_multiplier_root(sp: PolicySubproblem, tau: float, lam_max: float | None = None) -> float:
    """Optimal multiplier of the entropy-regularized subproblem.

    Bisection on the monotone constraint violation; zero when the softmax of
    ``-q/tau`` already satisfies the constraint.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if lam_max is None:
        lam_max = 1e6 / tau
    lam, stuck = _bisect_multipliers(sp.q_row[None], sp.ql_row[None], np.array([sp.bound]), tau, lam_max)
    if stuck[0]:
        raise MultiplierBracketError(
            f"constraint still violated at lambda={lam_max:g} "
            f"(violation {constraint_violation(sp, lam_max, tau):.3e}, min q_L={sp.ql_row.min():.6g}, "
            f"bound={sp.bound:.6g}); feasible set has no interior")
    return float(lam[0])


def solve_policy_entropy(sp: PolicySubproblem, tau: float, lam_max: float | None = None) -> np.ndarray:
    """Softmax closed form ``pi ~ exp(-(q + lam* q_L) / tau)``."""
    lam = solve_multiplier_root(sp, tau, lam_max)
    return _softmax_policy(sp.q_row, sp.ql_row, np.asarray(lam), tau)


def solve_policy_entropy_batch(q, ql, baseline, budget, tau, lam_max=None):
    """Row-wise entropy-regularized solution; rows that cannot be bracketed keep the baseline."""
    baseline = np.asarray(baseline, dtype=float)
    bound = np.sum(baseline * ql, axis=1) + np.asarray(budget, dtype=float)
    if lam_max is None:
        lam_max = 1e6 / tau
    lam, stuck = _bisect_multipliers(np.asarray(q, float), np.asarray(ql, float), bound, tau, lam_max)
    pi = _softmax_policy(np.asarray(q, float), np.asarray(ql, float), lam, tau)
    pi[stuck] = baseline[stuck]
    return pi, np.sum(pi * q, axis=1)


def multiplier_polynomial(sp: PolicySubproblem, tau: float, z: float) -> float:
    """KKT condition written in ``z = exp(-lambda)``; zero at the optimal multiplier.

    Terms are rescaled by a common positive factor so the sum stays in range.
    """
    expo = -sp.q_row / tau + (sp.ql_row / tau) * np.log(z)
    weights = np.exp(expo - logsumexp(expo))
    return float(np.sum((sp.ql_row - sp.bound) * weights))
