"""Seeded random CMDPs for property tests and oracle comparisons."""

from __future__ import annotations

import math

import numpy as np

from .cmdp import TransientCmdp


def _threshold_between(mdp: TransientCmdp, rng: np.random.Generator, low: float = 0.2, high: float = 0.8) -> float:
    """Pick ``d0`` between the least achievable constraint value and that of the cost-optimal policy."""
    from .baselines import unconstrained_solve

    d_min = unconstrained_solve(mdp, "min_constraint").constraint
    d_free = unconstrained_solve(mdp, "min_cost").constraint
    return float(d_min + rng.uniform(low, high) * max(d_free - d_min, 0.0))


def dense_cmdp(rng: np.random.Generator, n_states: int = 10, n_actions: int = 4,
               min_termination: float = 0.1, threshold: float | None = None) -> TransientCmdp:
    """Fully connected CMDP where every row leaks at least ``min_termination`` to the terminal state.

    Every policy then terminates within ``ceil(1 / min_termination)`` expected
    steps, which is used as the horizon bound. ``d(x0) = 0``, costs are in
    ``[0, 1)``, and by default ``d0`` sits strictly between the smallest
    achievable constraint value and the constraint value of the cost-optimal
    policy, so the instance is feasible and the constraint usually binds.
    """
    S, A = n_states, n_actions
    leak = rng.uniform(min_termination, 2 * min_termination, size=(S, A))
    P = rng.dirichlet(np.ones(S), size=(S, A)) * (1.0 - leak)[..., None]
    cost = rng.random((S, A))
    d = rng.random(S)
    d[0] = 0.0
    mdp = TransientCmdp(S, A, P, cost, d, 0, 0.0, math.ceil(1.0 / min_termination), name="dense")
    d0 = _threshold_between(mdp, rng) if threshold is None else threshold
    return mdp.with_threshold(d0)


def layered_cmdp(rng: np.random.Generator, layer_sizes=(1, 2, 3), n_actions: int = 3,
                 threshold: float | None = None) -> TransientCmdp:
    """Acyclic CMDP: layer ``k`` only reaches layer ``k + 1`` (or stops); the last layer stops.

    The number of layers is an exact bound on the stopping time, so the
    horizon bound is tight rather than heuristic.
    """
    sizes = list(layer_sizes)
    S = sum(sizes)
    A = n_actions
    starts = np.cumsum([0] + sizes)
    P = np.zeros((S, A, S))
    for k in range(len(sizes) - 1):
        lo, hi = starts[k + 1], starts[k + 2]
        for x in range(starts[k], starts[k + 1]):
            stay = rng.uniform(0.6, 1.0, size=A)
            P[x, :, lo:hi] = rng.dirichlet(np.ones(hi - lo), size=A) * stay[:, None]
    cost = rng.random((S, A))
    d = rng.random(S)
    d[0] = 0.0
    mdp = TransientCmdp(S, A, P, cost, d, 0, 0.0, len(sizes), name="layered")
    d0 = _threshold_between(mdp, rng) if threshold is None else threshold
    return mdp.with_threshold(d0)


def random_policy(mdp: TransientCmdp, rng: np.random.Generator, concentration: float = 1.0) -> np.ndarray:
    return rng.dirichlet(np.full(mdp.n_actions, concentration), size=mdp.n_states)
