"""Safe policy iteration, safe value iteration and the safe Bellman operator."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .cmdp import PolicySystem, TransientCmdp, check_policy
from .lyapunov import (
    InfeasibleBaselineError,
    LyapunovCertificate,
    auxiliary_cost,
    build_certificate,
)
from .policy_opt import min_over_cut_simplex, solve_policy_entropy_batch

FEASIBLE_TOL = 1e-8
TRACE_FIELDS = ("iteration", "objective", "constraint", "policy_delta", "epsilon")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    objective: float
    constraint: float
    policy_delta: float
    epsilon: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SolveReport:
    solver: str
    final_policy: np.ndarray
    objective: float
    constraint: float
    threshold: float
    iterations: int
    trace: tuple = ()
    flags: tuple = ()
    extras: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return bool(self.constraint <= self.threshold + FEASIBLE_TOL)

    @property
    def flagged(self) -> bool:
        return bool(self.flags)

    def to_dict(self) -> dict:
        return {
            "solver": self.solver,
            "final_policy": self.final_policy.tolist(),
            "objective": self.objective,
            "constraint": self.constraint,
            "threshold": self.threshold,
            "feasible": self.feasible,
            "iterations": self.iterations,
            "trace": [row.to_dict() for row in self.trace],
            "flags": list(self.flags),
            "extras": self.extras,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), default=_jsonable)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_FIELDS)
        for row in self.trace:
            writer.writerow([row.iteration] + [repr(float(getattr(row, k))) for k in TRACE_FIELDS[1:]])
        return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def make_report(mdp: TransientCmdp, solver: str, policy, iterations: int, trace=(), flags=(),
                extras=None, system: PolicySystem | None = None) -> SolveReport:
    """Evaluate ``policy`` exactly at ``x0`` and wrap it in a report."""
    policy = check_policy(mdp, policy)
    if system is None:
        system = PolicySystem(mdp, policy)
    x0 = mdp.initial_state
    return SolveReport(
        solver=solver,
        final_policy=policy,
        objective=float(system.values(mdp.cost)[x0]),
        constraint=float(system.values(mdp.constraint_cost)[x0]),
        threshold=float(mdp.threshold),
        iterations=int(iterations),
        trace=tuple(trace),
        flags=tuple(flags),
        extras=dict(extras or {}),
    )


@dataclass
class SafeDpOptions:
    aux_cost: str = "constant"
    max_iters: int | None = None  # default 10 * horizon_bound
    tol: float = 1e-8
    entropy: float = 0.0  # set to e.g. 1e-6 to smooth ties on cycling instances
    q_init: str = "baseline"  # svi only: "baseline" (Q of the initial policy) or "zero"

    def iteration_cap(self, mdp: TransientCmdp) -> int:
        return int(self.max_iters) if self.max_iters is not None else 10 * int(mdp.horizon_bound)


def _greedy(cert: LyapunovCertificate, q: np.ndarray, entropy: float = 0.0):
    """Per-state minimization of ``pi . q`` over the L-induced set."""
    mdp = cert.mdp
    if entropy > 0:
        return solve_policy_entropy_batch(q, cert.ql, cert.baseline, np.maximum(cert.epsilon, 0.0), entropy)
    # T_{pi,d}[L](x) <= L(x) written as a row over actions
    row = mdp.constraint_cost[:, None] + mdp.backup(cert.l_values)
    pi, value, _ = min_over_cut_simplex(q, row, cert.l_values, fallback=cert.baseline)
    return pi, value


def safe_bellman(mdp: TransientCmdp, cert: LyapunovCertificate, v, entropy: float = 0.0):
    """One application of the safe Bellman operator; returns ``(values, greedy policy)``."""
    v = np.asarray(v, dtype=float)
    q = mdp.cost + mdp.backup(v)
    pi, value = _greedy(cert, q, entropy)
    return value, pi


def safe_fixed_point(mdp: TransientCmdp, cert: LyapunovCertificate, tol: float = 1e-10,
                     max_iter: int = 100_000, v0=None):
    """Iterate the safe Bellman operator for a fixed certificate until the sup-norm change is below ``tol``."""
    v = np.zeros(mdp.n_states) if v0 is None else np.asarray(v0, dtype=float)
    for it in range(1, max_iter + 1):
        new, pi = safe_bellman(mdp, cert, v)
        if np.max(np.abs(new - v), initial=0.0) < tol:
            return new, pi, it
        v = new
    raise RuntimeError(f"safe Bellman iteration did not settle in {max_iter} sweeps")


def _require_feasible(mdp: TransientCmdp, system: PolicySystem) -> None:
    d0_val = float(system.values(mdp.constraint_cost)[mdp.initial_state])
    if d0_val > mdp.threshold + FEASIBLE_TOL:
        raise InfeasibleBaselineError(d0_val, mdp.threshold)


def _certificate(mdp, pi, form):
    return build_certificate(mdp, pi, auxiliary_cost(mdp, pi, form))


def spi(mdp: TransientCmdp, initial_policy, options: SafeDpOptions | None = None) -> SolveReport:
    """Safe policy iteration from a feasible initial policy."""
    opts = options or SafeDpOptions()
    pi = check_policy(mdp, initial_policy)
    system = PolicySystem(mdp, pi)
    _require_feasible(mdp, system)
    x0 = mdp.initial_state
    v = system.values(mdp.cost)
    c_cur = float(v[x0])
    cert = _certificate(mdp, pi, opts.aux_cost)
    extras = {"initial_objective": c_cur,
              "initial_constraint": float(system.values(mdp.constraint_cost)[x0])}
    trace, flags = [], []
    converged = False
    for k in range(1, opts.iteration_cap(mdp) + 1):
        q = mdp.cost + mdp.backup(v)
        new_pi, _ = _greedy(cert, q, opts.entropy)
        new_system = PolicySystem(mdp, new_pi)
        new_v = new_system.values(mdp.cost)
        c_new = float(new_v[x0])
        d_new = float(new_system.values(mdp.constraint_cost)[x0])
        delta = float(np.max(np.abs(new_pi - pi)))
        trace.append(TraceRow(k, c_new, d_new, delta, float(np.max(cert.epsilon))))
        if d_new <= mdp.threshold + FEASIBLE_TOL and c_new <= c_cur + opts.tol:
            cert = _certificate(mdp, new_pi, opts.aux_cost)
        pi, system, v, c_cur = new_pi, new_system, new_v, c_new
        if delta < opts.tol:
            converged = True
            break
    if not converged:
        flags.append("max_iters")
    return make_report(mdp, "spi", pi, len(trace), trace, flags, extras, system)


def svi(mdp: TransientCmdp, initial_policy, options: SafeDpOptions | None = None) -> SolveReport:
    """Safe value iteration; the certificate is rebuilt from each feasible greedy policy.

    By default the Q-table starts from the initial policy's own Q-function, so
    early greedy policies are sensible even on grids where a careless policy
    takes astronomically long to terminate. ``q_init="zero"`` starts from 0.
    """
    opts = options or SafeDpOptions()
    pi = check_policy(mdp, initial_policy)
    system = PolicySystem(mdp, pi)
    _require_feasible(mdp, system)
    x0 = mdp.initial_state
    cert = build_certificate(mdp, pi, np.zeros(mdp.n_states))
    if opts.q_init == "zero":
        q = np.zeros(mdp.shape)
    elif opts.q_init == "baseline":
        q = mdp.cost + mdp.backup(system.values(mdp.cost))
    else:
        raise ValueError(f"unknown q_init {opts.q_init!r}")
    extras = {"initial_objective": float(system.values(mdp.cost)[x0]),
              "initial_constraint": float(system.values(mdp.constraint_cost)[x0])}
    trace, flags = [], []
    converged = False
    for k in range(1, opts.iteration_cap(mdp) + 1):
        new_pi, value = _greedy(cert, q, opts.entropy)
        new_q = mdp.cost + mdp.backup(value)
        new_system = PolicySystem(mdp, new_pi)
        c_new = float(new_system.values(mdp.cost)[x0])
        d_new = float(new_system.values(mdp.constraint_cost)[x0])
        delta = float(np.max(np.abs(new_pi - pi)))
        trace.append(TraceRow(k, c_new, d_new, delta, float(np.max(cert.epsilon))))
        used = cert
        if d_new <= mdp.threshold + FEASIBLE_TOL:
            cert = _certificate(mdp, new_pi, opts.aux_cost)
        change = float(np.max(np.abs(new_q - q)))
        # a rebuilt certificate can enlarge the feasible set even when Q is unchanged
        cert_moved = float(np.max(np.abs(cert.l_values - used.l_values)))
        pi, system, q = new_pi, new_system, new_q
        if change < opts.tol and cert_moved < opts.tol:
            converged = True
            break
    if not converged:
        flags.append("max_iters")
    extras["q_table"] = q
    return make_report(mdp, "svi", pi, len(trace), trace, flags, extras, system)
