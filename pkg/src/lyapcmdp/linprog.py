"""Dense two-phase simplex with Bland's anti-cycling rule.

Minimizes ``c @ z`` subject to ``A_eq z = b_eq``, ``A_ub z <= b_ub`` and
per-variable bounds ``lo <= z <= hi`` (infinite bounds allowed; the default is
``[0, inf)``). Problems in this package are small, so the tableau is dense and
every pivot choice is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-10
FEAS_TOL = 1e-7
OPT_TOL = 1e-10
DEFAULT_MAX_ITER = 100_000
REFACTOR_EVERY = 32
ZERO_SNAP = 1e-11  # basic values this small are treated as exact zeros
PERTURB = 1e-9  # relative right-hand-side shift used to break degeneracy


class LpIterationLimit(RuntimeError):
    def __init__(self, phase: int, iterations: int):
        super().__init__(f"simplex phase {phase} hit the iteration cap ({iterations})")
        self.phase = phase
        self.iterations = iterations


@dataclass(frozen=True)
class LinearProgram:
    objective: np.ndarray
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    a_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    bounds: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).ravel()
        n = c.size
        object.__setattr__(self, "objective", c)
        for a_name, b_name in (("a_eq", "b_eq"), ("a_ub", "b_ub")):
            a, b = getattr(self, a_name), getattr(self, b_name)
            if a is None and b is None:
                a, b = np.zeros((0, n)), np.zeros(0)
            elif a is None or b is None:
                raise ValueError(f"{a_name} and {b_name} must be given together")
            a = np.atleast_2d(np.asarray(a, dtype=float))
            b = np.asarray(b, dtype=float).ravel()
            if a.shape != (b.size, n):
                raise ValueError(f"{a_name} has shape {a.shape}, expected {(b.size, n)}")
            object.__setattr__(self, a_name, a)
            object.__setattr__(self, b_name, b)
        if self.bounds is None:
            bounds = np.column_stack([np.zeros(n), np.full(n, np.inf)])
        else:
            bounds = np.array(self.bounds, dtype=float).reshape(n, 2)
        if np.any(bounds[:, 0] > bounds[:, 1]):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "bounds", bounds)
        finite = [c, self.a_eq, self.b_eq, self.a_ub, self.b_ub]
        if not all(np.all(np.isfinite(x)) for x in finite):
            raise ValueError("LP coefficients must be finite")

    @property
    def n_vars(self) -> int:
        return self.objective.size

    def residual(self, z: np.ndarray) -> float:
        """Largest constraint violation of ``z`` (inf-norm)."""
        parts = [0.0]
        if self.b_eq.size:
            parts.append(np.max(np.abs(self.a_eq @ z - self.b_eq)))
        if self.b_ub.size:
            parts.append(np.max(self.a_ub @ z - self.b_ub))
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        parts.append(np.max(np.where(np.isfinite(lo), lo - z, -np.inf), initial=0.0))
        parts.append(np.max(np.where(np.isfinite(hi), z - hi, -np.inf), initial=0.0))
        return float(max(parts))


@dataclass(frozen=True)
class LpSolution:
    status: str  # "optimal" | "infeasible" | "unbounded"
    point: np.ndarray | None
    objective_value: float | None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _standard_form(lp: LinearProgram):
    """Rewrite as ``min c'y  s.t.  M y = r, y >= 0`` with ``z = offset + T y``."""
    n = lp.n_vars
    lo, hi = lp.bounds[:, 0], lp.bounds[:, 1]
    cols = []  # (original var, sign)
    offset = np.zeros(n)
    upper_rows = []  # (column index, width)
    for j in range(n):
        if np.isfinite(lo[j]):
            offset[j] = lo[j]
            cols.append((j, 1.0))
            if np.isfinite(hi[j]):
                upper_rows.append((len(cols) - 1, hi[j] - lo[j]))
        elif np.isfinite(hi[j]):
            offset[j] = hi[j]
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    T = np.zeros((n, len(cols)))
    for k, (j, s) in enumerate(cols):
        T[j, k] = s

    m_eq, m_ub, m_bd = lp.b_eq.size, lp.b_ub.size, len(upper_rows)
    n_struct = len(cols)
    n_slack = m_ub + m_bd
    M = np.zeros((m_eq + m_ub + m_bd, n_struct + n_slack))
    r = np.zeros(m_eq + m_ub + m_bd)
    if m_eq:
        M[:m_eq, :n_struct] = lp.a_eq @ T
        r[:m_eq] = lp.b_eq - lp.a_eq @ offset
    if m_ub:
        M[m_eq:m_eq + m_ub, :n_struct] = lp.a_ub @ T
        M[m_eq:m_eq + m_ub, n_struct:n_struct + m_ub] = np.eye(m_ub)
        r[m_eq:m_eq + m_ub] = lp.b_ub - lp.a_ub @ offset
    for i, (k, width) in enumerate(upper_rows):
        row = m_eq + m_ub + i
        M[row, k] = 1.0
        M[row, n_struct + m_ub + i] = 1.0
        r[row] = width
    c = np.zeros(n_struct + n_slack)
    c[:n_struct] = lp.objective @ T
    return c, M, r, T, offset


def _pivot(tab: np.ndarray, basis: list[int], row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    factor = tab[:, col].copy()
    factor[row] = 0.0
    tab -= np.outer(factor, tab[row])
    rhs = tab[:-1, -1]
    rhs[np.abs(rhs) < ZERO_SNAP] = 0.0
    basis[row] = col


def _refactor(tab: np.ndarray, basis: list[int], full: np.ndarray, cost: np.ndarray) -> bool:
    """Recompute the tableau from the original rows and the current basis."""
    try:
        body = np.linalg.solve(full[:, basis], full)
    except np.linalg.LinAlgError:
        return False
    body[np.abs(body[:, -1]) < ZERO_SNAP, -1] = 0.0
    tab[:-1] = body
    tab[-1] = cost - cost[basis] @ body
    return True


def _run_bland(tab: np.ndarray, basis: list[int], n_cols: int, max_iter: int, phase: int,
               full: np.ndarray, cost: np.ndarray) -> tuple[str, int]:
    """Iterate on a tableau whose last row holds reduced costs (last column: -objective).

    ``full`` holds the original constraint rows (with the right-hand side as
    last column) and ``cost`` the phase objective; the tableau is rebuilt from
    them every ``REFACTOR_EVERY`` pivots and before any verdict, so rounding
    drift cannot accumulate over long degenerate runs.
    """
    since = 0
    for it in range(max_iter):
        if since >= REFACTOR_EVERY:
            _refactor(tab, basis, full, cost)
            since = 0
        reduced = tab[-1, :n_cols]
        candidates = np.flatnonzero(reduced < -OPT_TOL)
        if candidates.size == 0:
            if since and _refactor(tab, basis, full, cost):
                since = 0
                continue
            return "optimal", it
        col = int(candidates[0])
        column = tab[:-1, col]
        rows = np.flatnonzero(column > PIVOT_TOL)
        if rows.size == 0:
            if since and _refactor(tab, basis, full, cost):
                since = 0
                continue
            return "unbounded", it
        rhs = np.maximum(tab[rows, -1], 0.0)
        ratios = rhs / column[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * (1.0 + abs(best))]
        row = int(min(ties, key=lambda i: basis[i]))
        _pivot(tab, basis, row, col)
        since += 1
    raise LpIterationLimit(phase, max_iter)


def _perturbation(m: int, r: np.ndarray) -> np.ndarray:
    """Deterministic, row-distinct right-hand-side shift that breaks degeneracy."""
    w = 0.5 + 0.5 * np.modf((np.arange(m) + 1) * 0.6180339887498949)[0]
    return PERTURB * (1.0 + np.abs(r)) * w


def _simplex(c, M, r_true, max_iter, perturb):
    """Two-phase Bland simplex on ``min c'y, M y = r, y >= 0`` with ``r >= 0``.

    Returns ``(status, y, iterations)``; ``status`` is ``None`` when the
    perturbed optimal basis is not feasible for the true right-hand side.
    """
    m, n = M.shape
    r = r_true + _perturbation(m, r_true) if perturb else r_true.copy()
    scale = 1.0 + np.max(np.abs(r_true))

    # Columns that are unit vectors start basic; other rows get artificials.
    basis: list[int] = []
    art_rows = []
    singleton = np.count_nonzero(M, axis=0) == 1
    for i in range(m):
        unit = np.flatnonzero((M[i] == 1.0) & singleton)
        unit = [k for k in unit if k not in basis]
        if unit:
            basis.append(int(unit[0]))
        else:
            basis.append(-1)
            art_rows.append(i)

    n_art = len(art_rows)
    tab = np.zeros((m + 1, n + n_art + 1))
    tab[:m, :n] = M
    tab[:m, -1] = r
    for k, i in enumerate(art_rows):
        tab[i, n + k] = 1.0
        basis[i] = n + k

    iterations = 0
    kept_rows = list(range(m))
    if n_art:
        # phase 1: minimize the sum of artificials
        full = tab[:m].copy()
        cost1 = np.zeros(n + n_art + 1)
        cost1[n:n + n_art] = 1.0
        _refactor(tab, basis, full, cost1)
        _, it = _run_bland(tab, basis, n + n_art, max_iter, 1, full, cost1)
        iterations += it
        # judge feasibility on the unperturbed right-hand side
        full_true = full.copy()
        full_true[:, -1] = r_true
        x_true = np.linalg.solve(full_true[:, basis], r_true)
        art_mass = sum(abs(x) for x, b in zip(x_true, basis) if b >= n)
        if art_mass > FEAS_TOL * scale:
            return "infeasible", None, iterations
        # drive remaining artificials out of the basis; drop redundant rows
        keep = []
        for i in range(m):
            if basis[i] >= n:
                nz = np.flatnonzero(np.abs(tab[i, :n]) > PIVOT_TOL)
                if nz.size:
                    _pivot(tab, basis, i, int(nz[0]))
                    keep.append(i)
            else:
                keep.append(i)
        kept_rows = keep
        tab = np.vstack([tab[keep], tab[-1:]])
        basis = [basis[i] for i in keep]
        tab = np.delete(tab, np.s_[n:n + n_art], axis=1)
        m = len(basis)

    # phase 2
    full = np.column_stack([M[kept_rows], r[kept_rows]])
    cost2 = np.append(c, 0.0)
    _refactor(tab, basis, full, cost2)
    status, it = _run_bland(tab, basis, n, max_iter, 2, full, cost2)
    iterations += it
    if status == "unbounded":
        return "unbounded", None, iterations

    # reduced costs do not depend on the right-hand side, so the basis stays
    # optimal for the true problem as long as it is still primal feasible
    M_k, r_k = M[kept_rows], r_true[kept_rows]
    y_b = np.linalg.lstsq(M_k[:, basis], r_k, rcond=None)[0]
    if np.min(y_b, initial=0.0) < -FEAS_TOL * scale:
        return None, None, iterations
    y = np.zeros(n)
    y[basis] = np.maximum(y_b, 0.0)
    return "optimal", y, iterations


def solve_lp(lp: LinearProgram, max_iter: int = DEFAULT_MAX_ITER) -> LpSolution:
    c, M, r, T, offset = _standard_form(lp)
    m, n = M.shape
    if m == 0:
        if np.any(c < -OPT_TOL):
            return LpSolution("unbounded", None, None)
        z = offset.copy()
        return LpSolution("optimal", z, float(lp.objective @ z))

    neg = r < 0
    M[neg] *= -1
    r[neg] *= -1

    status, y, iterations = _simplex(c, M, r, max_iter, perturb=True)
    if status is None:
        # the perturbed basis does not carry over; redo without the shift
        status, y, more = _simplex(c, M, r, max_iter, perturb=False)
        iterations += more
    if status != "optimal":
        return LpSolution(status, None, None, iterations)
    z = offset + T @ y[:T.shape[1]]
    return LpSolution("optimal", z, float(lp.objective @ z), iterations)
