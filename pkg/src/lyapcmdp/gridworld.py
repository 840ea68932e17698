"""Stochastic grid navigation with obstacles, compiled to a transient CMDP.

Cells are indexed ``row * width + col``; row 0 is the top. Actions are
up, down, left, right. A move lands as intended with probability ``1 - slip``;
otherwise the agent moves in one of the four directions uniformly at random
(the intended one included). Moves off the grid leave the agent in place and
entering the goal ends the episode.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from .cmdp import TransientCmdp, validate

MOVES = np.array([(-1, 0), (1, 0), (0, -1), (0, 1)])
ARROWS = "^v<>"
MODES = ("assume_proper", "timeout_augment")


@dataclass(frozen=True)
class GridSpec:
    width: int = 25
    height: int = 25
    density: float = 0.3
    slip: float = 0.05
    threshold: float = 5.0
    horizon: int = 200
    start: tuple | None = None  # defaults to the bottom-right cell
    randomize_goal: bool = True
    goal_column: int = 0  # used when randomize_goal is False
    goal_reward: float = 1000.0
    step_cost: float = 1.0
    obstacle_cost: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must have positive width and height")
        if not 0.0 <= self.density < 1.0:
            raise ValueError("density must lie in [0, 1)")
        if not 0.0 <= self.slip < 1.0:
            raise ValueError("slip must lie in [0, 1)")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        start = (self.height - 1, self.width - 1) if self.start is None else tuple(int(v) for v in self.start)
        if not (0 <= start[0] < self.height and 0 <= start[1] < self.width):
            raise ValueError(f"start {start} outside the grid")
        object.__setattr__(self, "start", start)
        if not 0 <= self.goal_column < self.width:
            raise ValueError("goal_column outside the grid")

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def to_dict(self) -> dict:
        out = asdict(self)
        out["start"] = list(self.start)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        data = dict(data)
        if data.get("start") is not None:
            data["start"] = tuple(data["start"])
        return cls(**data)


@dataclass(frozen=True, eq=False)
class GridInstance:
    obstacles: np.ndarray  # (height, width) bool
    start: tuple
    goal: tuple

    @property
    def height(self) -> int:
        return self.obstacles.shape[0]

    @property
    def width(self) -> int:
        return self.obstacles.shape[1]

    def cell(self, rc) -> int:
        return int(rc[0]) * self.width + int(rc[1])

    def to_dict(self) -> dict:
        return {"obstacles": self.obstacles.astype(int).tolist(), "start": list(self.start), "goal": list(self.goal)}

    @classmethod
    def from_dict(cls, data: dict) -> "GridInstance":
        return cls(np.array(data["obstacles"], dtype=bool), tuple(data["start"]), tuple(data["goal"]))


def generate(spec: GridSpec) -> GridInstance:
    """Draw the goal column and then the obstacle mask from ``default_rng(seed)``."""
    rng = np.random.default_rng(spec.seed)
    alpha = int(rng.integers(spec.width)) if spec.randomize_goal else spec.goal_column
    goal = (0, alpha)
    if goal == spec.start:
        raise ValueError(f"goal {goal} coincides with the start cell")
    obstacles = rng.random((spec.height, spec.width)) < spec.density
    obstacles[spec.start] = False
    obstacles[goal] = False
    return GridInstance(obstacles, spec.start, goal)


def _cell_dynamics(grid: GridInstance, slip: float):
    """Sparse (cells*4, cells) move probabilities and (cells, 4) goal-hit probabilities."""
    H, W = grid.obstacles.shape
    n = H * W
    cells = np.arange(n)
    rows, cols = np.divmod(cells, W)
    target = np.empty((n, 4), dtype=int)
    for a, (dr, dc) in enumerate(MOVES):
        r = rows + dr
        c = cols + dc
        off = (r < 0) | (r >= H) | (c < 0) | (c >= W)
        target[:, a] = np.where(off, cells, r * W + c)
    # entry (x, a, b): intended move a, realized direction b
    prob = np.full((4, 4), slip / 4.0) + np.eye(4) * (1.0 - slip)
    src = np.repeat(cells * 4, 16) + np.tile(np.repeat(np.arange(4), 4), n)
    dst = np.broadcast_to(target[:, None, :], (n, 4, 4)).ravel()
    val = np.tile(prob.ravel(), n)
    goal = grid.cell(grid.goal)
    into_goal = dst == goal
    hit = np.zeros(n * 4)
    np.add.at(hit, src[into_goal], val[into_goal])
    keep = ~into_goal & (src // 4 != goal)
    move = sp.csr_matrix((val[keep], (src[keep], dst[keep])), shape=(n * 4, n))
    hit = hit.reshape(n, 4)
    hit[goal] = 0.0
    return move, hit


def compile_cmdp(grid: GridInstance, spec: GridSpec, mode: str = "assume_proper", check: bool = True) -> TransientCmdp:
    """Build the CMDP for ``grid``.

    ``assume_proper`` keeps one state per cell and relies on slips to make
    every policy terminate. ``timeout_augment`` tracks time ``t < horizon`` in
    the state (index ``t * cells + cell``); at ``t = horizon - 1`` every action
    terminates, so the horizon is an exact bound on the stopping time.
    The goal cell is kept as an inert state whose rows terminate at zero cost.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    cell_p, hit = _cell_dynamics(grid, spec.slip)
    n = grid.obstacles.size
    goal = grid.cell(grid.goal)
    cost = spec.step_cost - spec.goal_reward * hit
    cost[goal] = 0.0
    d = spec.obstacle_cost * grid.obstacles.ravel().astype(float)
    if mode == "assume_proper":
        mdp = TransientCmdp(n, 4, cell_p, cost, d, grid.cell(grid.start), spec.threshold, spec.horizon,
                            name=f"grid{spec.height}x{spec.width}-rho{spec.density:g}-seed{spec.seed}")
    else:
        T = spec.horizon
        # block (t, t+1) carries the cell dynamics; the last block row is empty
        shift = sp.diags([np.ones(T - 1)], [1], shape=(T, T), format="csr")
        P = sp.kron(shift, cell_p, format="csr")
        mdp = TransientCmdp(n * T, 4, P, np.tile(cost, (T, 1)), np.tile(d, T), grid.cell(grid.start),
                            spec.threshold, T,
                            name=f"grid{spec.height}x{spec.width}-rho{spec.density:g}-seed{spec.seed}-T{T}")
    if check:
        diag = validate(mdp)
        if not diag.ok:
            raise ValueError(f"compiled grid failed validation: {diag.to_dict()}")
    return mdp


def build(spec: GridSpec, mode: str = "assume_proper"):
    grid = generate(spec)
    return grid, compile_cmdp(grid, spec, mode)


def cell_policy(mdp: TransientCmdp, grid: GridInstance, policy: np.ndarray, t: int = 0) -> np.ndarray:
    """Rows of ``policy`` for the cells at time layer ``t`` (layer 0 for unaugmented grids)."""
    n = grid.obstacles.size
    return np.asarray(policy)[t * n:(t + 1) * n]


def augment_reachability(mdp: TransientCmdp, hazard_mask) -> TransientCmdp:
    """Track whether the hazard set has been entered yet.

    State ``s * S + x`` carries a flag ``s``; the flag starts at 1, drops to 0
    after leaving a hazard state and the constraint cost ``s * d(x)`` is only
    charged while it is set. The initial state is ``S + x0``.
    """
    S, A = mdp.shape
    hazard = np.asarray(hazard_mask, dtype=bool)
    if hazard.shape != (S,):
        raise ValueError(f"hazard mask shape {hazard.shape} != {(S,)}")
    P = mdp.transition
    # flag 0 layer stays in layer 0; flag 1 layer moves to layer 0 from hazards
    keep = np.repeat(~hazard, A).astype(float)
    from_one_stay = sp.diags(keep) @ P
    from_one_drop = sp.diags(1.0 - keep) @ P
    zero = sp.csr_matrix((S * A, S))
    top = sp.hstack([P, zero])
    bottom = sp.hstack([from_one_drop, from_one_stay])
    P_hat = sp.vstack([top, bottom], format="csr")
    cost = np.vstack([mdp.cost, mdp.cost])
    d = np.concatenate([np.zeros(S), mdp.constraint_cost])
    return TransientCmdp(2 * S, A, P_hat, cost, d, S + mdp.initial_state, mdp.threshold, mdp.horizon_bound,
                         name=f"{mdp.name}-reach")


def render(grid: GridInstance, policy: np.ndarray | None = None) -> str:
    """ASCII map: ``#`` obstacle, ``S`` start, ``G`` goal, arrows for a per-cell policy."""
    H, W = grid.obstacles.shape
    lines = []
    for r in range(H):
        chars = []
        for c in range(W):
            if (r, c) == grid.goal:
                chars.append("G")
            elif (r, c) == grid.start:
                chars.append("S")
            elif grid.obstacles[r, c]:
                chars.append("#")
            elif policy is not None:
                chars.append(ARROWS[int(np.argmax(policy[r * W + c]))])
            else:
                chars.append(".")
        lines.append("".join(chars))
    return "\n".join(lines)
