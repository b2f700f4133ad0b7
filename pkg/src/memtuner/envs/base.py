"""Shared gridworld machinery: cells, egocentric views, movement, episodes.

All tasks share a 2D cell grid where each cell carries (object id, color id,
state id) and an agent with position and heading. Observations are 7x7x3
egocentric crops: row 6 is the agent's own rank (the agent sits at view cell
[6][3]), row 0 is six cells ahead, and columns run left to right across the
heading. Cells outside the world render as walls. Tasks may overlay
synthesized content on the base view (query screens, command markers).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# object ids (channel 0), range [0, 10]
EMPTY, WALL, DOOR, ARROW, BALL, BOX, KEY, STAR, RING, GEM, GOAL = range(11)
ITEM_TYPES = (BALL, BOX, KEY, STAR, RING, GEM)  # memorable objects
N_COLORS = 6   # channel 1, range [0, 5]
N_STATES = 3   # channel 2, range [0, 2]

# actions
TURN_LEFT, TURN_RIGHT, FORWARD, SELECT_LEFT, SELECT_RIGHT, INTERACT, NOP = range(7)
N_ACTIONS = 7

# headings: 0 east, 1 south, 2 west, 3 north
DIR_VECTORS = {0: (1, 0), 1: (0, 1), 2: (-1, 0), 3: (0, -1)}

VIEW = 7


@dataclass
class EpisodeResult:
    success: bool
    length: int
    reason: str  # success | wrong-choice | timeout


def view_cell(x: int, y: int, heading: int, f: int, l: int) -> tuple[int, int]:
    """World cell at forward offset f and lateral offset l (positive = right)."""
    if heading == 0:
        return x + f, y + l
    if heading == 1:
        return x - l, y + f
    if heading == 2:
        return x - f, y - l
    return x + l, y - f


class GridEnv:
    """Base episode: owns the grid, the agent, and bookkeeping.

    Subclasses fill the grid in __init__, override transition hooks, provide
    the scripted expert, and append annotation pairs as recall-relevant
    events occur. All randomness is drawn in __init__ from the seed; stepping
    is pure.
    """

    task: str = "base"

    def __init__(self, width: int, height: int, horizon: int, seed: int):
        self.grid = np.zeros((height, width, 3), dtype=np.uint8)
        self.grid[..., 0] = WALL
        self.width = width
        self.height = height
        self.horizon = horizon
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.agent_x = 0
        self.agent_y = 0
        self.heading = 0
        self.t = 0
        self.done = False
        self.result: EpisodeResult | None = None
        self.pairs: set[tuple[int, int]] = set()

    # -- grid helpers --------------------------------------------------------

    def set_cell(self, x: int, y: int, obj: int, color: int = 0, state: int = 0) -> None:
        self.grid[y, x] = (obj, color, state)

    def cell(self, x: int, y: int) -> tuple[int, int, int]:
        if 0 <= x < self.width and 0 <= y < self.height:
            return tuple(self.grid[y, x])
        return (WALL, 0, 0)

    def is_blocked(self, x: int, y: int) -> bool:
        return self.cell(x, y)[0] == WALL

    # -- observation ---------------------------------------------------------

    def observation(self) -> np.ndarray:
        obs = np.zeros((VIEW, VIEW, 3), dtype=np.uint8)
        for r in range(VIEW):
            f = VIEW - 1 - r
            for c in range(VIEW):
                l = c - VIEW // 2
                obs[r, c] = self.cell(*view_cell(self.agent_x, self.agent_y, self.heading, f, l))
        self.overlay(obs)
        return obs

    def overlay(self, obs: np.ndarray) -> None:
        """Task hook: draw synthesized content over the base view."""

    # -- stepping -------------------------------------------------------------

    def movement_allowed(self) -> bool:
        """Task hook: whether turn/forward act on the agent this step."""
        return True

    def step(self, action: int) -> tuple[np.ndarray, bool, EpisodeResult | None]:
        if self.done:
            raise RuntimeError("step() called on a finished episode")
        if not 0 <= action < N_ACTIONS:
            raise ValueError(f"action id {action} out of range [0, {N_ACTIONS})")
        self._pre_step = (self.agent_x, self.agent_y, self.heading)
        if self.movement_allowed():
            if action == TURN_LEFT:
                self.heading = (self.heading - 1) % 4
            elif action == TURN_RIGHT:
                self.heading = (self.heading + 1) % 4
            elif action == FORWARD:
                dx, dy = DIR_VECTORS[self.heading]
                nx, ny = self.agent_x + dx, self.agent_y + dy
                if not self.is_blocked(nx, ny):
                    self.agent_x, self.agent_y = nx, ny
        self.transition(action)
        self.t += 1
        if self.result is None and self.t >= self.horizon:
            self.result = EpisodeResult(success=False, length=self.t, reason="timeout")
        if self.result is not None:
            self.done = True
            return self.observation(), True, self.result
        return self.observation(), False, None

    def transition(self, action: int) -> None:
        """Task hook: apply task rules after movement; set self.result to end."""

    def finish(self, success: bool, reason: str) -> None:
        self.result = EpisodeResult(success=success, length=self.t + 1, reason=reason)

    # -- expert ----------------------------------------------------------------

    def expert_action(self) -> int:
        raise NotImplementedError
