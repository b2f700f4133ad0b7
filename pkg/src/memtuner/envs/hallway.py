"""Hallway: remember the start-room object, enter the matching branch.

A 3x3 start room holds one target object. A corridor of `length` cells runs
east with four branch hallways at fixed offsets; each branch displays a
distinct object at its entrance and ends three cells north at a terminal
cell. Stepping onto the terminal cell of the branch whose display matches
the target succeeds; any other terminal fails. The target is only visible
inside the start room, so the choice requires recall. Each visit to a
branch entrance (facing east, about to commit or pass) is a decision step q
annotated with the pair (1, q): timestep 1 still shows the target.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .base import EMPTY, GOAL, ITEM_TYPES, N_COLORS, TURN_LEFT, TURN_RIGHT, FORWARD, GridEnv

N_BRANCHES = 4
FULL_LENGTH = 30
FULL_HORIZON = 145


@dataclass
class HallwayParams:
    length: int = 6

    def validate(self) -> None:
        if self.length < 6:
            raise ValueError(f"hallway length must be >= 6, got {self.length}")


class HallwayEnv(GridEnv):
    task = "hallway"

    def __init__(self, params: HallwayParams, seed: int):
        params.validate()
        self.params = params
        length = params.length
        horizon = math.ceil(FULL_HORIZON * length / FULL_LENGTH)
        super().__init__(width=length + 4, height=7, horizon=horizon, seed=seed)

        # start room interior (0..2, 3..5) and corridor row y=4
        for y in range(3, 6):
            for x in range(3):
                self.set_cell(x, y, EMPTY)
        for x in range(3, length + 3):
            self.set_cell(x, 4, EMPTY)

        # branch entrances sit at corridor offsets spread over [2, length-1];
        # the minimum offset keeps the start room outside every later view
        offsets = [2 + (k * (length - 3)) // (N_BRANCHES - 1) for k in range(N_BRANCHES)]
        self.entrances = [3 + off for off in offsets]

        combos = [(t, c) for t in ITEM_TYPES for c in range(N_COLORS)]
        picks = self.rng.choice(len(combos), size=N_BRANCHES, replace=False)
        self.match_index = int(self.rng.integers(N_BRANCHES))
        self.target = combos[picks[self.match_index]]

        for k, bx in enumerate(self.entrances):
            for y in (1, 2, 3):
                self.set_cell(bx, y, EMPTY)
            obj, color = combos[picks[k]]
            self.set_cell(bx, 3, obj, color)
            self.set_cell(bx, 1, GOAL)

        self.set_cell(1, 3, *self.target)
        self.agent_x, self.agent_y = 1, 4
        self.heading = 3  # facing the target
        self._decided: set[int] = set()

    def transition(self, action: int) -> None:
        x0, y0, h0 = self._pre_step
        if y0 == 4 and h0 == 0 and x0 in self.entrances and x0 not in self._decided:
            self._decided.add(x0)
            self.pairs.add((1, self.t))
        if self.agent_y == 1 and self.agent_x in self.entrances:
            match = self.agent_x == self.entrances[self.match_index]
            self.finish(match, "success" if match else "wrong-choice")

    def expert_action(self) -> int:
        if self.t == 0:
            return TURN_RIGHT
        if self.heading == 0:
            if self.agent_x == self.entrances[self.match_index]:
                return TURN_LEFT
            return FORWARD
        return FORWARD
