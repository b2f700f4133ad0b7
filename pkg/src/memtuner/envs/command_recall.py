"""CommandRecall: watch a command sequence, then execute it from memory.

A 5x5 arena. During the display phase (steps 0..C-1) one directional command
per step lights up the state channel at a compass position around the view
center; the agent is frozen. After one transition step, each command j gets
a two-step execution window in which the agent must end one cell away in the
commanded direction (turn if needed, then move). A wrong end-of-window
position fails the episode; completing every window succeeds. Commands are
sampled so consecutive directions never reverse (a reversal cannot be
executed in two steps) and never push the agent out of the arena. Window j
ends at step q_j = C + 2*(j+1), annotated with the pair (j, q_j).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .base import ARROW, DIR_VECTORS, EMPTY, FORWARD, NOP, TURN_LEFT, TURN_RIGHT, GridEnv

# view cells marking each commanded direction (east, south, west, north)
ROSE = {0: (3, 4), 1: (4, 3), 2: (3, 2), 3: (2, 3)}
FULL_COMMANDS = 10
FULL_HORIZON = 118


@dataclass
class CommandRecallParams:
    n_commands: int = 5

    def validate(self) -> None:
        if self.n_commands < 1:
            raise ValueError("need at least one command")


class CommandRecallEnv(GridEnv):
    task = "commandrecall"

    def __init__(self, params: CommandRecallParams, seed: int):
        params.validate()
        self.params = params
        c = params.n_commands
        horizon = max(3 * c + 1, math.ceil(FULL_HORIZON * c / FULL_COMMANDS))
        super().__init__(width=7, height=7, horizon=horizon, seed=seed)
        for y in range(1, 6):
            for x in range(1, 6):
                self.set_cell(x, y, EMPTY)
        self.agent_x, self.agent_y = 3, 3
        self.heading = 0

        self.commands: list[int] = []
        self.targets: list[tuple[int, int]] = []
        px, py, prev = 3, 3, 0
        for _ in range(c):
            valid = []
            for d, (dx, dy) in DIR_VECTORS.items():
                if (d - prev) % 4 == 2:
                    continue
                if 1 <= px + dx <= 5 and 1 <= py + dy <= 5:
                    valid.append(d)
            d = valid[int(self.rng.integers(len(valid)))]
            dx, dy = DIR_VECTORS[d]
            px, py = px + dx, py + dy
            self.commands.append(d)
            self.targets.append((px, py))
            prev = d

    # schedule helpers: display [0, C), transition step C, window j covers
    # steps C+1+2j and C+2+2j

    @property
    def n_commands(self) -> int:
        return self.params.n_commands

    def window_index(self, t: int) -> int | None:
        c = self.n_commands
        if t <= c:
            return None
        j = (t - c - 1) // 2
        return j if j < c else None

    def movement_allowed(self) -> bool:
        return self.window_index(self.t) is not None

    def overlay(self, obs) -> None:
        if self.t < self.n_commands:
            d = self.commands[self.t]
            obs[ROSE[d]] = (ARROW, d, 2)

    def transition(self, action: int) -> None:
        c = self.n_commands
        j = self.window_index(self.t)
        if j is None or self.t != c + 2 * (j + 1):
            return
        self.pairs.add((j, self.t))
        if (self.agent_x, self.agent_y) != self.targets[j]:
            self.finish(False, "wrong-choice")
        elif j == c - 1:
            self.finish(True, "success")

    def expert_action(self) -> int:
        j = self.window_index(self.t)
        if j is None:
            return NOP
        d = self.commands[j]
        first = self.t == self.n_commands + 1 + 2 * j
        if first:
            if self.heading == d:
                return FORWARD
            return TURN_RIGHT if (d - self.heading) % 4 == 1 else TURN_LEFT
        if (self.agent_x, self.agent_y) == self.targets[j]:
            return NOP
        return FORWARD
