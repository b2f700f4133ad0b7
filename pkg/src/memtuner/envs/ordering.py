"""Ordering: remember the order objects appeared, answer earlier/later queries.

Phase 1 walks the agent down a corridor of `length` cells past `n_objects`
distinct colored objects placed at distinct side positions; each becomes
visible at a known timestep as it enters the 7-cell-deep view. Phase 2 poses
`n_objects` queries, one per step: two previously seen objects appear above
a left and a right door, and the correct door is the one under the object
sighted earlier. Any wrong door (or a non-door action at a query) ends the
episode. Episodes always span exactly length + n_objects steps, and each
query step q is annotated with pairs (p, q) for both queried objects, where
p is the object's first-sighting timestep.
"""
from __future__ import annotations

from dataclasses import dataclass

from .base import DOOR, EMPTY, ITEM_TYPES, N_COLORS, SELECT_LEFT, SELECT_RIGHT, FORWARD, GridEnv

VIEW_DEPTH = 6  # objects enter the view this many cells ahead


@dataclass
class OrderingParams:
    length: int = 12
    n_objects: int = 6

    def validate(self) -> None:
        combos = len(ITEM_TYPES) * N_COLORS
        if self.n_objects < 2:
            raise ValueError("ordering needs at least 2 objects to query")
        if self.n_objects > combos:
            raise ValueError(f"n_objects={self.n_objects} exceeds {combos} distinct type/color combos")
        if self.n_objects > self.length - VIEW_DEPTH:
            raise ValueError(
                f"n_objects={self.n_objects} does not fit corridor length {self.length}"
                f" (needs length >= n_objects + {VIEW_DEPTH})"
            )


class OrderingEnv(GridEnv):
    task = "ordering"

    def __init__(self, params: OrderingParams, seed: int):
        params.validate()
        self.params = params
        length, s = params.length, params.n_objects
        super().__init__(width=length + 3, height=5, horizon=length + s, seed=seed)

        for x in range(1, length + 2):
            self.set_cell(x, 2, EMPTY)

        # side positions at corridor offsets [VIEW_DEPTH-1, length-2]: every
        # object is first sighted at a distinct step and none is visible from
        # the query position at the corridor end
        slots = self.rng.choice(
            range(VIEW_DEPTH - 1, length - 1), size=s, replace=False
        )
        self.offsets = sorted(int(v) for v in slots)
        combos = [(t, c) for t in ITEM_TYPES for c in range(N_COLORS)]
        picks = self.rng.choice(len(combos), size=s, replace=False)
        self.objects = [combos[i] for i in picks]
        self.first_seen = [max(0, off - (VIEW_DEPTH - 1)) for off in self.offsets]
        for off, (obj, color) in zip(self.offsets, self.objects):
            self.set_cell(2 + off, 1, obj, color)

        # queries: object index pairs with randomized left/right placement
        self.queries = []
        for _ in range(s):
            a, b = self.rng.choice(s, size=2, replace=False)
            self.queries.append((int(a), int(b)))

        self.agent_x, self.agent_y = 1, 2
        self.heading = 0
        self.phase2_start = length

    def movement_allowed(self) -> bool:
        return self.t < self.phase2_start

    def _current_query(self) -> tuple[int, int] | None:
        i = self.t - self.phase2_start
        if 0 <= i < len(self.queries):
            return self.queries[i]
        return None

    def overlay(self, obs) -> None:
        q = self._current_query()
        if q is None:
            return
        left, right = q
        obs[3, 2] = (*self.objects[left], 0)
        obs[3, 4] = (*self.objects[right], 0)
        obs[4, 2] = (DOOR, 0, 1)
        obs[4, 4] = (DOOR, 0, 1)

    def transition(self, action: int) -> None:
        q = self._current_query()
        if q is None:
            return
        left, right = q
        self.pairs.add((self.first_seen[left], self.t))
        self.pairs.add((self.first_seen[right], self.t))
        correct = SELECT_LEFT if self.first_seen[left] < self.first_seen[right] else SELECT_RIGHT
        if action != correct:
            self.finish(False, "wrong-choice")
        elif self.t - self.phase2_start == len(self.queries) - 1:
            self.finish(True, "success")

    def expert_action(self) -> int:
        q = self._current_query()
        if q is None:
            return FORWARD
        left, right = q
        return SELECT_LEFT if self.first_seen[left] < self.first_seen[right] else SELECT_RIGHT
