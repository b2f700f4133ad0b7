"""Counting: track how often each object has appeared across gallery rooms.

The agent traverses a linear sequence of rooms, one room per step. A room is
either a gallery (up to six distinct objects on display, each slot empty
with a configured probability) or a query room (probability `query_freq`)
showing one query object above a left and a right door. The correct door
depends on the parity of the object's prior gallery appearances: even goes
left, odd goes right. A wrong door (or a non-door action at a query) ends
the episode. Query steps q are annotated with (p, q) for every prior
gallery step p whose room contained the query object.
"""
from __future__ import annotations

from dataclasses import dataclass

from .base import DOOR, EMPTY, ITEM_TYPES, N_COLORS, SELECT_LEFT, SELECT_RIGHT, FORWARD, GridEnv

GALLERY_SLOTS = ((2, 2), (2, 3), (2, 4), (3, 2), (3, 3), (3, 4))
FULL_ROOMS = 20
FULL_HORIZON = 140


@dataclass
class CountingParams:
    n_rooms: int = 8
    query_freq: float = 0.3
    empty_freq: float = 0.1

    def validate(self) -> None:
        if self.n_rooms < 1:
            raise ValueError("counting needs at least one room")
        if not 0.0 <= self.query_freq <= 1.0 or not 0.0 <= self.empty_freq < 1.0:
            raise ValueError("frequencies must lie in [0, 1]")


class CountingEnv(GridEnv):
    task = "counting"

    def __init__(self, params: CountingParams, seed: int):
        params.validate()
        self.params = params
        horizon = max(params.n_rooms, -(-FULL_HORIZON * params.n_rooms // FULL_ROOMS))
        super().__init__(width=5, height=5, horizon=horizon, seed=seed)
        for y in range(1, 4):
            for x in range(1, 4):
                self.set_cell(x, y, EMPTY)
        self.agent_x, self.agent_y = 2, 2
        self.heading = 3

        combos = [(t, c) for t in ITEM_TYPES for c in range(N_COLORS)]
        self.rooms: list[dict] = []
        seen_counts: dict[tuple[int, int], int] = {}
        for i in range(params.n_rooms):
            if self.rng.random() < params.query_freq:
                if seen_counts:
                    keys = sorted(seen_counts)
                    obj = keys[int(self.rng.integers(len(keys)))]
                else:
                    obj = combos[int(self.rng.integers(len(combos)))]
                count = seen_counts.get(obj, 0)
                self.rooms.append({"kind": "query", "object": obj, "count": count})
            else:
                filled = self.rng.random(len(GALLERY_SLOTS)) >= params.empty_freq
                picks = self.rng.choice(len(combos), size=int(filled.sum()), replace=False)
                items = [combos[p] for p in picks]
                self.rooms.append({"kind": "gallery", "slots": filled, "items": items})
                for obj in items:
                    seen_counts[obj] = seen_counts.get(obj, 0) + 1

    def movement_allowed(self) -> bool:
        return True

    def overlay(self, obs) -> None:
        room = self.rooms[self.t] if self.t < len(self.rooms) else None
        if room is None:
            return
        if room["kind"] == "gallery":
            items = iter(room["items"])
            for slot, filled in zip(GALLERY_SLOTS, room["slots"]):
                if filled:
                    obj, color = next(items)
                    obs[slot] = (obj, color, 0)
        else:
            obs[3, 3] = (*room["object"], 0)
            obs[4, 2] = (DOOR, 0, 1)
            obs[4, 4] = (DOOR, 0, 1)

    def transition(self, action: int) -> None:
        room = self.rooms[self.t]
        if room["kind"] == "query":
            for p, prior in enumerate(self.rooms[: self.t]):
                if prior["kind"] == "gallery" and room["object"] in prior["items"]:
                    self.pairs.add((p, self.t))
            correct = SELECT_LEFT if room["count"] % 2 == 0 else SELECT_RIGHT
            if action != correct:
                self.finish(False, "wrong-choice")
                return
        if self.t == len(self.rooms) - 1 and self.result is None:
            self.finish(True, "success")

    def expert_action(self) -> int:
        room = self.rooms[self.t]
        if room["kind"] == "query":
            return SELECT_LEFT if room["count"] % 2 == 0 else SELECT_RIGHT
        return FORWARD
