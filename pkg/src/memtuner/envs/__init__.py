"""Procedurally generated partially observable memory tasks.

Four tasks share the same observation/action interface: 7x7x3 egocentric
integer grids and seven discrete actions. Each ships a scripted expert that
solves every seed and annotates which earlier timesteps its decisions
recall.
"""
from __future__ import annotations

from dataclasses import asdict

import numpy as np

from .base import EpisodeResult, GridEnv, N_ACTIONS
from .command_recall import CommandRecallEnv, CommandRecallParams
from .counting import CountingEnv, CountingParams
from .hallway import HallwayEnv, HallwayParams
from .ordering import OrderingEnv, OrderingParams

TASKS = {
    "hallway": (HallwayEnv, HallwayParams),
    "ordering": (OrderingEnv, OrderingParams),
    "counting": (CountingEnv, CountingParams),
    "commandrecall": (CommandRecallEnv, CommandRecallParams),
}

__all__ = [
    "TASKS",
    "N_ACTIONS",
    "EpisodeResult",
    "GridEnv",
    "HallwayParams",
    "OrderingParams",
    "CountingParams",
    "CommandRecallParams",
    "make",
    "make_params",
    "coerce_params",
    "params_to_dict",
    "expert_rollout",
    "expert_pairs",
]


def make_params(task: str, overrides: dict | None = None):
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; choose from {sorted(TASKS)}")
    cls = TASKS[task][1]
    return cls(**(overrides or {}))


def coerce_params(task: str, params):
    """Accept None (defaults), a dict of fields, or an existing params object."""
    if params is None or isinstance(params, dict):
        return make_params(task, params)
    return params


def params_to_dict(params) -> dict:
    return asdict(params)


def make(task: str, params=None, seed: int = 0) -> GridEnv:
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; choose from {sorted(TASKS)}")
    env_cls = TASKS[task][0]
    return env_cls(coerce_params(task, params), seed)


def expert_rollout(task: str, params, seed: int):
    """Run the scripted expert; returns (observations, actions, pairs, result).

    Observations are a (T, 7, 7, 3) uint8 array, actions a (T,) int array,
    pairs the recall annotations accumulated by the environment.
    """
    env = make(task, params, seed)
    observations = [env.observation()]
    actions = []
    result = None
    while result is None:
        a = env.expert_action()
        obs, done, result = env.step(a)
        actions.append(a)
        if not done:
            observations.append(obs)
    return (
        np.array(observations, dtype=np.uint8),
        np.array(actions, dtype=np.int64),
        set(env.pairs),
        result,
    )


def expert_pairs(task: str, params, seed: int, actions=None) -> set[tuple[int, int]]:
    """Recompute a demonstration's annotation pairs by replaying its seed.

    When the recorded action sequence is supplied it is checked against the
    replay; a mismatch means the trajectory was not produced by the expert.
    """
    obs, replay_actions, pairs, result = expert_rollout(task, params, seed)
    if actions is not None and not np.array_equal(np.asarray(actions), replay_actions):
        raise ValueError("trajectory does not match the scripted expert for its seed")
    return pairs
