"""Experiment profiles: every desk/full constant in one table.

The desk profile shrinks environments, demonstration counts, and the model
so a full train+eval cycle runs on a workstation in minutes. The full
profile mirrors the large-scale recipe (d_model 512, 4 layers, per-task
demo counts and epoch budgets) and exists for completeness; running it
takes serious hardware.

Per-task entries:
    env         constructor kwargs for the task's params dataclass
    demos       expert demonstrations to generate
    epochs      (attentiontuner, vanilla) training epochs
    trials      evaluation episodes per seed
Model/optimizer entries hold ModelConfig / TrainConfig overrides.
"""
from __future__ import annotations

from .envs import make_params
from .model import ModelConfig
from .trainer import TrainConfig

DESK = {
    "model": {"d_model": 64, "n_layers": 2, "n_heads": 2, "dropout": 0.1, "max_seq_len": 64},
    "train": {"lr": 1e-3, "batch_size": 64, "test_fraction": 0.1},
    "tasks": {
        "hallway": {"env": {"length": 6}, "demos": 500, "epochs": (30, 30), "trials": 200},
        "ordering": {"env": {"length": 12, "n_objects": 6}, "demos": 500, "epochs": (30, 30), "trials": 200},
        "counting": {"env": {"n_rooms": 8}, "demos": 500, "epochs": (60, 60), "trials": 200},
        "commandrecall": {"env": {"n_commands": 5}, "demos": 1000, "epochs": (30, 30), "trials": 200},
    },
}

FULL = {
    "model": {"d_model": 512, "n_layers": 4, "n_heads": 2, "dropout": 0.1, "max_seq_len": 160},
    "train": {"lr": 1e-4, "batch_size": 64, "test_fraction": 0.1},
    "tasks": {
        "hallway": {"env": {"length": 30}, "demos": 5000, "epochs": (300, 600), "trials": 1000},
        "ordering": {"env": {"length": 50, "n_objects": 18}, "demos": 5000, "epochs": (300, 600), "trials": 1000},
        "counting": {"env": {"n_rooms": 20}, "demos": 10000, "epochs": (600, 600), "trials": 1000},
        "commandrecall": {"env": {"n_commands": 10}, "demos": 4000, "epochs": (300, 600), "trials": 1000},
    },
}

PROFILES = {"desk": DESK, "full": FULL}


def profile(name: str) -> dict:
    if name not in PROFILES:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    return PROFILES[name]


def env_params(profile_name: str, task: str):
    table = profile(profile_name)
    if task not in table["tasks"]:
        raise ValueError(f"unknown task {task!r}")
    return make_params(task, table["tasks"][task]["env"])


def model_config(profile_name: str, task: str, **overrides) -> ModelConfig:
    table = profile(profile_name)
    fields = dict(table["model"])
    fields.update(overrides)
    return ModelConfig(**fields)


def train_config(profile_name: str, task: str, method: str = "attentiontuner", **overrides) -> TrainConfig:
    """Method picks the epoch budget; vanilla additionally forces lambda 0."""
    table = profile(profile_name)
    task_row = table["tasks"][task]
    fields = dict(table["train"])
    at_epochs, vn_epochs = task_row["epochs"]
    if method == "attentiontuner":
        fields.update(epochs=at_epochs)
    elif method == "vanilla":
        fields.update(epochs=vn_epochs, lam=0.0)
    else:
        raise ValueError(f"unknown method {method!r}")
    fields.update(overrides)
    return TrainConfig(**fields)


def demo_count(profile_name: str, task: str) -> int:
    return profile(profile_name)["tasks"][task]["demos"]


def trial_count(profile_name: str, task: str) -> int:
    return profile(profile_name)["tasks"][task]["trials"]
