"""Demonstration datasets: generation, a line-delimited file format, and
annotation manipulation (fraction subsampling, endpoint perturbation).

File format (version 1): UTF-8 text, one JSON record per line. Line 1 is
the manifest {kind, format_version, task, params, count, seed}; every
following line is one trajectory {id, task, seed, annotated, actions,
pairs, obs} where obs is base64 of the T*7*7*3 uint8 observation tensor,
row-major and time-major. Keys are sorted and separators fixed, so
save(load(path)) reproduces the file byte for byte.
"""
from __future__ import annotations

import base64
import json
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import envs

FORMAT_VERSION = 1
OBS_SHAPE = (7, 7, 3)


class DatasetError(Exception):
    """Malformed dataset file or record; message names the line and field."""


@dataclass
class Trajectory:
    id: int
    task: str
    seed: int
    observations: np.ndarray  # (T, 7, 7, 3) uint8
    actions: np.ndarray       # (T,) int64
    pairs: list[tuple[int, int]] = field(default_factory=list)
    annotated: bool = False

    def __len__(self) -> int:
        return len(self.actions)

    def validate(self, where: str = "trajectory") -> None:
        n = len(self.actions)
        if self.observations.shape != (n, *OBS_SHAPE):
            raise DatasetError(f"{where}: obs shape {self.observations.shape} does not match {n} actions")
        if n == 0:
            raise DatasetError(f"{where}: empty trajectory")
        if self.actions.min() < 0 or self.actions.max() >= envs.N_ACTIONS:
            raise DatasetError(f"{where}: field 'actions' has id outside [0, {envs.N_ACTIONS})")
        if not self.annotated and self.pairs:
            raise DatasetError(f"{where}: field 'pairs' must be empty when annotated is false")
        for p, q in self.pairs:
            if not 0 <= p < q < n:
                raise DatasetError(f"{where}: field 'pairs' violates 0 <= p < q < {n}: ({p}, {q})")


@dataclass
class DatasetManifest:
    task: str
    params: dict
    count: int
    seed: int
    format_version: int = FORMAT_VERSION


@dataclass
class Dataset:
    manifest: DatasetManifest
    trajectories: list[Trajectory]

    def __len__(self) -> int:
        return len(self.trajectories)

    def validate(self) -> None:
        if self.manifest.count != len(self.trajectories):
            raise DatasetError(
                f"manifest count {self.manifest.count} != {len(self.trajectories)} trajectories"
            )
        for i, traj in enumerate(self.trajectories):
            traj.validate(where=f"record {i} (id {traj.id})")


# ---------------------------------------------------------------------------
# serialization


def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def save(dataset: Dataset, path) -> None:
    """Write atomically: compose in a temp file, then rename over the target."""
    path = Path(path)
    lines = [
        _dump(
            {
                "kind": "manifest",
                "format_version": dataset.manifest.format_version,
                "task": dataset.manifest.task,
                "params": dataset.manifest.params,
                "count": dataset.manifest.count,
                "seed": dataset.manifest.seed,
            }
        )
    ]
    for t in sorted(dataset.trajectories, key=lambda t: t.id):
        lines.append(
            _dump(
                {
                    "id": t.id,
                    "task": t.task,
                    "seed": t.seed,
                    "annotated": t.annotated,
                    "actions": [int(a) for a in t.actions],
                    "pairs": [[int(p), int(q)] for p, q in sorted(t.pairs)],
                    "obs": base64.b64encode(np.ascontiguousarray(t.observations, dtype=np.uint8).tobytes()).decode(),
                }
            )
        )
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write("\n".join(lines) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _require(record: dict, key: str, kind, line: int):
    if key not in record:
        raise DatasetError(f"line {line}: missing field {key!r}")
    value = record[key]
    if not isinstance(value, kind):
        raise DatasetError(f"line {line}: field {key!r} has type {type(value).__name__}")
    return value


def load(path) -> Dataset:
    """Parse and fully validate a dataset file; errors name line and field."""
    path = Path(path)
    with open(path, "r") as f:
        lines = f.read().splitlines()
    if not lines:
        raise DatasetError(f"{path}: empty file")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DatasetError(f"line 1: invalid JSON ({e})") from e
    if head.get("kind") != "manifest":
        raise DatasetError("line 1: first record must be the manifest")
    if head.get("format_version") != FORMAT_VERSION:
        raise DatasetError(f"line 1: unsupported format_version {head.get('format_version')}")
    manifest = DatasetManifest(
        task=_require(head, "task", str, 1),
        params=_require(head, "params", dict, 1),
        count=_require(head, "count", int, 1),
        seed=_require(head, "seed", int, 1),
    )
    trajectories = []
    for lineno, raw in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as e:
            raise DatasetError(f"line {lineno}: invalid JSON ({e})") from e
        actions = np.array(_require(rec, "actions", list, lineno), dtype=np.int64)
        blob = base64.b64decode(_require(rec, "obs", str, lineno))
        expected = len(actions) * int(np.prod(OBS_SHAPE))
        if len(blob) != expected:
            raise DatasetError(f"line {lineno}: field 'obs' has {len(blob)} bytes, expected {expected}")
        observations = np.frombuffer(blob, dtype=np.uint8).reshape(len(actions), *OBS_SHAPE).copy()
        pairs_raw = _require(rec, "pairs", list, lineno)
        pairs = []
        for entry in pairs_raw:
            if not isinstance(entry, list) or len(entry) != 2:
                raise DatasetError(f"line {lineno}: field 'pairs' entries must be [p, q]")
            pairs.append((int(entry[0]), int(entry[1])))
        traj = Trajectory(
            id=_require(rec, "id", int, lineno),
            task=_require(rec, "task", str, lineno),
            seed=_require(rec, "seed", int, lineno),
            observations=observations,
            actions=actions,
            pairs=pairs,
            annotated=_require(rec, "annotated", bool, lineno),
        )
        try:
            traj.validate(where=f"line {lineno}")
        except DatasetError:
            raise
        trajectories.append(traj)
    ds = Dataset(manifest=manifest, trajectories=trajectories)
    ds.validate()
    return ds


# ---------------------------------------------------------------------------
# generation and annotation manipulation


def episode_seed(generation_seed: int, index: int) -> int:
    return (generation_seed * 1_000_003 + index) % (2**31 - 1)


def generate(task: str, params, n: int, seed: int) -> Dataset:
    """Collect n fully annotated expert demonstrations, deterministic in seed."""
    if n < 1:
        raise ValueError("need n >= 1 trajectories")
    params_obj = envs.coerce_params(task, params)
    trajectories = []
    for i in range(n):
        ep_seed = episode_seed(seed, i)
        observations, actions, pairs, result = envs.expert_rollout(task, params_obj, ep_seed)
        if not result.success:
            raise RuntimeError(f"expert failed on {task} seed {ep_seed}")
        trajectories.append(
            Trajectory(
                id=i,
                task=task,
                seed=ep_seed,
                observations=observations,
                actions=actions,
                pairs=sorted(pairs),
                annotated=True,
            )
        )
    manifest = DatasetManifest(task=task, params=envs.params_to_dict(params_obj), count=n, seed=seed)
    return Dataset(manifest=manifest, trajectories=trajectories)


def subsample_annotations(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Keep annotations on round(fraction * n) trajectories, chosen uniformly.

    Rounds half up. The others keep their steps but lose pairs and the
    annotated flag.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    n = len(dataset.trajectories)
    keep_count = int(math.floor(fraction * n + 0.5))
    rng = np.random.default_rng(seed)
    keep = set(rng.permutation(n)[:keep_count].tolist())
    out = []
    for i, t in enumerate(dataset.trajectories):
        if i in keep:
            out.append(replace(t, pairs=list(t.pairs)))
        else:
            out.append(replace(t, pairs=[], annotated=False))
    return Dataset(manifest=replace(dataset.manifest), trajectories=out)


def perturb_pairs(dataset: Dataset, sigma_p: float, sigma_q: float, seed: int) -> Dataset:
    """Add rounded normal noise to pair endpoints, clamp into range, drop
    pairs that no longer satisfy p < q."""
    if sigma_p < 0 or sigma_q < 0:
        raise ValueError("sigmas must be non-negative")
    rng = np.random.default_rng(seed)
    out = []
    for t in dataset.trajectories:
        n = len(t)
        new_pairs = []
        for p, q in t.pairs:
            np_ = p if sigma_p == 0 else int(np.clip(p + round(rng.normal(0.0, sigma_p)), 0, n - 1))
            nq = q if sigma_q == 0 else int(np.clip(q + round(rng.normal(0.0, sigma_q)), 0, n - 1))
            if np_ < nq:
                new_pairs.append((np_, nq))
        out.append(replace(t, pairs=sorted(set(new_pairs))))
    return Dataset(manifest=replace(dataset.manifest), trajectories=out)


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint seeded train/test split by trajectory."""
    if not 0.0 <= test_fraction <= 1.0:
        raise ValueError(f"test_fraction must be in [0, 1], got {test_fraction}")
    n = len(dataset.trajectories)
    n_test = int(round(test_fraction * n))
    perm = np.random.default_rng(seed).permutation(n)
    test_ids = set(perm[:n_test].tolist())
    train = [t for i, t in enumerate(dataset.trajectories) if i not in test_ids]
    test = [t for i, t in enumerate(dataset.trajectories) if i in test_ids]
    return (
        Dataset(replace(dataset.manifest, count=len(train)), train),
        Dataset(replace(dataset.manifest, count=len(test)), test),
    )
