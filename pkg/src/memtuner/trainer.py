"""Training: imitation loss, attention-supervision memory loss, epoch loop.

A demonstration's recall annotations (p, q) become a binary expert matrix:
in timestep space E[q][p] = 1, and in the interleaved token space row 2q,
column 2p (the observation tokens of timesteps q and p). The memory loss is
the mean binary cross entropy between sigma(scaled attention logits) of the
supervised heads and that matrix over the causal (lower-triangular) token
entries. Scaled by lambda and added to the action negative log-likelihood,
it reproduces the plain behavioral-cloning objective exactly when lambda is
zero or a trajectory carries no annotations.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Dataset, split
from .model import ModelConfig, Transformer, TransformerOutput

LOG_COLUMNS = ["epoch", "il_loss", "mem_loss", "total_loss", "test_action_accuracy", "wall_seconds"]
CLAMP = 1e-12


class TrainError(Exception):
    """Aborted training run (non-finite loss, empty dataset)."""


@dataclass
class ExpertAttentionMatrix:
    """Binary recall-supervision target in timestep and token space."""

    timesteps: np.ndarray  # (T, T), E[q][p] = 1 per pair
    tokens: np.ndarray     # (2T, 2T), row 2q / col 2p per pair


def build_expert_matrix(pairs, length: int) -> ExpertAttentionMatrix:
    timesteps = np.zeros((length, length))
    tokens = np.zeros((2 * length, 2 * length))
    for p, q in pairs:
        if not 0 <= p < q < length:
            raise ValueError(f"pair ({p}, {q}) invalid for length {length}")
        timesteps[q, p] = 1.0
        tokens[2 * q, 2 * p] = 1.0
    return ExpertAttentionMatrix(timesteps=timesteps, tokens=tokens)


# ---------------------------------------------------------------------------
# losses


def memory_loss(attn_logits, expert: np.ndarray) -> Tensor:
    """Mean BCE between sigma(logits) and the expert matrix on causal entries.

    attn_logits is (S, S) or (heads, S, S); with several heads the loss is
    averaged across them. Log arguments clamp at 1e-12.
    """
    logits = attn_logits if isinstance(attn_logits, Tensor) else Tensor(attn_logits)
    squeeze = logits.ndim == 2
    if squeeze:
        logits = ad.reshape(logits, (1, *logits.shape))
    k, s, s2 = logits.shape
    if s != s2 or expert.shape != (s, s):
        raise ValueError(f"logits {logits.shape} do not match expert matrix {expert.shape}")
    causal = np.tril(np.ones((s, s)))
    weight = causal / (causal.sum() * k)
    return _bce_weighted(logits, expert[None], weight[None])


def _bce_weighted(logits: Tensor, expert: np.ndarray, weight: np.ndarray) -> Tensor:
    """Sum of weight * BCE(sigma(logits), expert) over all entries."""
    a = ad.clip(ad.sigmoid(logits), CLAMP, 1.0 - CLAMP)
    pos = ad.mul(expert, ad.log(a))
    neg = ad.mul(1.0 - expert, ad.log(ad.affine(a, -1.0, 1.0)))
    return ad.scale(ad.sum_all(ad.mul(ad.add(pos, neg), weight)), -1.0)


def il_loss(action_logits, expert_actions, mask: np.ndarray | None = None) -> Tensor:
    """Mean negative log softmax probability of the expert actions."""
    logits = action_logits if isinstance(action_logits, Tensor) else Tensor(action_logits)
    return ad.softmax_cross_entropy(logits, np.asarray(expert_actions), mask)


def combined_loss(il: Tensor, mem: Tensor | None, lam: float, annotated: bool) -> Tensor:
    """il + lam * mem on annotated trajectories; plain il otherwise."""
    if not annotated or lam == 0.0 or mem is None:
        return il
    return ad.add(il, ad.scale(mem, lam))


# ---------------------------------------------------------------------------
# configuration and batching


@dataclass
class TrainConfig:
    lam: float = 10.0
    batch_size: int = 64
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    epochs: int = 30
    seed: int = 1
    test_fraction: float = 0.1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    il_loss: float
    mem_loss: float
    total_loss: float
    test_action_accuracy: float
    wall_seconds: float


@dataclass
class TrainResult:
    model: Transformer
    records: list[EpochRecord]
    batch_losses: list[float] = field(default_factory=list)


class Batch:
    """Padded trajectory batch with precomputed supervision masks."""

    def __init__(self, trajectories, lam: float):
        self.trajectories = trajectories
        b = len(trajectories)
        t_max = max(len(t) for t in trajectories)
        self.obs = np.zeros((b, t_max, 7, 7, 3), dtype=np.uint8)
        self.actions = np.zeros((b, t_max), dtype=np.int64)
        self.mask = np.zeros((b, t_max), dtype=bool)
        for i, traj in enumerate(trajectories):
            n = len(traj)
            self.obs[i, :n] = traj.observations
            self.actions[i, :n] = traj.actions
            self.mask[i, :n] = True

        self.expert = None
        self.weight = None
        if lam > 0:
            annotated = [t for t in trajectories if t.annotated]
            if annotated:
                s = 2 * t_max
                tril = np.tril(np.ones((s, s)))
                self.expert = np.zeros((b, 1, s, s))
                self.weight = np.zeros((b, 1, s, s))
                for i, traj in enumerate(trajectories):
                    if not traj.annotated:
                        continue
                    si = 2 * len(traj)
                    causal = np.zeros((s, s))
                    causal[:si, :si] = tril[:si, :si]
                    self.weight[i, 0] = causal / (causal.sum() * len(annotated))
                    for p, q in traj.pairs:
                        self.expert[i, 0, 2 * q, 2 * p] = 1.0


def _batch_losses(model: Transformer, batch: Batch, lam: float, *, train: bool,
                  rng: np.random.Generator | None) -> tuple[Tensor, Tensor, Tensor | None]:
    out: TransformerOutput = model.forward(batch.obs, batch.actions, train=train, rng=rng)
    il = il_loss(out.action_logits, batch.actions, batch.mask)
    mem = None
    if batch.weight is not None:
        k = out.supervised_logits.shape[1]
        mem = _bce_weighted(out.supervised_logits, batch.expert, batch.weight / k)
    total = il if mem is None else ad.add(il, ad.scale(mem, lam))
    return total, il, mem


def _test_accuracy(model: Transformer, trajectories, batch_size: int) -> float:
    if not trajectories:
        return float("nan")
    correct = 0
    total = 0
    with ad.no_grad():
        for start in range(0, len(trajectories), batch_size):
            batch = Batch(trajectories[start : start + batch_size], lam=0.0)
            out = model.forward(batch.obs, batch.actions, train=False)
            pred = np.argmax(out.action_logits.data, axis=-1)
            correct += int(((pred == batch.actions) & batch.mask).sum())
            total += int(batch.mask.sum())
    return correct / total


def train(dataset: Dataset, model_config: ModelConfig, config: TrainConfig,
          log_path=None) -> TrainResult:
    """Epoch loop over shuffled padded batches with Adam updates.

    Deterministic in config.seed (init, shuffling, dropout draw from
    separate spawned streams). Appends one CSV row per epoch to log_path
    when given. A non-finite loss aborts with the offending batch id.
    """
    if not dataset.trajectories:
        raise TrainError("dataset is empty")
    root = np.random.SeedSequence(config.seed)
    init_seq, shuffle_seq, dropout_seq = root.spawn(3)
    model = Transformer(model_config, seed=init_seq.generate_state(1)[0])
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)

    train_set, test_set = split(dataset, config.test_fraction, config.seed)
    trajectories = train_set.trajectories
    if not trajectories:
        raise TrainError("no training trajectories after the test split")
    optimizer = ad.Adam(model.params, lr=config.lr, betas=(config.beta1, config.beta2),
                        eps=config.eps, weight_decay=config.weight_decay)

    writer = None
    if log_path is not None:
        log_path = Path(log_path)
        new_file = not log_path.exists()
        log_file = open(log_path, "a", newline="")
        writer = csv.writer(log_file)
        if new_file:
            writer.writerow(LOG_COLUMNS)

    records = []
    batch_losses = []
    start_time = time.perf_counter()
    try:
        for epoch in range(1, config.epochs + 1):
            order = shuffle_rng.permutation(len(trajectories))
            il_sum = mem_sum = total_sum = 0.0
            n_batches = 0
            for bi, start in enumerate(range(0, len(order), config.batch_size)):
                chunk = [trajectories[i] for i in order[start : start + config.batch_size]]
                batch = Batch(chunk, config.lam)
                total, il, mem = _batch_losses(model, batch, config.lam, train=True, rng=dropout_rng)
                value = total.item()
                if not np.isfinite(value):
                    raise TrainError(f"non-finite loss at epoch {epoch}, batch {bi}")
                ad.backward(total)
                optimizer.step()
                optimizer.zero_grad()
                batch_losses.append(value)
                il_sum += il.item()
                mem_sum += mem.item() if mem is not None else 0.0
                total_sum += value
                n_batches += 1
            accuracy = _test_accuracy(model, test_set.trajectories, config.batch_size)
            record = EpochRecord(
                epoch=epoch,
                il_loss=il_sum / n_batches,
                mem_loss=mem_sum / n_batches,
                total_loss=total_sum / n_batches,
                test_action_accuracy=accuracy,
                wall_seconds=time.perf_counter() - start_time,
            )
            records.append(record)
            if writer is not None:
                writer.writerow([record.epoch, repr(record.il_loss), repr(record.mem_loss),
                                 repr(record.total_loss), repr(record.test_action_accuracy),
                                 f"{record.wall_seconds:.3f}"])
    finally:
        if writer is not None:
            log_file.close()
    return TrainResult(model=model, records=records, batch_losses=batch_losses)
