"""Policy evaluation: closed-loop rollouts, success-rate statistics with 90%
confidence intervals, Welch's t-test, and attention heatmap export.

The t distribution is computed locally (continued-fraction regularized
incomplete beta, accurate to ~1e-10) so reports do not depend on an external
stats stack.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import envs
from .data import Trajectory, episode_seed
from .model import Transformer
from .trainer import build_expert_matrix


# ---------------------------------------------------------------------------
# t distribution from scratch


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the regularized incomplete beta (Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-14:
            return h
    raise RuntimeError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, dof: float) -> float:
    if t == 0.0:
        return 0.5
    x = dof / (dof + t * t)
    tail = 0.5 * betainc(dof / 2.0, 0.5, x)
    return 1.0 - tail if t > 0 else tail


def student_t_quantile(p: float, dof: float) -> float:
    """Inverse CDF by bisection; supports p in (0.5, 1)."""
    if not 0.5 < p < 1.0:
        raise ValueError("quantile implemented for p in (0.5, 1)")
    lo, hi = 0.0, 1.0
    while student_t_cdf(hi, dof) < p:
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("quantile bracket failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if student_t_cdf(mid, dof) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# statistics over per-seed success rates


@dataclass
class WelchResult:
    t: float
    dof: float
    p: float
    degenerate: bool = False


def welch_t_test(sample_a, sample_b) -> WelchResult:
    """Welch statistic with Welch-Satterthwaite dof and a two-sided p-value."""
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least 2 values")
    va = a.var(ddof=1) / len(a)
    vb = b.var(ddof=1) / len(b)
    if va + vb == 0.0:
        if a.mean() == b.mean():
            return WelchResult(t=0.0, dof=float(len(a) + len(b) - 2), p=1.0, degenerate=True)
        sign = 1.0 if a.mean() > b.mean() else -1.0
        return WelchResult(t=sign * math.inf, dof=float(len(a) + len(b) - 2), p=0.0, degenerate=True)
    t = (a.mean() - b.mean()) / math.sqrt(va + vb)
    dof = (va + vb) ** 2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    p = 2.0 * (1.0 - student_t_cdf(abs(t), dof))
    return WelchResult(t=float(t), dof=float(dof), p=float(min(max(p, 0.0), 1.0)))


def aggregate(rates) -> tuple[float, float]:
    """Mean and 90% confidence half-width (Student t over per-seed rates)."""
    rates = np.asarray(rates, dtype=float)
    if len(rates) < 2:
        raise ValueError("need at least 2 per-seed rates")
    if np.all(rates == rates[0]):
        return float(rates[0]), 0.0
    mean = float(rates.mean())
    s = float(rates.std(ddof=1))
    half = student_t_quantile(0.95, len(rates) - 1) * s / math.sqrt(len(rates))
    return mean, float(half)


@dataclass
class RunReport:
    task: str
    method: str
    seeds: list[int]
    rates: list[float]
    mean: float
    ci90: float
    p_value: float | None = None

    @classmethod
    def from_rates(cls, task: str, method: str, seeds, rates, baseline: "RunReport | None" = None):
        mean, ci = aggregate(rates)
        p = None
        if baseline is not None:
            p = welch_t_test(rates, baseline.rates).p
        return cls(task=task, method=method, seeds=list(seeds), rates=[float(r) for r in rates],
                   mean=mean, ci90=ci, p_value=p)

    def csv_row(self) -> list[str]:
        return [
            self.task,
            self.method,
            ";".join(str(s) for s in self.seeds),
            ";".join(f"{r:.6f}" for r in self.rates),
            f"{self.mean:.6f}",
            f"{self.ci90:.6f}",
            "" if self.p_value is None else f"{self.p_value:.6g}",
        ]

    def text_block(self) -> str:
        lines = [
            f"task: {self.task}  method: {self.method}",
            f"seeds: {self.seeds}",
            f"success rates: {['%.3f' % r for r in self.rates]}",
            f"mean: {self.mean * 100:.1f}% +/- {self.ci90 * 100:.1f} (90% CI)",
        ]
        if self.p_value is not None:
            lines.append(f"Welch p vs baseline: {self.p_value:.4g}")
        return "\n".join(lines)


REPORT_CSV_COLUMNS = ["task", "method", "seeds", "rates", "mean", "ci90", "welch_p"]


# ---------------------------------------------------------------------------
# closed-loop rollouts


def run_episode(model: Transformer, env: envs.GridEnv) -> envs.EpisodeResult:
    """Greedy closed loop: grow the context one step at a time."""
    observations = [env.observation()]
    actions: list[int] = []
    result = None
    with ad.no_grad():
        while result is None:
            obs = np.asarray(observations, dtype=np.uint8)[None]
            acts = np.asarray(actions, dtype=np.int64)[None]
            out = model.forward(obs, acts, train=False)
            action = model.predict_action(out, len(observations) - 1)
            next_obs, done, result = env.step(action)
            actions.append(action)
            if not done:
                observations.append(next_obs)
    return result


def rollout(model: Transformer, task: str, params, n_trials: int, seed: int) -> float:
    """Success rate of the greedy policy over n_trials seeded episodes."""
    params = envs.coerce_params(task, params)
    wins = 0
    for trial in range(n_trials):
        env = envs.make(task, params, episode_seed(seed, trial))
        if env.horizon > model.config.max_seq_len:
            raise ValueError(
                f"task horizon {env.horizon} exceeds model max_seq_len {model.config.max_seq_len}"
            )
        if run_episode(model, env).success:
            wins += 1
    return wins / n_trials


class ExpertPolicy:
    """Adapter exposing the scripted expert through the rollout interface."""

    def success_rate(self, task: str, params, n_trials: int, seed: int) -> float:
        params = envs.coerce_params(task, params)
        wins = 0
        for trial in range(n_trials):
            env = envs.make(task, params, episode_seed(seed, trial))
            result = None
            while result is None:
                _, _, result = env.step(env.expert_action())
            wins += int(result.success)
        return wins / n_trials


# ---------------------------------------------------------------------------
# heatmap export


def _write_pgm(path: Path, matrix: np.ndarray) -> None:
    values = np.round(255.0 * np.clip(matrix, 0.0, 1.0)).astype(np.uint8)
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(values.tobytes())


def _write_csv_matrix(path: Path, matrix: np.ndarray) -> None:
    with open(path, "w") as f:
        for row in matrix:
            f.write(",".join(f"{v:.17g}" for v in row) + "\n")


def export_heatmaps(model: Transformer, trajectory: Trajectory, outdir) -> list[Path]:
    """Write per-layer/head softmax attention and supervised sigma maps.

    Files are named L{layer}H{head}.pgm/.csv; sigma maps of the supervised
    heads get a _supervised suffix. Returns the written paths.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    obs = trajectory.observations[None]
    acts = trajectory.actions[None]
    with ad.no_grad():
        out = model.forward(obs, acts, train=False, want_attention=True)
        sigma = 1.0 / (1.0 + np.exp(-out.supervised_logits.data[0]))
    written = []
    for layer, attn in enumerate(out.attentions):
        for head in range(attn.shape[1]):
            stem = outdir / f"L{layer}H{head}"
            _write_pgm(stem.with_suffix(".pgm"), attn[0, head])
            _write_csv_matrix(stem.with_suffix(".csv"), attn[0, head])
            written += [stem.with_suffix(".pgm"), stem.with_suffix(".csv")]
    sup_layer = model.config.supervised_layer
    for idx, head in enumerate(model.config.supervised_heads):
        stem = outdir / f"L{sup_layer}H{head}_supervised"
        _write_pgm(stem.with_suffix(".pgm"), sigma[idx])
        _write_csv_matrix(stem.with_suffix(".csv"), sigma[idx])
        written += [stem.with_suffix(".pgm"), stem.with_suffix(".csv")]
    return written


def attention_mass_ratio(model: Transformer, trajectories: list[Trajectory]) -> float:
    """Mean supervised-head attention at annotated token coordinates divided
    by the mean over the other causal coordinates (diagonal excluded)."""
    on_total = on_count = off_total = off_count = 0.0
    with ad.no_grad():
        for traj in trajectories:
            out = model.forward(traj.observations[None], traj.actions[None],
                                train=False, want_attention=True)
            attn = out.attentions[model.config.supervised_layer][0, model.config.supervised_heads[0]]
            s = attn.shape[0]
            expert = build_expert_matrix(traj.pairs, len(traj)).tokens
            causal = np.tril(np.ones((s, s)), k=-1)
            on = expert > 0
            off = (causal > 0) & ~on
            on_total += attn[on].sum()
            on_count += on.sum()
            off_total += attn[off].sum()
            off_count += off.sum()
    if on_count == 0:
        raise ValueError("no annotated coordinates in the given trajectories")
    return (on_total / on_count) / (off_total / off_count)
