"""Desk-scale trend experiment: attention supervision vs plain cloning.

Trains both methods on one task across several seeds, evaluates greedy
rollouts, and prints per-seed success rates with the aggregate interval.

    python3 scripts/desk_benchmark.py --task commandrecall --seeds 1 2 3
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from memtuner import data, evaluator, profiles
from memtuner.trainer import train


def run_method(task, method, dataset, seeds, prof, trials, epochs=None, verbose=True):
    rates = []
    for seed in seeds:
        cfg = profiles.train_config(prof, task, method, seed=seed)
        if epochs is not None:
            cfg.epochs = epochs
        model_cfg = profiles.model_config(prof, task)
        t0 = time.perf_counter()
        result = train(dataset, model_cfg, cfg)
        train_s = time.perf_counter() - t0
        rate = evaluator.rollout(result.model, task, profiles.env_params(prof, task),
                                 trials, seed=1000 + seed)
        rates.append(rate)
        if verbose:
            last = result.records[-1]
            print(
                f"  {method} seed {seed}: success {rate:.3f}  "
                f"il {last.il_loss:.4f} mem {last.mem_loss:.4f} acc {last.test_action_accuracy:.3f}  "
                f"({train_s:.0f}s train)",
                flush=True,
            )
    return rates


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--task", default="commandrecall", choices=["hallway", "ordering", "counting", "commandrecall"])
    parser.add_argument("--profile", default="desk", choices=["desk", "full"])
    parser.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    parser.add_argument("--demos", type=int, default=None)
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--trials", type=int, default=None)
    args = parser.parse_args()

    prof = args.profile
    demos = args.demos or profiles.demo_count(prof, args.task)
    trials = args.trials or profiles.trial_count(prof, args.task)
    print(f"task={args.task} profile={prof} demos={demos} seeds={args.seeds}", flush=True)

    t0 = time.perf_counter()
    dataset = data.generate(args.task, profiles.env_params(prof, args.task), demos, seed=0)
    print(f"generated {len(dataset)} demonstrations in {time.perf_counter() - t0:.1f}s", flush=True)

    results = {}
    for method in ("attentiontuner", "vanilla"):
        print(f"{method}:", flush=True)
        results[method] = run_method(args.task, method, dataset, args.seeds, prof, trials,
                                     epochs=args.epochs)

    for method, rates in results.items():
        mean, ci = evaluator.aggregate(rates)
        print(f"{method}: mean {mean:.3f} +/- {ci:.3f}, median {sorted(rates)[len(rates) // 2]:.3f}")
    total = time.perf_counter() - t0
    print(f"total wall time: {total / 60:.1f} min")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
