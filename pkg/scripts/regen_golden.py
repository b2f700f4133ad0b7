"""Regenerate the committed golden frame used by the renderer test.

Run only when the rendering palette intentionally changes, then review the
image before committing:

    python3 scripts/regen_golden.py
"""
from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from memtuner import data
from memtuner.envs.command_recall import CommandRecallParams
from memtuner.render import observation_png


def main() -> int:
    ds = data.generate("commandrecall", CommandRecallParams(n_commands=3), n=1, seed=1)
    png = observation_png(ds.trajectories[0].observations[0])
    out = Path(__file__).resolve().parent.parent / "tests" / "golden" / "commandrecall_t0.png"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(png)
    print(f"wrote {out} ({len(png)} bytes)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
