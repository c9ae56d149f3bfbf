"""Step-to-difficulty schedules for hard-negative curriculum training.

Level k=1 is the hardest negative, k=num_levels the easiest. The curriculum
strategy feeds easiest-to-hardest in contiguous blocks of equal size (block
boundaries floor(total_steps * m / num_levels), so any remainder lands in
the final, hardest block); reverse mirrors it; random draws i.i.d. uniform
levels per step; fixed holds one level throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError

STRATEGIES = ("curriculum", "reverse", "random", "fixed")


@dataclass(frozen=True)
class Schedule:
    strategy: str
    total_steps: int
    num_levels: int
    seed: int
    fixed_level: int | None
    levels: tuple[int, ...]

    def level_at(self, step: int) -> int:
        """Granularity level for a 1-based step index."""
        if not 1 <= step <= self.total_steps:
            raise ContractError(f"step {step} outside [1, {self.total_steps}]")
        return self.levels[step - 1]

    def blocks(self) -> list[tuple[int, int, int]]:
        """Contiguous (level, first_step, last_step) runs, in order."""
        runs: list[tuple[int, int, int]] = []
        start = 1
        for i in range(1, self.total_steps + 1):
            if i == self.total_steps or self.levels[i] != self.levels[i - 1]:
                runs.append((self.levels[start - 1], start, i))
                start = i + 1
        return runs

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "total_steps": self.total_steps,
            "num_levels": self.num_levels,
            "seed": self.seed,
            "fixed_level": self.fixed_level,
            "blocks": [list(b) for b in self.blocks()],
        }


def _curriculum_levels(total_steps: int, num_levels: int) -> list[int]:
    levels = []
    prev = 0
    for m in range(1, num_levels + 1):
        bound = total_steps * m // num_levels
        levels.extend([num_levels - m + 1] * (bound - prev))
        prev = bound
    return levels


def build_schedule(
    strategy: str,
    total_steps: int,
    num_levels: int = 4,
    seed: int = 0,
    fixed_level: int | None = None,
) -> Schedule:
    if strategy not in STRATEGIES:
        raise ConfigError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    if num_levels < 1:
        raise ConfigError(f"num_levels must be >= 1, got {num_levels}")
    if total_steps < num_levels:
        raise ConfigError(f"total_steps {total_steps} must be >= num_levels {num_levels}")

    if strategy == "curriculum":
        levels = _curriculum_levels(total_steps, num_levels)
    elif strategy == "reverse":
        levels = _curriculum_levels(total_steps, num_levels)[::-1]
    elif strategy == "random":
        rng = np.random.default_rng(seed)
        levels = [int(v) for v in rng.integers(1, num_levels + 1, size=total_steps)]
    else:
        if fixed_level is None:
            raise ConfigError("fixed strategy needs fixed_level")
        if not 1 <= fixed_level <= num_levels:
            raise ConfigError(f"fixed_level {fixed_level} outside [1, {num_levels}]")
        levels = [fixed_level] * total_steps

    return Schedule(
        strategy=strategy,
        total_steps=total_steps,
        num_levels=num_levels,
        seed=seed,
        fixed_level=fixed_level if strategy == "fixed" else None,
        levels=tuple(levels),
    )
