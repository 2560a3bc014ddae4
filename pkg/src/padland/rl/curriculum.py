from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum


class Stage(str, Enum):
    POSITION_HOLD = "position_hold"
    POSITION_SET = "position_set"


@dataclass(frozen=True)
class CurriculumConfig:
    promotion_return: float = 80.0
    window: int = 20


def curriculum_step(stage: Stage, mean_return: float, threshold: float) -> Stage:
    """Promote hold -> set once the running mean return clears ``threshold``; never demote."""
    if stage is Stage.POSITION_HOLD and mean_return > threshold:
        return Stage.POSITION_SET
    return stage


@dataclass
class Curriculum:
    cfg: CurriculumConfig = field(default_factory=CurriculumConfig)
    stage: Stage = Stage.POSITION_HOLD
    returns: deque = field(default_factory=deque)

    def record(self, episode_return: float) -> bool:
        """Log one finished episode; returns True on promotion."""
        self.returns.append(float(episode_return))
        while len(self.returns) > self.cfg.window:
            self.returns.popleft()
        if len(self.returns) < self.cfg.window:
            return False
        mean = sum(self.returns) / len(self.returns)
        new = curriculum_step(self.stage, mean, self.cfg.promotion_return)
        promoted = new is not self.stage
        if promoted:
            self.returns.clear()
        self.stage = new
        return promoted
