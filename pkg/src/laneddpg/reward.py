"""Per-step penalty terms: smoothness, elapsed time, and lateral deviation.

All terms are non-positive. Crossing the deviation threshold switches to an
amplified branch scaled by 10/(1 - gamma) so a single boundary violation
outweighs anything accumulated while lingering inside the lane.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction


@dataclass(frozen=True)
class RewardWeights:
    yaw_rate: float = 10.0        # per rad/s
    yaw_accel: float = 5.0        # per rad/s^2
    time: float = 0.075           # per s
    deviation: float = 1.0        # per m
    deviation_threshold: float = 3.6   # m, equals the lane width
    gamma: float = 0.98           # shared with the learner

    def __post_init__(self):
        if min(self.yaw_rate, self.yaw_accel, self.time, self.deviation) < 0:
            raise ValueError("reward weights must be >= 0")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must satisfy 0 <= gamma < 1")
        if self.deviation_threshold <= 0:
            raise ValueError("deviation threshold must be positive")

    @property
    def amplification(self) -> float:
        """Threshold-crossing factor 10/(1 - gamma).

        gamma originates as decimal text; forming 1 - gamma through its
        decimal value (rather than its nearest binary float) keeps the
        factor exact for round settings, e.g. gamma = 0.98 -> exactly 500.
        """
        return float(10 / (1 - Fraction(str(self.gamma))))


@dataclass(frozen=True)
class RewardBreakdown:
    smoothness: float
    time_cost: float
    deviation: float
    total: float


def smoothness_reward(yaw_rate: float, yaw_accel: float,
                      w: RewardWeights) -> float:
    return -w.yaw_rate * abs(yaw_rate) - w.yaw_accel * abs(yaw_accel)


def time_penalty(dt: float, w: RewardWeights) -> float:
    if dt < 0:
        raise ValueError("dt must be >= 0")
    return -w.time * dt


def deviation_reward(lateral_deviation: float, w: RewardWeights) -> float:
    """Linear penalty inside the threshold, amplified by 10/(1-gamma) at or
    beyond it (equality goes to the amplified branch)."""
    magnitude = abs(lateral_deviation)
    if magnitude < w.deviation_threshold:
        return -w.deviation * magnitude
    return -w.deviation * magnitude * w.amplification


def total_reward(yaw_rate: float, yaw_accel: float, lateral_deviation: float,
                 dt: float, w: RewardWeights) -> RewardBreakdown:
    r_s = smoothness_reward(yaw_rate, yaw_accel, w)
    r_e = time_penalty(dt, w)
    r_d = deviation_reward(lateral_deviation, w)
    return RewardBreakdown(smoothness=r_s, time_cost=r_e, deviation=r_d,
                           total=r_s + r_e + r_d)
