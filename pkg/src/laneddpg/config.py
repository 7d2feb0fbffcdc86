"""Run configuration: every tunable with its default, plus the flat
``key = value`` config-file format. Unknown keys are errors."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .highway import KMH, IdmParams, RoadGeometry, SimConfig
from .reward import RewardWeights


class ConfigError(Exception):
    pass


@dataclass
class Hyperparameters:
    # learner
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    gamma: float = 0.98
    dt: float = 0.1
    tau: float = 0.001
    batch_size: int = 64
    replay_capacity: int = 4000
    action_update_step: int = 1        # k: executed action refresh period
    action_bound: float = 0.1          # a_max, rad/s^2
    hidden1: int = 300
    hidden2: int = 600
    # exploration
    noise_sigma0: float = 0.05         # 0.5 * action_bound
    noise_decay: float = 0.999
    noise_floor: float = 0.002         # 0.02 * action_bound
    # schedule
    episodes: int = 5000
    checkpoint_interval: int = 100
    episode_horizon: float = 60.0      # s without a maneuver -> no_attempt
    seed: int = 0
    # reward
    w_yaw_rate: float = 10.0
    w_yaw_accel: float = 5.0
    w_time: float = 0.075
    w_deviation: float = 1.0
    # simulation
    vehicle_count: int = 12
    lane_width: float = 3.6
    segment_length: float = 600.0
    lane_count: int = 3
    vehicle_length: float = 4.5
    initial_speed_min: float = 0.0
    initial_speed_max: float = 40.0 * KMH
    desired_speed_min: float = 80.0 * KMH
    desired_speed_max: float = 120.0 * KMH
    command_distance: float = 80.0
    idm_accel_max: float = 1.5
    idm_decel_comfort: float = 2.0
    idm_min_spacing: float = 2.0
    idm_time_headway: float = 1.5
    idm_exponent: float = 4.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        positive = ("actor_lr", "critic_lr", "dt", "tau", "batch_size",
                    "replay_capacity", "action_update_step", "action_bound",
                    "hidden1", "hidden2", "episodes", "checkpoint_interval",
                    "episode_horizon", "lane_width", "segment_length",
                    "vehicle_length")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigError("gamma must satisfy 0 <= gamma < 1")
        if self.tau > 1.0:
            raise ConfigError("tau must satisfy 0 < tau <= 1")
        if self.replay_capacity < self.batch_size:
            raise ConfigError("replay_capacity must be >= batch_size")
        if self.action_update_step < 1:
            raise ConfigError("action_update_step must be >= 1")

    def reward_weights(self) -> RewardWeights:
        return RewardWeights(yaw_rate=self.w_yaw_rate,
                             yaw_accel=self.w_yaw_accel,
                             time=self.w_time,
                             deviation=self.w_deviation,
                             deviation_threshold=self.lane_width,
                             gamma=self.gamma)

    def sim_config(self) -> SimConfig:
        road = RoadGeometry(segment_length=self.segment_length,
                            lane_count=self.lane_count,
                            lane_width=self.lane_width)
        idm = IdmParams(accel_max=self.idm_accel_max,
                        decel_comfort=self.idm_decel_comfort,
                        min_spacing=self.idm_min_spacing,
                        time_headway=self.idm_time_headway,
                        exponent=self.idm_exponent)
        return SimConfig(vehicle_count=self.vehicle_count,
                         vehicle_length=self.vehicle_length,
                         initial_speed_range=(self.initial_speed_min,
                                              self.initial_speed_max),
                         desired_speed_range=(self.desired_speed_min,
                                              self.desired_speed_max),
                         command_distance=self.command_distance,
                         road=road, idm=idm)

    def to_text(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)!r}"
                 for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(Hyperparameters)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip().strip("'\"")
    try:
        if kind == "int":
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config_text(text: str, base: Hyperparameters | None = None
                      ) -> Hyperparameters:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    base = base if base is not None else Hyperparameters()
    return dataclasses.replace(base, **values)


def load_config(path, base: Hyperparameters | None = None) -> Hyperparameters:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, base)
