"""Deterministic straight-highway world.

Three lanes in one direction over a 600 m segment. Ambient vehicles follow
the Intelligent Driver Model on fixed lanes; the ego vehicle is steered
laterally by a yaw-acceleration command and longitudinally by IDM. All
randomness flows through the generator handed to spawn_traffic, so identical
seeds give bit-identical trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

PHASES = ("cruising", "awaiting_gap", "changing", "done", "failed")

YAW_RATE_LIMIT = 0.2        # rad/s, keeps the small-angle regime valid
HEADING_SCALE = 0.2         # rad, observation normalization
SPEED_SCALE = 40.0          # m/s
ACCEL_SCALE = 3.0           # m/s^2
DISTANCE_SCALE = 100.0      # m
REL_SPEED_SCALE = 20.0      # m/s

OBSERVATION_DIM = 10

KMH = 1.0 / 3.6


class SimulationError(Exception):
    pass


class SimConfigurationError(SimulationError):
    pass


class CollisionFault(SimulationError):
    """Bumper-to-bumper spacing reached zero; the episode aborts."""


@dataclass(frozen=True)
class RoadGeometry:
    segment_length: float = 600.0
    lane_count: int = 3
    lane_width: float = 3.6
    curvature: float = 0.0

    def lane_center(self, index: int) -> float:
        return (index + 0.5) * self.lane_width

    def lane_of(self, y: float) -> int:
        return int(np.clip(math.floor(y / self.lane_width), 0,
                           self.lane_count - 1))


@dataclass(frozen=True)
class IdmParams:
    accel_max: float = 1.5      # m/s^2
    decel_comfort: float = 2.0  # m/s^2
    min_spacing: float = 2.0    # m
    time_headway: float = 1.5   # s
    exponent: float = 4.0

    def __post_init__(self):
        for v in (self.accel_max, self.decel_comfort, self.min_spacing,
                  self.time_headway, self.exponent):
            if v <= 0:
                raise SimConfigurationError("IDM parameters must be positive")

    def safe_spacing(self, v: float) -> float:
        return self.min_spacing + v * self.time_headway


@dataclass(frozen=True)
class SimConfig:
    vehicle_count: int = 12              # ambient vehicles, ego extra
    vehicle_length: float = 4.5
    initial_speed_range: tuple = (0.0, 40.0 * KMH)
    desired_speed_range: tuple = (80.0 * KMH, 120.0 * KMH)
    command_distance: float = 80.0       # m traveled before the change command
    road: RoadGeometry = field(default_factory=RoadGeometry)
    idm: IdmParams = field(default_factory=IdmParams)


@dataclass
class Gap:
    leader: int | None
    follower: int | None
    target_lane: int
    lead_spacing: float
    lag_spacing: float


def idm_acceleration(v: float, spacing: float, closing_speed: float,
                     v_desired: float, p: IdmParams) -> float:
    """IDM longitudinal acceleration, clamped to [-2b, a_max].

    ``spacing`` is the bumper gap to the leader (math.inf when free),
    ``closing_speed`` is v_ego - v_leader.
    """
    if spacing <= 0.0:
        raise CollisionFault(f"spacing {spacing:.3f} m <= 0")
    free = 1.0 - (v / v_desired) ** p.exponent
    if math.isinf(spacing):
        interaction = 0.0
    else:
        s_star = p.min_spacing + v * p.time_headway + (
            v * closing_speed / (2.0 * math.sqrt(p.accel_max * p.decel_comfort)))
        s_star = max(s_star, 0.0)
        interaction = (s_star / spacing) ** 2
    a = p.accel_max * (free - interaction)
    return float(np.clip(a, -2.0 * p.decel_comfort, p.accel_max))


class WorldState:
    """Full simulator snapshot. Mutated in place by step_dynamics."""

    def __init__(self, config: SimConfig, x, y, v, psi, omega, lane,
                 desired_speed, ego: int, direction: int,
                 rng: np.random.Generator):
        self.config = config
        self.road = config.road
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.v = np.asarray(v, dtype=np.float64)
        self.psi = np.asarray(psi, dtype=np.float64)
        self.omega = np.asarray(omega, dtype=np.float64)
        self.lane = np.asarray(lane, dtype=np.int64)   # home lane (ambient)
        self.desired_speed = np.asarray(desired_speed, dtype=np.float64)
        self.ego = ego
        self.direction = direction                     # +1 left, -1 right
        self.rng = rng
        self.phase = "cruising"
        self.gap: Gap | None = None
        self.target_lane: int | None = None
        self.maneuver_time = 0.0
        self.sim_time = 0.0
        self.ego_entry_x = float(self.x[ego])
        self.ego_a_long = 0.0

    @property
    def n(self):
        return len(self.x)

    def ego_lane_by_position(self) -> int:
        return self.road.lane_of(float(self.y[self.ego]))

    def lateral_deviation(self) -> float:
        """Signed ego offset from the target-lane centerline (m)."""
        if self.target_lane is None:
            raise SimulationError("no target lane selected")
        return float(self.y[self.ego] - self.road.lane_center(self.target_lane))

    def snapshot(self) -> dict:
        return {
            "x": self.x.copy(), "y": self.y.copy(), "v": self.v.copy(),
            "psi": self.psi.copy(), "omega": self.omega.copy(),
            "phase": self.phase, "maneuver_time": self.maneuver_time,
            "sim_time": self.sim_time,
        }


def spawn_traffic(rng: np.random.Generator, config: SimConfig) -> WorldState:
    """Populate the segment; the ego is a random slot on the middle lane."""
    road = config.road
    n_ambient = config.vehicle_count
    if n_ambient < 0:
        raise SimConfigurationError("vehicle_count must be >= 0")
    per_lane = [n_ambient // road.lane_count] * road.lane_count
    for i in range(n_ambient % road.lane_count):
        per_lane[i] += 1
    middle = road.lane_count // 2
    per_lane[middle] += 1                        # ego slot
    ego_slot = int(rng.integers(0, per_lane[middle]))

    xs, ys, vs, lanes, v0s = [], [], [], [], []
    ego = None
    idm = config.idm
    for lane_idx, count in enumerate(per_lane):
        x = float(rng.uniform(0.0, 30.0))
        for slot in range(count):
            v_init = float(rng.uniform(*config.initial_speed_range))
            v_des = float(rng.uniform(*config.desired_speed_range))
            if slot > 0:
                # the vehicle behind (previous slot) needs a safe gap
                gap = (idm.safe_spacing(vs[-1]) + 10.0
                       + float(rng.uniform(0.0, 40.0)))
                x = xs[-1] + config.vehicle_length + gap
            if x + config.vehicle_length / 2.0 > road.segment_length:
                raise SimConfigurationError(
                    f"cannot place {count} vehicles on lane {lane_idx} "
                    f"within {road.segment_length} m"
                )
            if lane_idx == middle and slot == ego_slot:
                ego = len(xs)
            xs.append(x)
            ys.append(road.lane_center(lane_idx))
            vs.append(v_init)
            v0s.append(v_des)
            lanes.append(lane_idx)

    direction = 1 if rng.uniform() < 0.5 else -1
    if middle + direction >= road.lane_count or middle + direction < 0:
        direction = -direction
    return WorldState(config, xs, ys, vs, np.zeros(len(xs)),
                      np.zeros(len(xs)), lanes, v0s, ego, direction, rng)


def _lane_members(world: WorldState, lane_idx: int, include_ego=True):
    """Vehicle indices occupying a lane, ambient by home lane, ego by y."""
    members = [i for i in range(world.n)
               if i != world.ego and world.lane[i] == lane_idx]
    if include_ego and world.ego_lane_by_position() == lane_idx:
        members.append(world.ego)
    members.sort(key=lambda i: world.x[i])
    return members


def select_gap(world: WorldState) -> Gap | None:
    """Nearest-midpoint qualifying gap on the target lane, else None."""
    if world.phase != "awaiting_gap":
        raise SimulationError("gap selection requires the awaiting_gap phase")
    target = int(world.lane[world.ego]) + world.direction
    members = _lane_members(world, target, include_ego=False)
    length = world.config.vehicle_length
    x_ego = float(world.x[world.ego])
    v_ego = float(world.v[world.ego])
    s0 = world.config.idm.min_spacing

    if not members:
        return Gap(None, None, target, math.inf, math.inf)

    candidates = []
    pairs = [(None, members[0])]
    pairs += list(zip(members, members[1:]))
    pairs += [(members[-1], None)]
    for follower, leader in pairs:
        if leader is None:
            lead_spacing = math.inf
            midpoint = world.x[follower] + 40.0
        else:
            lead_spacing = float(world.x[leader]) - x_ego - length
            midpoint = (world.x[follower] + world.x[leader]) / 2.0 \
                if follower is not None else world.x[leader] - 40.0
        if follower is None:
            lag_spacing = math.inf
            v_follower = 0.0
        else:
            lag_spacing = x_ego - float(world.x[follower]) - length
            v_follower = float(world.v[follower])
        if lead_spacing >= max(s0, 1.0 * v_ego) and \
           lag_spacing >= max(s0, 1.0 * v_follower):
            candidates.append((abs(midpoint - x_ego),
                               Gap(leader, follower, target,
                                   lead_spacing, lag_spacing)))
    if not candidates:
        return None
    return min(candidates, key=lambda c: c[0])[1]


def update_phase(world: WorldState):
    """Cruise until 80 m traveled, then wait for a qualifying gap."""
    if world.phase == "cruising":
        if world.x[world.ego] - world.ego_entry_x >= \
                world.config.command_distance:
            world.phase = "awaiting_gap"
    if world.phase == "awaiting_gap":
        gap = select_gap(world)
        if gap is not None:
            world.gap = gap
            world.target_lane = gap.target_lane
            world.phase = "changing"
            world.maneuver_time = 0.0


def _leader_pairs(world: WorldState):
    """(spacing, closing speed) per vehicle against its current leader."""
    length = world.config.vehicle_length
    spacing = np.full(world.n, math.inf)
    closing = np.zeros(world.n)
    for lane_idx in range(world.road.lane_count):
        members = _lane_members(world, lane_idx, include_ego=True)
        for rear, front in zip(members, members[1:]):
            spacing[rear] = world.x[front] - world.x[rear] - length
            closing[rear] = world.v[rear] - world.v[front]
    # the ego's leader depends on phase, not on lane occupancy
    ego = world.ego
    if world.phase == "changing":
        leader = world.gap.leader if world.gap is not None else None
        if leader is None:
            spacing[ego] = math.inf
            closing[ego] = 0.0
        else:
            spacing[ego] = world.x[leader] - world.x[ego] - length
            closing[ego] = world.v[ego] - world.v[leader]
    return spacing, closing


def step_dynamics(world: WorldState, ego_a_lat: float, dt: float) -> WorldState:
    """Advance one step of semi-implicit Euler (order pinned for tests)."""
    if not math.isfinite(ego_a_lat):
        raise SimulationError("non-finite lateral action rejected")
    if dt <= 0.0:
        raise SimulationError("dt must be positive")
    spacing, closing = _leader_pairs(world)
    idm = world.config.idm
    accel = np.empty(world.n)
    for i in range(world.n):
        accel[i] = idm_acceleration(float(world.v[i]), float(spacing[i]),
                                    float(closing[i]),
                                    float(world.desired_speed[i]), idm)
    ego = world.ego
    # ego: omega -> psi -> v -> x -> y, each from the just-updated values
    world.omega[ego] = np.clip(world.omega[ego] + ego_a_lat * dt,
                               -YAW_RATE_LIMIT, YAW_RATE_LIMIT)
    world.psi[ego] += world.omega[ego] * dt
    world.v[ego] = max(world.v[ego] + accel[ego] * dt, 0.0)
    world.x[ego] += world.v[ego] * math.cos(world.psi[ego]) * dt
    world.y[ego] += world.v[ego] * math.sin(world.psi[ego]) * dt
    world.ego_a_long = float(accel[ego])
    # ambient vehicles: longitudinal only
    for i in range(world.n):
        if i == ego:
            continue
        world.v[i] = max(world.v[i] + accel[i] * dt, 0.0)
        world.x[i] += world.v[i] * dt
    _recycle_exited(world)
    world.sim_time += dt
    if world.phase == "changing":
        world.maneuver_time += dt
    return world


def _recycle_exited(world: WorldState):
    """Ambient vehicles leaving the segment re-enter upstream with fresh
    speeds, placed behind the rearmost same-lane vehicle."""
    length = world.config.vehicle_length
    road = world.road
    for i in range(world.n):
        if i == world.ego:
            continue
        if world.x[i] - length / 2.0 <= road.segment_length:
            continue
        lane_idx = int(world.lane[i])
        others = [j for j in range(world.n)
                  if j != i and (world.lane[j] == lane_idx if j != world.ego
                                 else world.ego_lane_by_position() == lane_idx)]
        rear = min((world.x[j] for j in others), default=0.0)
        v_new = float(world.rng.uniform(*world.config.initial_speed_range))
        v0_new = float(world.rng.uniform(*world.config.desired_speed_range))
        world.x[i] = min(0.0, rear - length
                         - world.config.idm.safe_spacing(v_new) - 5.0)
        world.v[i] = v_new
        world.desired_speed[i] = v0_new
        # A recycled vehicle has left the scene; it can no longer bound the
        # ego's accepted gap.
        if world.gap is not None:
            if world.gap.leader == i:
                world.gap = replace(
                    world.gap, leader=None, lead_spacing=math.inf)
            if world.gap.follower == i:
                world.gap = replace(
                    world.gap, follower=None, lag_spacing=math.inf)


def build_observation(world: WorldState) -> np.ndarray:
    """Fixed 10-entry normalized state vector, maneuver-direction aligned.

    Lateral quantities (deviation, heading, yaw rate) are expressed with the
    maneuver direction as positive, so left and right changes present the
    same learning problem.
    """
    if world.gap is None or world.target_lane is None:
        raise SimulationError("observation requires a selected gap")
    road = world.road
    ego = world.ego
    d = world.direction
    deviation = d * (road.lane_center(world.target_lane) - world.y[ego])
    obs = np.empty(OBSERVATION_DIM)
    obs[0] = np.clip(deviation / road.lane_width, -1.0, 1.0)
    obs[1] = d * world.psi[ego] / HEADING_SCALE
    obs[2] = d * world.omega[ego] / YAW_RATE_LIMIT
    obs[3] = world.v[ego] / SPEED_SCALE
    obs[4] = world.ego_a_long / ACCEL_SCALE

    def relative(other, sign_default):
        if other is None:
            return sign_default, 0.0
        dist = np.clip((world.x[other] - world.x[ego]) / DISTANCE_SCALE,
                       -1.0, 1.0)
        return dist, (world.v[other] - world.v[ego]) / REL_SPEED_SCALE

    obs[5], obs[6] = relative(world.gap.leader, 1.0)
    obs[7], obs[8] = relative(world.gap.follower, -1.0)
    obs[9] = road.curvature
    if not np.all(np.isfinite(obs)):
        raise SimulationError("non-finite observation")
    return obs


MANEUVER_TIMEOUT = 10.0     # s
SUCCESS_DEVIATION = 0.1     # m
SUCCESS_HEADING = 0.02      # rad
SUCCESS_YAW_RATE = 0.02     # rad/s


def check_termination(world: WorldState) -> str:
    """-> continue | success | failure_boundary | failure_timeout."""
    if world.phase != "changing":
        raise SimulationError("termination check requires the changing phase")
    deviation = world.lateral_deviation()
    if abs(deviation) > world.road.lane_width:
        return "failure_boundary"
    if world.maneuver_time >= MANEUVER_TIMEOUT:
        return "failure_timeout"
    ego = world.ego
    if (abs(deviation) <= SUCCESS_DEVIATION
            and abs(world.psi[ego]) <= SUCCESS_HEADING
            and abs(world.omega[ego]) <= SUCCESS_YAW_RATE):
        return "success"
    return "continue"
