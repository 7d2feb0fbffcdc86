"""Training orchestration: episodes, checkpoints, validation, and the
hyperparameter grid.

Seeding is counter-based: every episode's world and exploration generators
are derived from the master seed and the episode index alone, so training
runs, grid cells, and validation sweeps are reproducible independently.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ddpg, highway, numnet
from .config import ConfigError, Hyperparameters, parse_config_text
from .ddpg import DdpgAgent, Transition
from .highway import (OBSERVATION_DIM, CollisionFault, WorldState,
                      build_observation, check_termination, spawn_traffic,
                      step_dynamics, update_phase)
from .reward import total_reward

log = logging.getLogger(__name__)

DEFAULT_VALIDATION_RETURN = -20.0

TRAJECTORY_COLUMNS = ("t", "x", "y", "v", "psi", "omega", "a_lat",
                      "r_s", "r_e", "r_d", "r")
METRICS_COLUMNS = ("episode", "total_reward", "maneuver_steps",
                   "mean_critic_loss", "outcome")
VALIDATION_COLUMNS = ("checkpoint", "avg_return", "attempts", "successes",
                      "success_rate")

# grid cells: label -> (action update step k, replay capacity)
GRID_CELLS = {
    1: (1, 2000), 4: (1, 4000), 5: (1, 8000),
    2: (2, 2000), 6: (2, 4000), 7: (2, 8000),
    3: (4, 2000), 8: (4, 4000), 9: (4, 8000),
}


class CheckpointError(Exception):
    pass


def _stream_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(stream, index)))


_STREAM_AGENT, _STREAM_WORLD, _STREAM_EPISODE, _STREAM_EVAL = 0, 1, 2, 3


@dataclass
class EpisodeMetrics:
    episode: int
    total_reward: float
    maneuver_steps: int
    mean_critic_loss: float
    outcome: str


@dataclass
class EpisodeResult:
    metrics: EpisodeMetrics
    trajectory: np.ndarray      # rows of TRAJECTORY_COLUMNS


def make_agent(hp: Hyperparameters) -> DdpgAgent:
    seed = int(_stream_rng(hp.seed, _STREAM_AGENT, 0).integers(0, 2 ** 63))
    return DdpgAgent.create(
        OBSERVATION_DIM, seed, hidden=(hp.hidden1, hp.hidden2),
        action_bound=hp.action_bound, gamma=hp.gamma, tau=hp.tau,
        actor_lr=hp.actor_lr, critic_lr=hp.critic_lr,
        batch_size=hp.batch_size, replay_capacity=hp.replay_capacity,
        noise_sigma=hp.noise_sigma0, noise_decay=hp.noise_decay,
        noise_floor=hp.noise_floor)


def spawn_world(hp: Hyperparameters, seed: int, index: int,
                stream: int = _STREAM_WORLD) -> WorldState:
    return spawn_traffic(_stream_rng(seed, stream, index), hp.sim_config())


def run_episode(world: WorldState, agent: DdpgAgent, hp: Hyperparameters,
                mode: str, rng: np.random.Generator,
                episode: int = 0) -> EpisodeResult:
    """Drive one lane-change episode.

    The executed action refreshes from the actor every ``k`` maneuver steps;
    in train mode transitions are collected and the networks updated every
    step of the changing phase.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    training = mode == "train"
    k = hp.action_update_step
    weights = hp.reward_weights()
    ego = world.ego
    rows = []
    losses = []
    maneuver_steps = 0
    total = 0.0
    policy_action = 0.0
    outcome = None
    try:
        while outcome is None:
            if world.phase in ("cruising", "awaiting_gap"):
                update_phase(world)
            if world.phase != "changing":
                step_dynamics(world, 0.0, hp.dt)
                if world.sim_time >= hp.episode_horizon:
                    outcome = "no_attempt"
                continue
            obs = build_observation(world)
            if maneuver_steps % k == 0:
                if training:
                    policy_action = agent.act_exploratory(obs, rng)
                else:
                    policy_action = agent.act(obs)
            a_lat = world.direction * policy_action
            step_dynamics(world, a_lat, hp.dt)
            result = check_termination(world)
            r = total_reward(float(world.omega[ego]), a_lat,
                             world.lateral_deviation(), hp.dt, weights)
            next_obs = build_observation(world)
            terminal = result != "continue"
            if training:
                agent.observe(Transition(obs, policy_action, r.total,
                                         next_obs, terminal))
                loss = agent.learn_step(rng)
                if loss is not None:
                    losses.append(loss)
            rows.append((world.sim_time, float(world.x[ego]),
                         float(world.y[ego]), float(world.v[ego]),
                         float(world.psi[ego]), float(world.omega[ego]),
                         a_lat, r.smoothness, r.time_cost, r.deviation,
                         r.total))
            total += r.total
            maneuver_steps += 1
            if terminal:
                outcome = result
                world.phase = "done" if result == "success" else "failed"
    except CollisionFault as fault:
        # RL-induced cut-in collision: the episode aborts with a diagnostic
        log.warning("episode %d aborted by collision fault: %s", episode, fault)
        outcome = "fault"
        world.phase = "failed"
    trajectory = (np.array(rows) if rows
                  else np.empty((0, len(TRAJECTORY_COLUMNS))))
    mean_loss = float(np.mean(losses)) if losses else math.nan
    return EpisodeResult(
        metrics=EpisodeMetrics(episode=episode, total_reward=total,
                               maneuver_steps=maneuver_steps,
                               mean_critic_loss=mean_loss, outcome=outcome),
        trajectory=trajectory)


@dataclass
class CheckpointRecord:
    episode: int
    hp: Hyperparameters
    actor: numnet.MlpParameters
    critic: numnet.MlpParameters
    target_actor: numnet.MlpParameters
    target_critic: numnet.MlpParameters
    noise_sigma: float
    next_episode: int


_CKPT_MAGIC = b"LCCK"
_CKPT_VERSION = 1


def save_checkpoint(record: CheckpointRecord, path):
    manifest = (f"episode = {record.episode}\n"
                f"next_episode = {record.next_episode}\n"
                f"noise_sigma = {record.noise_sigma!r}\n"
                "[hyperparameters]\n" + record.hp.to_text()).encode()
    blobs = [numnet.serialize_params(net)
             for net in (record.actor, record.critic, record.target_actor,
                         record.target_critic)]
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<B", _CKPT_VERSION))
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)


def load_checkpoint(path) -> CheckpointRecord:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError("truncated checkpoint")
        out = data[pos:pos + n]
        pos += n
        return out

    if take(4) != _CKPT_MAGIC:
        raise CheckpointError("not a checkpoint file")
    (version,) = struct.unpack("<B", take(1))
    if version != _CKPT_VERSION:
        raise CheckpointError(f"checkpoint version mismatch: {version}")
    (mlen,) = struct.unpack("<I", take(4))
    manifest = take(mlen).decode()
    head, _, hp_text = manifest.partition("[hyperparameters]\n")
    meta = {}
    for line in head.splitlines():
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    try:
        hp = parse_config_text(hp_text)
        episode = int(meta["episode"])
        next_episode = int(meta["next_episode"])
        noise_sigma = float(meta["noise_sigma"])
    except (ConfigError, KeyError, ValueError) as exc:
        raise CheckpointError(f"bad checkpoint manifest: {exc}") from exc
    nets = []
    for _ in range(4):
        (blen,) = struct.unpack("<Q", take(8))
        try:
            nets.append(numnet.deserialize_params(take(blen)))
        except numnet.SerializationError as exc:
            raise CheckpointError(f"corrupt network blob: {exc}") from exc
    if pos != len(data):
        raise CheckpointError("trailing bytes in checkpoint")
    return CheckpointRecord(episode=episode, hp=hp, actor=nets[0],
                            critic=nets[1], target_actor=nets[2],
                            target_critic=nets[3], noise_sigma=noise_sigma,
                            next_episode=next_episode)


def agent_from_checkpoint(record: CheckpointRecord) -> DdpgAgent:
    agent = make_agent(record.hp)
    agent.actor = record.actor.copy()
    agent.critic = record.critic.copy()
    agent.target_actor = record.target_actor.copy()
    agent.target_critic = record.target_critic.copy()
    agent.noise.sigma = record.noise_sigma
    return agent


def write_metrics_csv(path, metrics):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for m in metrics:
            writer.writerow([m.episode, repr(m.total_reward),
                             m.maneuver_steps, repr(m.mean_critic_loss),
                             m.outcome])


def read_metrics_csv(path):
    metrics = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            metrics.append(EpisodeMetrics(
                episode=int(row["episode"]),
                total_reward=float(row["total_reward"]),
                maneuver_steps=int(row["maneuver_steps"]),
                mean_critic_loss=float(row["mean_critic_loss"]),
                outcome=row["outcome"]))
    return metrics


def train(hp: Hyperparameters, out_dir) -> tuple:
    """Run the full training schedule; returns (final checkpoint, metrics)."""
    out = Path(out_dir)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    agent = make_agent(hp)
    metrics = []
    final_record = None
    started = time.monotonic()
    for ep in range(hp.episodes):
        world = spawn_world(hp, hp.seed, ep)
        ep_rng = _stream_rng(hp.seed, _STREAM_EPISODE, ep)
        result = run_episode(world, agent, hp, "train", ep_rng, episode=ep + 1)
        agent.noise.end_episode()
        metrics.append(result.metrics)
        if (ep + 1) % hp.checkpoint_interval == 0:
            record = CheckpointRecord(
                episode=ep + 1, hp=hp, actor=agent.actor.copy(),
                critic=agent.critic.copy(),
                target_actor=agent.target_actor.copy(),
                target_critic=agent.target_critic.copy(),
                noise_sigma=agent.noise.sigma, next_episode=ep + 1)
            save_checkpoint(record, ckpt_dir / f"checkpoint_{ep + 1:06d}.bin")
            final_record = record
            recent = metrics[-hp.checkpoint_interval:]
            log.info("episode %d/%d  mean_reward=%.1f  mean_steps=%.1f  "
                     "sigma=%.4f  elapsed=%.0fs", ep + 1, hp.episodes,
                     float(np.mean([m.total_reward for m in recent])),
                     float(np.mean([m.maneuver_steps for m in recent])),
                     agent.noise.sigma, time.monotonic() - started)
    if final_record is None or final_record.episode != hp.episodes:
        # the schedule ended off the checkpoint cadence; persist the final
        # state anyway so every run leaves a loadable model behind
        final_record = CheckpointRecord(
            episode=hp.episodes, hp=hp, actor=agent.actor.copy(),
            critic=agent.critic.copy(),
            target_actor=agent.target_actor.copy(),
            target_critic=agent.target_critic.copy(),
            noise_sigma=agent.noise.sigma, next_episode=hp.episodes)
        save_checkpoint(final_record,
                        ckpt_dir / f"checkpoint_{hp.episodes:06d}.bin")
    write_metrics_csv(out / "metrics.csv", metrics)
    return final_record, metrics


@dataclass
class ValidationSummary:
    checkpoint: int
    avg_return: float
    attempts: int
    successes: int
    success_rate: float
    returns: list
    outcomes: list


def evaluate_checkpoint(record: CheckpointRecord, runs: int,
                        seed: int) -> ValidationSummary:
    """Noise-free rollouts on fresh scenarios; failures and non-attempts
    score the default validation return of -20."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    agent = agent_from_checkpoint(record)
    hp = record.hp
    returns, outcomes = [], []
    attempts = successes = 0
    for i in range(runs):
        world = spawn_world(hp, seed, i, stream=_STREAM_EVAL)
        rng = _stream_rng(seed, _STREAM_EVAL + 1, i)
        result = run_episode(world, agent, hp, "eval", rng, episode=i)
        outcome = result.metrics.outcome
        outcomes.append(outcome)
        if outcome != "no_attempt":
            attempts += 1
        if outcome == "success":
            successes += 1
            returns.append(result.metrics.total_reward)
        else:
            returns.append(DEFAULT_VALIDATION_RETURN)
    rate = successes / attempts if attempts else 0.0
    return ValidationSummary(checkpoint=record.episode,
                             avg_return=float(np.mean(returns)),
                             attempts=attempts, successes=successes,
                             success_rate=rate, returns=returns,
                             outcomes=outcomes)


def write_validation_csv(path, summaries):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(VALIDATION_COLUMNS)
        for s in summaries:
            writer.writerow([s.checkpoint, repr(s.avg_return), s.attempts,
                             s.successes, repr(s.success_rate)])


@dataclass
class GridCellResult:
    label: int
    action_update_step: int
    replay_capacity: int
    final_window_mean: float
    episodes: int
    status: str


def final_window_mean(metrics, window: int = 200) -> float:
    rewards = [m.total_reward for m in metrics[-window:]]
    return float(np.mean(rewards)) if rewards else math.nan


def run_grid(base_hp: Hyperparameters, out_dir, episodes: int | None = None,
             window: int = 200) -> list:
    """Train every Table-1 cell; scenario seeds are shared across cells."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if episodes is not None:
        base_hp = dataclasses.replace(base_hp, episodes=episodes)
    results = []
    for label in sorted(GRID_CELLS):
        k, capacity = GRID_CELLS[label]
        hp = dataclasses.replace(base_hp, action_update_step=k,
                                 replay_capacity=capacity)
        cell_dir = out / f"cell{label}_k{k}_D{capacity}"
        cell_dir.mkdir(parents=True, exist_ok=True)
        log.info("grid cell %d: k=%d capacity=%d", label, k, capacity)
        try:
            _, metrics = train(hp, cell_dir)
            results.append(GridCellResult(
                label=label, action_update_step=k, replay_capacity=capacity,
                final_window_mean=final_window_mean(metrics, window),
                episodes=hp.episodes, status="ok"))
        except Exception as exc:   # a cell failure must not stop the grid
            log.error("grid cell %d failed: %s", label, exc)
            results.append(GridCellResult(
                label=label, action_update_step=k, replay_capacity=capacity,
                final_window_mean=math.nan, episodes=hp.episodes,
                status=f"failed: {exc}"))
    with open(out / "grid.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell", "k", "replay_capacity",
                         "final_window_mean_return", "episodes", "status"])
        for r in results:
            writer.writerow([r.label, r.action_update_step,
                             r.replay_capacity, repr(r.final_window_mean),
                             r.episodes, r.status])
    return results


def export_trajectories(record: CheckpointRecord, episodes: int, seed: int,
                        out_dir) -> list:
    """Noise-free rollout CSVs, one file per episode."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    agent = agent_from_checkpoint(record)
    hp = record.hp
    paths = []
    for i in range(episodes):
        world = spawn_world(hp, seed, i, stream=_STREAM_EVAL)
        rng = _stream_rng(seed, _STREAM_EVAL + 1, i)
        result = run_episode(world, agent, hp, "eval", rng, episode=i)
        path = out / f"trajectory_{i:03d}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRAJECTORY_COLUMNS)
            for row in result.trajectory:
                writer.writerow([repr(float(v)) for v in row])
        paths.append(path)
    return paths
