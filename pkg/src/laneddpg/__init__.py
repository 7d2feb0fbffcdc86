"""Continuous lane-change control learned with DDPG in a deterministic
highway micro-simulation."""

from .config import Hyperparameters
from .ddpg import DdpgAgent, NoiseProcess, ReplayBuffer, Transition
from .harness import (CheckpointRecord, evaluate_checkpoint,
                      export_trajectories, load_checkpoint, run_episode,
                      run_grid, save_checkpoint, train)
from .highway import (IdmParams, RoadGeometry, SimConfig, WorldState,
                      build_observation, check_termination, idm_acceleration,
                      select_gap, spawn_traffic, step_dynamics)
from .numnet import (GradientBundle, LayerSpec, MlpParameters, adam_step,
                     backward, check_gradients, deserialize_params, forward,
                     init_network, serialize_params)
from .reward import (RewardBreakdown, RewardWeights, deviation_reward,
                     smoothness_reward, time_penalty, total_reward)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
