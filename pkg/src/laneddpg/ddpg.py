"""DDPG learner: actor/critic networks, targets, replay memory, and updates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numnet
from .numnet import GradientBundle, LayerSpec, MlpParameters

DEFAULT_ACTION_BOUND = 0.1      # |yaw acceleration| bound, rad/s^2
DEFAULT_HIDDEN = (300, 600)


class ReplayNotReady(Exception):
    """Sampling requested before the buffer holds a full batch."""


@dataclass
class Transition:
    state: np.ndarray
    action: float
    reward: float
    next_state: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions with uniform sampling."""

    def __init__(self, capacity: int, state_dim: int):
        if capacity < 1:
            raise ValueError("replay capacity must be >= 1")
        self.capacity = capacity
        self.state_dim = state_dim
        self._states = np.zeros((capacity, state_dim))
        self._actions = np.zeros(capacity)
        self._rewards = np.zeros(capacity)
        self._next_states = np.zeros((capacity, state_dim))
        self._terminals = np.zeros(capacity, dtype=bool)
        self._size = 0
        self._next = 0
        self.insertions = 0

    def __len__(self):
        return self._size

    def push(self, t: Transition):
        if len(t.state) != self.state_dim or len(t.next_state) != self.state_dim:
            raise ValueError("transition state dimension mismatch")
        if not (np.isfinite(t.reward) and np.isfinite(t.action)):
            raise ValueError("non-finite transition field")
        i = self._next
        self._states[i] = t.state
        self._actions[i] = t.action
        self._rewards[i] = t.reward
        self._next_states[i] = t.next_state
        self._terminals[i] = t.terminal
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        self.insertions += 1

    def ready(self, batch_size: int) -> bool:
        return self._size >= batch_size

    def sample_arrays(self, batch_size: int, rng: np.random.Generator):
        """Uniform sample with replacement -> (states, actions, rewards,
        next_states, terminals) as stacked arrays."""
        if batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not self.ready(batch_size):
            raise ReplayNotReady(
                f"buffer holds {self._size} < batch {batch_size}"
            )
        idx = rng.integers(0, self._size, size=batch_size)
        return (self._states[idx], self._actions[idx], self._rewards[idx],
                self._next_states[idx], self._terminals[idx])

    def sample(self, batch_size: int, rng: np.random.Generator):
        s, a, r, s2, term = self.sample_arrays(batch_size, rng)
        return [Transition(s[i], float(a[i]), float(r[i]), s2[i], bool(term[i]))
                for i in range(batch_size)]

    def as_transitions(self):
        order = (np.arange(self._size) + (self._next - self._size)) % self.capacity
        return [Transition(self._states[i].copy(), float(self._actions[i]),
                           float(self._rewards[i]), self._next_states[i].copy(),
                           bool(self._terminals[i])) for i in order]


@dataclass
class NoiseProcess:
    """Truncated-normal exploration noise with per-episode decay.

    Samples always lie within +-2 sigma (rejection sampling); sigma decays by
    a fixed factor each episode down to a floor.
    """

    sigma: float
    decay: float = 0.999
    floor: float = 0.0

    def __post_init__(self):
        if self.sigma < 0.0 or not (0.0 < self.decay <= 1.0) or self.floor < 0.0:
            raise ValueError("invalid noise parameters")

    def sample(self, rng: np.random.Generator) -> float:
        if self.sigma == 0.0:
            return 0.0
        while True:
            z = rng.standard_normal()
            if abs(z) <= 2.0:
                return self.sigma * z

    def end_episode(self):
        self.sigma = max(self.sigma * self.decay, self.floor)


def _stack(batch):
    """Accept either sample_arrays output or a sequence of Transition."""
    if isinstance(batch, tuple):
        return batch
    if not batch:
        raise ValueError("empty batch")
    s = np.stack([t.state for t in batch])
    a = np.array([t.action for t in batch])
    r = np.array([t.reward for t in batch])
    s2 = np.stack([t.next_state for t in batch])
    term = np.array([t.terminal for t in batch], dtype=bool)
    return s, a, r, s2, term


def build_actor(obs_dim: int, seed: int, hidden=DEFAULT_HIDDEN) -> MlpParameters:
    """Relu hidden layers, tanh output; the action is bound * tanh(raw)."""
    widths = (obs_dim,) + tuple(hidden) + (1,)
    specs = [LayerSpec(widths[i], widths[i + 1],
                       "tanh" if i == len(widths) - 2 else "relu")
             for i in range(len(widths) - 1)]
    return numnet.init_network(specs, seed)


def build_critic(obs_dim: int, seed: int, hidden=DEFAULT_HIDDEN) -> MlpParameters:
    """Q(s, a): action appended to the state at the input; linear output."""
    widths = (obs_dim + 1,) + tuple(hidden) + (1,)
    specs = [LayerSpec(widths[i], widths[i + 1],
                       "linear" if i == len(widths) - 2 else "relu")
             for i in range(len(widths) - 1)]
    return numnet.init_network(specs, seed)


def act(actor: MlpParameters, state, action_bound: float = DEFAULT_ACTION_BOUND) -> float:
    """Deterministic policy action in [-bound, +bound]."""
    y, _ = numnet.forward(actor, np.asarray(state, dtype=np.float64))
    return float(action_bound * y[0])


def act_exploratory(actor: MlpParameters, state, noise: NoiseProcess,
                    rng: np.random.Generator,
                    action_bound: float = DEFAULT_ACTION_BOUND) -> float:
    a = act(actor, state, action_bound) + noise.sample(rng)
    return float(np.clip(a, -action_bound, action_bound))


def act_batch(actor: MlpParameters, states: np.ndarray,
              action_bound: float) -> np.ndarray:
    y, _ = numnet.forward(actor, states)
    return action_bound * y[:, 0]


def critic_values(critic: MlpParameters, states: np.ndarray,
                  actions: np.ndarray) -> np.ndarray:
    x = np.concatenate([states, actions[:, None]], axis=1)
    q, _ = numnet.forward(critic, x)
    return q[:, 0]


def compute_targets(batch, target_actor: MlpParameters,
                    target_critic: MlpParameters, gamma: float,
                    action_bound: float = DEFAULT_ACTION_BOUND) -> np.ndarray:
    """TD targets y_i = r_i + gamma * Q'(s', mu'(s')), masked at terminals."""
    if not (0.0 <= gamma < 1.0):
        raise ValueError("gamma must satisfy 0 <= gamma < 1")
    _, _, r, s2, term = _stack(batch)
    if r.size == 0:
        raise ValueError("empty batch")
    a2 = act_batch(target_actor, s2, action_bound)
    q2 = critic_values(target_critic, s2, a2)
    return r + gamma * np.where(term, 0.0, q2)


def critic_update(critic: MlpParameters, batch, y: np.ndarray,
                  learning_rate: float) -> float:
    """One Adam step on the mean-squared TD error; returns pre-update loss."""
    s, a, _, _, _ = _stack(batch)
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != s.shape[0]:
        raise ValueError("target/batch length mismatch")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite targets; update rejected")
    n = s.shape[0]
    x = np.concatenate([s, a[:, None]], axis=1)
    q, tape = numnet.forward(critic, x)
    residual = q[:, 0] - y
    loss = float(np.mean(residual ** 2))
    # d(loss)/dQ_i = 2 (Q_i - y_i) / N
    gout = (2.0 / n) * residual[:, None]
    grads = numnet.backward(critic, tape, gout)
    numnet.adam_step(critic, grads, learning_rate)
    return loss


def actor_update_from_action_grads(actor: MlpParameters, states: np.ndarray,
                                   dq_da, learning_rate: float,
                                   action_bound: float = DEFAULT_ACTION_BOUND):
    """Policy-gradient ascent given dQ/da at a = policy(state).

    ``dq_da`` is a callable (states, actions) -> per-sample gradient of Q
    w.r.t. the action. The chain through the action scaling and the actor is
    analytic; ascent is one Adam step on the negated objective.
    """
    n = states.shape[0]
    raw, tape = numnet.forward(actor, states)
    actions = action_bound * raw[:, 0]
    g_action = np.asarray(dq_da(states, actions), dtype=np.float64).reshape(n)
    # maximize J = mean Q  ->  minimize -J
    gout = (-(1.0 / n) * action_bound * g_action)[:, None]
    grads = numnet.backward(actor, tape, gout)
    numnet.adam_step(actor, grads, learning_rate)
    return actor


def actor_update(actor: MlpParameters, critic: MlpParameters, batch,
                 learning_rate: float,
                 action_bound: float = DEFAULT_ACTION_BOUND):
    """Sampled policy-gradient step: back-propagate the critic's action
    gradient through the actor."""
    s = _stack(batch)[0]
    if s.shape[0] == 0:
        raise ValueError("empty batch")

    def dq_da(states, actions):
        x = np.concatenate([states, actions[:, None]], axis=1)
        q, tape = numnet.forward(critic, x)
        g = numnet.backward(critic, tape, np.ones_like(q),
                            need_param_grads=False)
        return g.d_input[:, -1]   # action occupies the last input slot

    return actor_update_from_action_grads(actor, s, dq_da, learning_rate,
                                          action_bound)


def soft_update(current: MlpParameters, target: MlpParameters, tau: float):
    """target <- tau * current + (1 - tau) * target, elementwise."""
    if not (0.0 < tau <= 1.0):
        raise ValueError("tau must satisfy 0 < tau <= 1")
    if current.specs != target.specs:
        raise ValueError("network shapes differ")
    for tgt, cur in zip(target.weights + target.biases,
                        current.weights + current.biases):
        tgt *= 1.0 - tau
        tgt += tau * cur
    return target


@dataclass
class DdpgAgent:
    """Bundles the four networks plus replay and noise for the harness."""

    actor: MlpParameters
    critic: MlpParameters
    target_actor: MlpParameters
    target_critic: MlpParameters
    buffer: ReplayBuffer
    noise: NoiseProcess
    action_bound: float
    gamma: float
    tau: float
    actor_lr: float
    critic_lr: float
    batch_size: int

    @classmethod
    def create(cls, obs_dim, seed, *, hidden=DEFAULT_HIDDEN,
               action_bound=DEFAULT_ACTION_BOUND, gamma=0.98, tau=0.001,
               actor_lr=1e-4, critic_lr=1e-3, batch_size=64,
               replay_capacity=4000, noise_sigma=None, noise_decay=0.999,
               noise_floor=None):
        ss = np.random.SeedSequence(seed)
        a_seed, c_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
        actor = build_actor(obs_dim, a_seed, hidden)
        critic = build_critic(obs_dim, c_seed, hidden)
        if noise_sigma is None:
            noise_sigma = 0.5 * action_bound
        if noise_floor is None:
            noise_floor = 0.02 * action_bound
        return cls(actor=actor, critic=critic, target_actor=actor.copy(),
                   target_critic=critic.copy(),
                   buffer=ReplayBuffer(replay_capacity, obs_dim),
                   noise=NoiseProcess(noise_sigma, noise_decay, noise_floor),
                   action_bound=action_bound, gamma=gamma, tau=tau,
                   actor_lr=actor_lr, critic_lr=critic_lr,
                   batch_size=batch_size)

    def act(self, state) -> float:
        return act(self.actor, state, self.action_bound)

    def act_exploratory(self, state, rng) -> float:
        return act_exploratory(self.actor, state, self.noise, rng,
                               self.action_bound)

    def observe(self, transition: Transition):
        self.buffer.push(transition)

    def learn_step(self, rng) -> float | None:
        """One critic + actor + soft-update cycle; None if the buffer is not
        ready. Returns the critic loss before the update."""
        if not self.buffer.ready(self.batch_size):
            return None
        batch = self.buffer.sample_arrays(self.batch_size, rng)
        y = compute_targets(batch, self.target_actor, self.target_critic,
                            self.gamma, self.action_bound)
        loss = critic_update(self.critic, batch, y, self.critic_lr)
        actor_update(self.actor, self.critic, batch, self.actor_lr,
                     self.action_bound)
        soft_update(self.critic, self.target_critic, self.tau)
        soft_update(self.actor, self.target_actor, self.tau)
        return loss

    def parameter_digest(self) -> bytes:
        import hashlib
        h = hashlib.sha256()
        for net in (self.actor, self.critic, self.target_actor,
                    self.target_critic):
            h.update(numnet.serialize_params(net))
        return h.digest()
