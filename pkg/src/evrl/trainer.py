"""Double DQN training loop over the event-camera environments.

Acting is epsilon-greedy with a constant epsilon; transitions go into a
FIFO replay buffer sampled uniformly with replacement; targets follow
the Double DQN rule (online net picks the next action, target net
evaluates it); the target net re-syncs every fixed number of gradient
steps. The whole loop is deterministic for a given seed: environment
resets, exploration, replay sampling, and weight init all derive from
one SeedSequence.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import qnet
from .envs import episode_return
from .qnet import NetworkConfig, QNetworkParams


@dataclass
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool


@dataclass
class TransitionBatch:
    s: np.ndarray        # (B, H, W)
    a: np.ndarray        # (B,) int64
    r: np.ndarray        # (B,) float32
    s_next: np.ndarray   # (B, H, W)
    done: np.ndarray     # (B,) bool


class ReplayBuffer:
    """Ring buffer; oldest transitions are evicted first once full."""

    def __init__(self, capacity: int = 10 ** 6):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._storage: List[Transition] = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._storage)

    def push(self, transition: Transition):
        if len(self._storage) < self.capacity:
            self._storage.append(transition)
        else:
            self._storage[self._cursor] = transition
            self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        """Uniform with replacement; raises until batch_size items are stored."""
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        if len(self._storage) < batch_size:
            raise RuntimeError(
                f"buffer holds {len(self._storage)} transitions, need {batch_size}"
            )
        idx = rng.integers(0, len(self._storage), size=batch_size)
        items = [self._storage[i] for i in idx]
        return TransitionBatch(
            s=np.stack([t.s for t in items]),
            a=np.array([t.a for t in items], dtype=np.int64),
            r=np.array([t.r for t in items], dtype=np.float32),
            s_next=np.stack([t.s_next for t in items]),
            done=np.array([t.done for t in items], dtype=bool),
        )


@dataclass
class TrainerConfig:
    episodes: int = 500
    gamma: float = 0.95
    epsilon: float = 0.1
    target_update_interval: int = 200  # gradient steps between target syncs
    batch_size: int = 32
    warmup_steps: int = 1000
    replay_capacity: int = 10 ** 6
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 0.01
    loss_kind: str = "huber"
    eval_every: int = 25
    eval_episodes: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.episodes < 0:
            raise ValueError(f"episodes must be >= 0, got {self.episodes}")
        if self.target_update_interval < 1:
            raise ValueError("target_update_interval must be >= 1")


@dataclass
class EpisodeStats:
    episode: int
    r_sum: float
    steps: int
    terminal: str  # "collision" or "max_steps"


def epsilon_greedy(q_values: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform action with probability epsilon, else lowest-index argmax.

    epsilon = 0 consumes no randomness, so greedy rollouts are rng-free.
    """
    q_values = np.asarray(q_values).ravel()
    if q_values.size == 0:
        raise ValueError("q_values is empty")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(0, q_values.size))
    return int(np.argmax(q_values))


def double_dqn_target(r, s_next, done, online_params: QNetworkParams,
                      target_params: QNetworkParams, gamma: float):
    """y = r, or r + gamma * Q_target(s', argmax_a Q_online(s', a)) if not done.

    Accepts a single transition or a batch; scalar in, scalar out.
    """
    r_arr = np.atleast_1d(np.asarray(r, dtype=np.float64))
    done_arr = np.atleast_1d(np.asarray(done, dtype=bool))
    scalar = np.asarray(r).ndim == 0
    s_arr = np.asarray(s_next)
    if s_arr.ndim == 2:
        s_arr = s_arr[None]
    y = r_arr.copy()
    live = ~done_arr
    if live.any():
        q_online = qnet.forward(online_params, s_arr[live], mode="eval")
        q_target = qnet.forward(target_params, s_arr[live], mode="eval")
        best = np.argmax(q_online, axis=1)
        y[live] += gamma * q_target[np.arange(len(best)), best]
    return float(y[0]) if scalar else y


def greedy_action(params: QNetworkParams, obs: np.ndarray) -> int:
    q = qnet.forward(params, obs, mode="eval")
    return int(np.argmax(q[0]))


def _run_episode(env, act, seed: int) -> Tuple[List[float], str, List[dict]]:
    obs = env.reset(seed=seed)
    rewards: List[float] = []
    infos: List[dict] = []
    terminal = "max_steps"
    while True:
        action = act(obs)
        result = env.step(action)
        rewards.append(result.reward)
        infos.append(result.info)
        obs = result.observation
        if result.done:
            if result.info.get("collision"):
                terminal = "collision"
            break
    return rewards, terminal, infos


def evaluate(env, params: QNetworkParams, episodes: int, seed: int = 0,
             collect_info: bool = False):
    """Greedy rollouts; returns one EpisodeStats per episode.

    With collect_info=True returns (stats, per-episode info dicts) so
    callers can inspect d/theta traces.
    """
    seed_rng = np.random.default_rng(np.random.SeedSequence(seed))
    stats: List[EpisodeStats] = []
    all_infos: List[List[dict]] = []
    for ep in range(episodes):
        ep_seed = int(seed_rng.integers(0, 2 ** 63))
        rewards, terminal, infos = _run_episode(
            env, lambda obs: greedy_action(params, obs), ep_seed)
        stats.append(EpisodeStats(ep, episode_return(rewards), len(rewards), terminal))
        all_infos.append(infos)
    return (stats, all_infos) if collect_info else stats


def summarize(stats: Sequence[EpisodeStats]) -> Tuple[float, float]:
    """Mean R_sum and its standard error."""
    if not stats:
        return 0.0, 0.0
    r = np.array([s.r_sum for s in stats], dtype=np.float64)
    se = float(r.std(ddof=1) / np.sqrt(len(r))) if len(r) > 1 else 0.0
    return float(r.mean()), se


def train(env, trainer_config: TrainerConfig, network_config: NetworkConfig,
          log_path: Optional[str] = None,
          params: Optional[QNetworkParams] = None):
    """Run Double DQN; returns (params, per-episode EpisodeStats list).

    One gradient step per environment step once the warmup threshold is
    met. The JSONL log mirrors the returned stats plus diagnostics; the
    wall_clock_per_step field is the only nondeterministic value in it.
    """
    cfg = trainer_config
    root = np.random.SeedSequence(cfg.seed)
    init_seq, action_seq, buffer_seq, episode_seq, eval_seq = root.spawn(5)
    if params is None:
        params = qnet.init_params(network_config, np.random.default_rng(init_seq))
    target = qnet.copy_params(params)
    adam = qnet.init_adam(params, lr=cfg.learning_rate, beta1=cfg.adam_beta1,
                          beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    buffer = ReplayBuffer(cfg.replay_capacity)
    action_rng = np.random.default_rng(action_seq)
    buffer_rng = np.random.default_rng(buffer_seq)
    episode_rng = np.random.default_rng(episode_seq)
    eval_rng = np.random.default_rng(eval_seq)

    min_fill = max(cfg.batch_size, cfg.warmup_steps)
    grad_steps = 0
    loss_ma: Optional[float] = None
    stats: List[EpisodeStats] = []
    log_file = open(log_path, "w") if log_path else None
    try:
        for ep in range(cfg.episodes):
            ep_seed = int(episode_rng.integers(0, 2 ** 63))
            obs = env.reset(seed=ep_seed)
            rewards: List[float] = []
            terminal = "max_steps"
            t_start = time.perf_counter()
            while True:
                q = qnet.forward(params, obs, mode="eval")
                action = epsilon_greedy(q[0], cfg.epsilon, action_rng)
                result = env.step(action)
                buffer.push(Transition(obs, action, result.reward,
                                       result.observation, result.done))
                rewards.append(result.reward)
                obs = result.observation
                if len(buffer) >= min_fill:
                    batch = buffer.sample(cfg.batch_size, buffer_rng)
                    y = double_dqn_target(batch.r, batch.s_next, batch.done,
                                          params, target, cfg.gamma)
                    grads, loss = qnet.backward(params, batch.s, batch.a, y,
                                                loss_kind=cfg.loss_kind)
                    qnet.adam_step(params, grads, adam)
                    grad_steps += 1
                    loss_ma = loss if loss_ma is None else 0.98 * loss_ma + 0.02 * loss
                    if grad_steps % cfg.target_update_interval == 0:
                        target = qnet.copy_params(params)
                if result.done:
                    if result.info.get("collision"):
                        terminal = "collision"
                    break
            elapsed = time.perf_counter() - t_start
            ep_stats = EpisodeStats(ep, episode_return(rewards), len(rewards), terminal)
            stats.append(ep_stats)
            if log_file:
                record = {
                    "type": "train", "episode": ep, "r_sum": ep_stats.r_sum,
                    "steps": ep_stats.steps, "terminal": terminal,
                    "loss_ma": loss_ma, "epsilon": cfg.epsilon,
                    "grad_steps": grad_steps,
                    "wall_clock_per_step": elapsed / max(1, ep_stats.steps),
                }
                log_file.write(json.dumps(record) + "\n")
            if cfg.eval_every > 0 and (ep + 1) % cfg.eval_every == 0:
                eval_seed = int(eval_rng.integers(0, 2 ** 63))
                eval_stats = evaluate(env, params, cfg.eval_episodes, seed=eval_seed)
                mean, se = summarize(eval_stats)
                if log_file:
                    record = {"type": "eval", "episode": ep, "r_sum_mean": mean,
                              "r_sum_se": se, "episodes": cfg.eval_episodes}
                    log_file.write(json.dumps(record) + "\n")
    finally:
        if log_file:
            log_file.close()
    return params, stats


def random_policy_baseline(env, episodes: int, seed: int = 0,
                           collect_info: bool = False):
    """Uniform-random rollouts, the comparison baseline for training."""
    seed_rng = np.random.default_rng(np.random.SeedSequence(seed))
    action_rng = np.random.default_rng(seed_rng.integers(0, 2 ** 63))
    stats: List[EpisodeStats] = []
    all_infos: List[List[dict]] = []
    n_actions = env.action_count
    for ep in range(episodes):
        ep_seed = int(seed_rng.integers(0, 2 ** 63))
        rewards, terminal, infos = _run_episode(
            env, lambda obs: int(action_rng.integers(0, n_actions)), ep_seed)
        stats.append(EpisodeStats(ep, episode_return(rewards), len(rewards), terminal))
        all_infos.append(infos)
    return (stats, all_infos) if collect_info else stats
