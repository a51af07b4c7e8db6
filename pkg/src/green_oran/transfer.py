"""Transfer from a master policy trained on a source task.

Two routes are supported. On-policy transfer adds a distillation term,
the cross-entropy from master to learner on the learner's own states,
weighted by a decaying coefficient. Off-policy transfer replays master
experience collected on the target task, keeps samples whose target-task
advantage exceeds a threshold, and applies the clipped surrogate with
the master as behaviour policy. Replayed samples never train the critic.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import OranEnv
from .net import ConfigError, NetworkConfig
from .nn import Mlp, log_softmax
from .ppo import (
    Batch,
    PpoAgent,
    PpoConfig,
    VecEnv,
    action_log_prob,
    collect_rollout,
    compute_gae,
    policy_loss,
    train,
)

MODES = ("on_policy", "off_policy", "random_init")
PROB_FLOOR = 1e-12


class InsufficientSamples(LookupError):
    """No replayed transition passed the advantage filter."""


@dataclass(frozen=True)
class TransferConfig:
    eta_initial: float = 1.0
    eta_decay: float = 0.995
    advantage_threshold: float = 0.0
    offpolicy_min_samples: int = 5000
    replay_capacity: int = 50_000
    replay_refresh_every: int = 10

    def __post_init__(self):
        if self.eta_initial < 0:
            raise ValueError("eta_initial must be >= 0")
        if not 0.0 < self.eta_decay <= 1.0:
            raise ValueError("eta_decay must lie in (0, 1]")
        if self.offpolicy_min_samples < 1 or self.replay_capacity < self.offpolicy_min_samples:
            raise ValueError("need 1 <= offpolicy_min_samples <= replay_capacity")
        if self.replay_refresh_every < 1:
            raise ValueError("replay_refresh_every must be >= 1")


# ----------------------------------------------------------------- master


class MasterPolicy:
    """Read-only teacher. Parameters are copied and write-protected."""

    def __init__(self, network: Mlp, source_task_id: str = "source"):
        net = network.copy()
        for p in net.params():
            p.setflags(write=False)
        self.network = net
        self.source_task_id = source_task_id

    def group_probs(self, states) -> list[np.ndarray]:
        raw = self.network.forward(np.atleast_2d(states))
        return [np.exp(log_softmax(raw[:, g.offset:g.stop].reshape(raw.shape[0], g.count, g.size)))
                for g in self.network.categorical_groups()]

    def log_prob(self, states, actions) -> np.ndarray:
        raw = self.network.forward(np.atleast_2d(states))
        return action_log_prob(self.network, raw, np.atleast_2d(actions))[0]

    def fingerprint(self) -> bytes:
        return b"".join(p.tobytes() for p in self.network.params())


# --------------------------------------------------------- on-policy route


def distill_loss(master_probs, learner_probs) -> float:
    """Cross-entropy H(master, learner) summed over heads, averaged over states.

    Each argument is a list of arrays with the categories on the last axis;
    leading axes are (batch, ...) or absent for a single distribution.
    """
    total = 0.0
    n = None
    for p, q in zip(master_probs, learner_probs, strict=True):
        p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
        if p.shape != q.shape:
            raise ValueError(f"head shape mismatch {p.shape} vs {q.shape}")
        ce = -(p * np.log(np.maximum(q, PROB_FLOOR))).sum(axis=-1)
        if ce.ndim == 0:
            total += float(ce)
            n = 1
        else:
            n = ce.shape[0]
            total += float(ce.reshape(n, -1).sum())
    return total / n if n else 0.0


def distill_loss_and_grads(actor: Mlp, master: MasterPolicy, states):
    """Distillation loss of ``actor`` against ``master`` and its parameter gradients.

    Under a softmax head the logit gradient of H(p, softmax(z)) is
    softmax(z) - p, so the learner matching the master is stationary.
    """
    states = np.atleast_2d(states)
    raw, cache = actor.forward(states, return_cache=True)
    b = raw.shape[0]
    draw = np.zeros_like(raw)
    loss = 0.0
    for g, p in zip(actor.categorical_groups(), master.group_probs(states)):
        lq = log_softmax(raw[:, g.offset:g.stop].reshape(b, g.count, g.size))
        loss -= float((p * np.maximum(lq, math.log(PROB_FLOOR))).sum())
        draw[:, g.offset:g.stop] = ((np.exp(lq) - p) / b).reshape(b, -1)
    return loss / b, actor.backward(cache, draw)


def on_policy_objective(clip_obj: float, distill: float, eta: float) -> float:
    """Objective maximised by the on-policy learner."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    return clip_obj - eta * distill


def eta_schedule(update_idx: int, cfg: TransferConfig) -> float:
    return cfg.eta_initial * cfg.eta_decay ** update_idx


# -------------------------------------------------------- off-policy route


class ReplayBuffer:
    """Bounded FIFO of master rollouts on the target task.

    Segments are kept whole (time-major with their bootstrap states) so
    advantages can be re-estimated with the current critic. The oldest
    segments are evicted first.
    """

    def __init__(self, capacity: int = 50_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.segments: deque[Batch] = deque()

    def __len__(self) -> int:
        return sum(len(s) for s in self.segments)

    def add(self, segment: Batch) -> None:
        if len(segment) > self.capacity:
            raise ValueError("segment larger than buffer capacity")
        if segment.horizon < 1 or segment.last_states is None:
            raise ValueError("segments must be time-major rollouts with bootstrap states")
        self.segments.append(segment)
        while len(self) > self.capacity:
            self.segments.popleft()

    def with_advantages(self, critic: Mlp, discount: float, lam: float, reward_scale: float = 1.0) -> Batch:
        """All stored transitions with advantages recomputed under ``critic``."""
        if not self.segments:
            raise InsufficientSamples("replay buffer is empty")
        out = []
        for seg in self.segments:
            shape = (seg.horizon, -1)
            values = critic.forward(seg.states)[:, 0]
            last = critic.forward(seg.last_states)[:, 0]
            adv, ret = compute_gae((seg.rewards / reward_scale).reshape(shape), values.reshape(shape),
                                   seg.dones.reshape(shape), last, discount, lam)
            b = seg.subset(slice(None))
            b.values, b.advantages, b.return_targets = values, adv.ravel(), ret.ravel()
            out.append(b)
        return Batch.concat(out)


def select_by_advantage(advantages, threshold: float) -> np.ndarray:
    """Indices (in order) of entries whose advantage exceeds ``threshold``."""
    idx = np.flatnonzero(np.asarray(advantages, dtype=float) > threshold)
    if idx.size == 0:
        raise InsufficientSamples(f"no sample has advantage > {threshold}")
    return idx


def off_policy_objective(actor: Mlp, states, actions, master_log_prob, advantages, epsilon: float) -> float:
    """Clipped surrogate with ratio pi_theta / pi_master."""
    raw = actor.forward(np.atleast_2d(states))
    logp, _ = action_log_prob(actor, raw, np.atleast_2d(actions))
    ratio = np.exp(logp - np.asarray(master_log_prob, dtype=float))
    a = np.asarray(advantages, dtype=float)
    return float(np.mean(np.minimum(ratio * a, np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * a)))


def off_policy_loss(actor: Mlp, states, actions, master_log_prob, advantages, epsilon: float):
    """(-objective, gradients, diagnostics); the PPO loss with the master as behaviour."""
    return policy_loss(actor, states, actions, master_log_prob, advantages, epsilon)


def collect_master_segment(master: MasterPolicy, envs, critic: Mlp, rollout_ttis: int, rng) -> Batch:
    batch, _ = collect_rollout(envs, master.network, critic, rollout_ttis, rng)
    return batch


def off_policy_update(agent: PpoAgent, buffer: ReplayBuffer, cfg: TransferConfig, rng,
                      max_samples: int) -> dict:
    """One pass of advantage-filtered replay updates on the actor only."""
    scale = agent.scaler.scale if agent.scaler is not None else 1.0
    data = buffer.with_advantages(agent.critic, agent.cfg.discount, agent.cfg.gae_lambda, scale)
    try:
        idx = select_by_advantage(data.advantages, cfg.advantage_threshold)
    except InsufficientSamples:
        return {"offpolicy_selected": 0, "offpolicy_used": 0}
    assert np.all(data.advantages[idx] > cfg.advantage_threshold)
    used = np.sort(rng.choice(idx, size=min(max_samples, idx.size), replace=False))
    adv = data.advantages[used]
    adv = adv / (data.advantages.std() or 1.0)
    mb = agent.cfg.minibatch_size
    order = rng.permutation(used.size)
    for start in range(0, used.size, mb):
        sl = order[start:start + mb]
        rows = used[sl]
        _, grads, _ = off_policy_loss(agent.actor, data.states[rows], data.actions[rows],
                                      data.log_prob_behavior[rows], adv[sl], agent.cfg.clip_epsilon)
        agent.actor_step(grads)
    return {"offpolicy_selected": int(idx.size), "offpolicy_used": int(used.size)}


# ------------------------------------------------------------- experiment


def target_task(source: NetworkConfig) -> NetworkConfig:
    """Target scenario: steeper pathloss and heavier shadowing, same counts."""
    return source.replace(pathloss_slope_db=41.0, shadowing_sigma_db=8.0)


def make_envs(config: NetworkConfig, seed: int, n: int, offset: int = 0) -> list[OranEnv]:
    return [OranEnv(config, seed=seed * 1000 + offset + i) for i in range(n)]


def train_master(source_cfg: NetworkConfig, ppo_cfg: PpoConfig, num_updates: int, seed: int = 0):
    """Train a policy from scratch on the source task; returns (master, agent, log)."""
    envs = make_envs(source_cfg, seed, ppo_cfg.num_envs, offset=500)
    agent = PpoAgent.create(envs[0].obs_dim, envs[0].head_sizes, ppo_cfg, seed=seed + 7)
    log = train(agent, envs, num_updates, np.random.default_rng([seed, 11]))
    return MasterPolicy(agent.actor, "source"), agent, log


CURVE_COLUMNS = ("update_idx", "mean_episode_reward", "mean_ee")


def run_single(mode: str, target_cfg: NetworkConfig, seed: int, ppo_cfg: PpoConfig,
               transfer_cfg: TransferConfig, num_updates: int, master: MasterPolicy | None = None):
    """Train one target-task agent under ``mode``; returns (agent, log rows)."""
    if mode not in MODES:
        raise ConfigError(f"unknown transfer mode {mode!r}; expected one of {MODES}")
    if mode != "random_init" and master is None:
        raise ConfigError(f"mode {mode!r} needs a master policy (checkpoint missing)")
    envs = VecEnv(make_envs(target_cfg, seed, ppo_cfg.num_envs))
    agent = PpoAgent.create(envs.obs_dim, envs.head_sizes, ppo_cfg, seed=seed)
    rng = np.random.default_rng([seed, 3])
    actor_extra = after_update = None

    if mode == "on_policy":
        def actor_extra(u):
            eta = eta_schedule(u, transfer_cfg)

            def extra(states):
                loss, grads = distill_loss_and_grads(agent.actor, master, states)
                return eta * loss, [eta * g for g in grads]
            return extra

    elif mode == "off_policy":
        buffer = ReplayBuffer(transfer_cfg.replay_capacity)
        menvs = VecEnv(make_envs(target_cfg, seed, ppo_cfg.num_envs, offset=100))
        mrng = np.random.default_rng([seed, 5])
        per_seg = ppo_cfg.rollout_ttis * menvs.n_streams
        while len(buffer) < transfer_cfg.offpolicy_min_samples:
            buffer.add(collect_master_segment(master, menvs, agent.critic, ppo_cfg.rollout_ttis, mrng))

        def after_update(u, ag, batch):
            if u > 0 and u % transfer_cfg.replay_refresh_every == 0 and per_seg <= buffer.capacity:
                buffer.add(collect_master_segment(master, menvs, ag.critic, ppo_cfg.rollout_ttis, mrng))
            return off_policy_update(ag, buffer, transfer_cfg, rng, len(batch))

    log = train(agent, envs, num_updates, rng, actor_extra=actor_extra, after_update=after_update)
    for row in log:
        row["mode"] = mode
        row["seed"] = seed
    return agent, log


def run_transfer_experiment(mode: str, source_cfg: NetworkConfig, target_cfg: NetworkConfig, seeds,
                            ppo_cfg: PpoConfig | None = None, transfer_cfg: TransferConfig | None = None,
                            num_updates: int | None = None, master: MasterPolicy | None = None,
                            master_updates: int | None = None, out_dir=None) -> dict:
    """Learning curves on the target task for each seed.

    A master is trained on ``source_cfg`` when the mode needs one and none
    is given. With ``out_dir`` set, one CSV per seed is written there.
    """
    ppo_cfg = ppo_cfg or PpoConfig()
    transfer_cfg = transfer_cfg or TransferConfig()
    num_updates = num_updates or ppo_cfg.num_updates
    if mode not in MODES:
        raise ConfigError(f"unknown transfer mode {mode!r}; expected one of {MODES}")
    if mode != "random_init" and master is None:
        master, _, _ = train_master(source_cfg, ppo_cfg, master_updates or num_updates)
    curves = {}
    for seed in seeds:
        _, log = run_single(mode, target_cfg, seed, ppo_cfg, transfer_cfg, num_updates, master)
        curves[seed] = log
        if out_dir is not None:
            write_curve(Path(out_dir) / f"curve_{mode}_seed{seed}.csv", log)
    return curves


def write_curve(path, log) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for row in log:
            w.writerow([row["update_idx"], repr(row["mean_reward"]), repr(row["mean_ee"])])
