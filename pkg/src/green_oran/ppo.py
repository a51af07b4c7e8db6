"""Clipped PPO over factorised categorical action heads.

Rollouts are time-major: a batch collected from E environments with A
agents each holds T*E*A transitions, streamed as E*A parallel
trajectories for advantage estimation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import AdamState, Mlp, adam_step, clip_grad_norm, log_softmax


@dataclass(frozen=True)
class PpoConfig:
    clip_epsilon: float = 0.2
    discount: float = 0.99
    gae_lambda: float = 0.95
    epochs_per_batch: int = 4
    minibatch_size: int = 64
    actor_lr: float = 1e-5
    critic_lr: float = 1e-3
    rollout_ttis: int = 200
    num_envs: int = 2
    num_updates: int = 100
    hidden_sizes: tuple = (128, 128)
    max_grad_norm: float = 0.5
    normalize_rewards: bool = True

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if not 0.0 <= self.discount <= 1.0 or not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("discount and gae_lambda must lie in [0, 1]")
        for name in ("epochs_per_batch", "minibatch_size", "rollout_ttis", "num_envs", "num_updates"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    log_prob_behavior: float
    reward: float
    value: float
    done: bool
    advantage: float = math.nan
    return_target: float = math.nan


@dataclass
class Batch:
    """Flat arrays, one row per transition."""

    states: np.ndarray
    actions: np.ndarray
    log_prob_behavior: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray
    return_targets: np.ndarray
    # set for time-major rollouts: rows are (t, stream) flattened
    horizon: int = 0
    last_values: np.ndarray | None = None
    last_states: np.ndarray | None = None

    _ROW_FIELDS = ("states", "actions", "log_prob_behavior", "rewards", "values", "dones",
                   "advantages", "return_targets")

    def __len__(self) -> int:
        return self.states.shape[0]

    def __getitem__(self, i) -> Transition:
        return Transition(self.states[i], self.actions[i], float(self.log_prob_behavior[i]),
                          float(self.rewards[i]), float(self.values[i]), bool(self.dones[i]),
                          float(self.advantages[i]), float(self.return_targets[i]))

    def subset(self, idx) -> "Batch":
        return Batch(**{name: getattr(self, name)[idx] for name in self._ROW_FIELDS})

    @classmethod
    def concat(cls, batches) -> "Batch":
        return cls(**{name: np.concatenate([getattr(b, name) for b in batches]) for name in cls._ROW_FIELDS})


# ------------------------------------------------------------ policy math


def make_actor(obs_dim: int, head_sizes, hidden=(128, 128), rng=None) -> Mlp:
    return Mlp([obs_dim, *hidden], [(s, "categorical") for s in head_sizes], rng=rng)


def make_critic(obs_dim: int, hidden=(128, 128), rng=None) -> Mlp:
    return Mlp([obs_dim, *hidden], [(1, "scalar")], rng=rng)


def group_log_probs(actor: Mlp, raw: np.ndarray) -> list[np.ndarray]:
    """Log-probabilities per categorical group, each (B, count, size)."""
    return [log_softmax(raw[:, g.offset:g.stop].reshape(raw.shape[0], g.count, g.size))
            for g in actor.categorical_groups()]


def _split_actions(actor: Mlp, actions: np.ndarray):
    start = 0
    for g in actor.categorical_groups():
        yield g, actions[:, start:start + g.count]
        start += g.count


def action_log_prob(actor: Mlp, raw: np.ndarray, actions: np.ndarray):
    """Joint log pi(a|s) summed over heads, plus d(log pi)/d(raw)."""
    b = raw.shape[0]
    logp = np.zeros(b)
    draw = np.zeros_like(raw)
    for (g, a), lp in zip(_split_actions(actor, actions), group_log_probs(actor, raw)):
        picked = np.take_along_axis(lp, a[:, :, None], axis=2)[:, :, 0]
        logp += picked.sum(axis=1)
        d = -np.exp(lp)
        np.put_along_axis(d, a[:, :, None], np.take_along_axis(d, a[:, :, None], axis=2) + 1.0, axis=2)
        draw[:, g.offset:g.stop] = d.reshape(b, -1)
    return logp, draw


def sample_actions(actor: Mlp, states: np.ndarray, rng: np.random.Generator, greedy: bool = False):
    """Draw one index per head; returns (actions (B, heads), joint log-prob (B,))."""
    raw = actor.forward(np.atleast_2d(states))
    cols = []
    for lp in group_log_probs(actor, raw):
        if greedy:
            cols.append(lp.argmax(axis=2))
        else:
            cdf = np.cumsum(np.exp(lp), axis=2)
            u = rng.random(lp.shape[:2] + (1,))
            cols.append(np.minimum((cdf < u).sum(axis=2), lp.shape[2] - 1))
    actions = np.concatenate(cols, axis=1).astype(np.int64)
    logp, _ = action_log_prob(actor, raw, actions)
    return actions, logp


def clipped_objective(ratio, advantage, epsilon: float):
    """Pessimistic PPO surrogate min(r*A, clip(r, 1-eps, 1+eps)*A)."""
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    out = np.minimum(ratio * advantage, np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantage)
    return float(out) if out.ndim == 0 else out


def surrogate_grad_weight(ratio, advantage, epsilon):
    """d(surrogate)/d(log pi): r*A where the unclipped branch is active, else 0."""
    clipped = ((advantage > 0) & (ratio > 1.0 + epsilon)) | ((advantage < 0) & (ratio < 1.0 - epsilon))
    return np.where(clipped, 0.0, ratio * advantage), clipped


def policy_loss(actor: Mlp, states, actions, log_prob_behavior, advantages, epsilon: float):
    """Negative mean clipped surrogate; returns (loss, grads, diagnostics)."""
    raw, cache = actor.forward(np.atleast_2d(states), return_cache=True)
    logp, dlogp = action_log_prob(actor, raw, actions)
    ratio = np.exp(logp - log_prob_behavior)
    loss = -float(np.mean(clipped_objective(ratio, advantages, epsilon)))
    w, clipped = surrogate_grad_weight(ratio, advantages, epsilon)
    grads = actor.backward(cache, dlogp * (-w / len(w))[:, None])
    return loss, grads, {"mean_ratio": float(ratio.mean()), "clip_fraction": float(clipped.mean())}


def critic_loss(critic: Mlp, states, return_targets):
    """Mean squared error of V(s) against the return targets."""
    raw, cache = critic.forward(np.atleast_2d(states), return_cache=True)
    err = raw[:, 0] - return_targets
    grads = critic.backward(cache, (2.0 * err / len(err))[:, None])
    return float(np.mean(err ** 2)), grads


def compute_gae(rewards, values, dones, last_values, discount: float, lam: float):
    """Generalised advantage estimates over time-major (T, S) arrays.

    ``dones[t]`` marks that the episode ended after step t, so no value is
    bootstrapped across it. Returns (advantages, return targets).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    notdone = 1.0 - np.asarray(dones, dtype=float)
    t_len = rewards.shape[0]
    adv = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0])
    next_v = np.asarray(last_values, dtype=float)
    for t in range(t_len - 1, -1, -1):
        delta = rewards[t] + discount * next_v * notdone[t] - values[t]
        running = delta + discount * lam * notdone[t] * running
        adv[t] = running
        next_v = values[t]
    return adv, adv + values


def normalize(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    return (adv - adv.mean()) / (std if std > 1e-12 else 1.0)


# -------------------------------------------------------------- rollouts


class VecEnv:
    """Runs several environments in lock step, resetting them at episode end."""

    def __init__(self, envs):
        self.envs = list(envs)
        self.n_agents = self.envs[0].n_agents
        self.obs_dim = self.envs[0].obs_dim
        self.head_sizes = self.envs[0].head_sizes
        self.obs = None

    @property
    def n_streams(self) -> int:
        return len(self.envs) * self.n_agents

    def reset(self) -> np.ndarray:
        self.obs = np.concatenate([e.reset() for e in self.envs])
        return self.obs


@dataclass
class RolloutStats:
    mean_reward: float
    mean_ee: float
    psi_mean: float
    outage_rate: float
    rewards: np.ndarray = field(repr=False, default=None)


def collect_rollout(envs, actor: Mlp, critic: Mlp, rollout_ttis: int, rng: np.random.Generator):
    """Step every environment ``rollout_ttis`` times under the current policy.

    Returns (batch, stats); the batch has advantages unset (NaN).
    """
    vec = envs if isinstance(envs, VecEnv) else VecEnv(envs)
    if vec.obs is None:
        vec.reset()
    a, s_n = vec.n_agents, vec.n_streams
    states = np.zeros((rollout_ttis, s_n, vec.obs_dim))
    actions = np.zeros((rollout_ttis, s_n, len(vec.head_sizes)), dtype=np.int64)
    logps = np.zeros((rollout_ttis, s_n))
    rewards = np.zeros((rollout_ttis, s_n))
    values = np.zeros((rollout_ttis, s_n))
    dones = np.zeros((rollout_ttis, s_n), dtype=bool)
    ee, psi, phi = [], [], []
    for t in range(rollout_ttis):
        obs = vec.obs
        act, lp = sample_actions(actor, obs, rng)
        states[t], actions[t], logps[t] = obs, act, lp
        values[t] = critic.forward(obs)[:, 0]
        next_obs = []
        for i, env in enumerate(vec.envs):
            sl = slice(i * a, (i + 1) * a)
            o, r, done, info = env.step(act[sl])
            rewards[t, sl] = r
            dones[t, sl] = done
            if hasattr(info, "ee"):
                ee.append(info.ee)
                psi.append(np.mean([d.psi for d in env.duals]))
                phi.append(np.mean([d.phi for d in env.duals]))
            next_obs.append(env.reset() if done else o)
        vec.obs = np.concatenate(next_obs)
    nan = np.full(rewards.size, np.nan)
    batch = Batch(
        states=states.reshape(-1, vec.obs_dim), actions=actions.reshape(-1, actions.shape[2]),
        log_prob_behavior=logps.ravel(), rewards=rewards.ravel(), values=values.ravel(),
        dones=dones.ravel(), advantages=nan, return_targets=nan.copy(),
        horizon=rollout_ttis, last_values=critic.forward(vec.obs)[:, 0], last_states=vec.obs.copy(),
    )
    stats = RolloutStats(
        mean_reward=float(rewards.mean()),
        mean_ee=float(np.mean(ee)) if ee else math.nan,
        psi_mean=float(np.mean(psi)) if psi else math.nan,
        outage_rate=float(np.mean(phi)) if phi else math.nan,
        rewards=rewards,
    )
    return batch, stats


def attach_advantages(batch: Batch, discount: float, lam: float) -> Batch:
    """Fill advantages and return targets of a time-major rollout batch in place."""
    shape = (batch.horizon, -1)
    adv, ret = compute_gae(batch.rewards.reshape(shape), batch.values.reshape(shape),
                           batch.dones.reshape(shape), batch.last_values, discount, lam)
    batch.advantages = adv.ravel()
    batch.return_targets = ret.ravel()
    return batch


# ---------------------------------------------------------------- update


class NonFiniteLoss(FloatingPointError):
    """A loss turned NaN or infinite; ``diagnostics`` holds the offending state."""

    def __init__(self, message, diagnostics):
        super().__init__(f"{message}: {diagnostics}")
        self.diagnostics = diagnostics


@dataclass
class ReturnScaler:
    """Running variance of per-stream discounted returns (Welford merge).

    Rewards are divided by the running return std before advantage
    estimation, which keeps critic targets near unit scale whatever the
    magnitude of the penalty terms.
    """

    discount: float = 0.99
    count: float = 1e-4
    mean: float = 0.0
    var: float = 1.0
    running: np.ndarray = None

    def observe(self, rewards: np.ndarray, dones: np.ndarray) -> None:
        """Feed a time-major (T, S) block of raw rewards."""
        if self.running is None or self.running.shape[0] != rewards.shape[1]:
            self.running = np.zeros(rewards.shape[1])
        rets = np.empty_like(rewards)
        for t in range(rewards.shape[0]):
            self.running = self.running * self.discount + rewards[t]
            rets[t] = self.running
            self.running = np.where(dones[t], 0.0, self.running)
        n, m, v = rets.size, rets.mean(), rets.var()
        tot = self.count + n
        d = m - self.mean
        self.var = (self.var * self.count + v * n + d * d * self.count * n / tot) / tot
        self.mean += d * n / tot
        self.count = tot

    @property
    def scale(self) -> float:
        return math.sqrt(self.var + 1e-8)


@dataclass
class PpoAgent:
    actor: Mlp
    critic: Mlp
    actor_opt: AdamState
    critic_opt: AdamState
    cfg: PpoConfig
    scaler: ReturnScaler = None

    @classmethod
    def create(cls, obs_dim: int, head_sizes, cfg: PpoConfig, seed: int) -> "PpoAgent":
        ss = np.random.SeedSequence([seed, 101])
        ra, rc = (np.random.default_rng(s) for s in ss.spawn(2))
        actor = make_actor(obs_dim, head_sizes, cfg.hidden_sizes, ra)
        critic = make_critic(obs_dim, cfg.hidden_sizes, rc)
        return cls(actor, critic, AdamState.for_net(actor, cfg.actor_lr),
                   AdamState.for_net(critic, cfg.critic_lr), cfg,
                   ReturnScaler(cfg.discount) if cfg.normalize_rewards else None)

    def act(self, states, rng, greedy=False):
        return sample_actions(self.actor, states, rng, greedy)

    def actor_step(self, grads) -> float:
        grads, norm = clip_grad_norm(grads, self.cfg.max_grad_norm)
        adam_step(self.actor, grads, self.actor_opt)
        return norm

    def critic_step(self, grads) -> float:
        grads, norm = clip_grad_norm(grads, self.cfg.max_grad_norm)
        adam_step(self.critic, grads, self.critic_opt)
        return norm


def update(agent: PpoAgent, batch: Batch, rng: np.random.Generator, actor_extra=None) -> dict:
    """Several epochs of minibatch PPO on ``batch`` (advantages attached).

    ``actor_extra(states) -> (loss, grads)`` adds a term to the actor loss
    on each minibatch (used for distillation).
    """
    cfg = agent.cfg
    adv = normalize(batch.advantages)
    n = len(batch)
    p_losses, c_losses, clip_fr, ratios = [], [], [], []
    for _ in range(cfg.epochs_per_batch):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            s = batch.states[idx]
            pl, pg, diag = policy_loss(agent.actor, s, batch.actions[idx],
                                       batch.log_prob_behavior[idx], adv[idx], cfg.clip_epsilon)
            if actor_extra is not None:
                el, eg = actor_extra(s)
                pl += el
                pg = [a + b for a, b in zip(pg, eg)]
            cl, cg = critic_loss(agent.critic, s, batch.return_targets[idx])
            if not (math.isfinite(pl) and math.isfinite(cl)):
                raise NonFiniteLoss("non-finite PPO loss", {
                    "policy_loss": pl, "critic_loss": cl, "mean_ratio": diag["mean_ratio"],
                    "adv_range": (float(adv.min()), float(adv.max())),
                    "return_range": (float(batch.return_targets.min()), float(batch.return_targets.max())),
                })
            agent.actor_step(pg)
            agent.critic_step(cg)
            p_losses.append(pl)
            c_losses.append(cl)
            clip_fr.append(diag["clip_fraction"])
            ratios.append(diag["mean_ratio"])
    return {
        "policy_loss": float(np.mean(p_losses)),
        "critic_loss": float(np.mean(c_losses)),
        "clip_fraction": float(np.mean(clip_fr)),
        "mean_ratio": float(np.mean(ratios)),
    }


LOG_COLUMNS = ("update_idx", "mean_reward", "mean_ee", "policy_loss", "critic_loss",
               "clip_fraction", "psi_mean", "outage_rate")


def train(agent: PpoAgent, envs, num_updates: int, rng: np.random.Generator, actor_extra=None,
          after_update=None) -> list[dict]:
    """Alternate rollout collection and PPO updates; one log row per update.

    ``actor_extra(update_idx)`` may return a per-minibatch extra-loss
    callable; ``after_update(update_idx, agent, batch)`` runs after each
    update and may return extra log fields.
    """
    vec = envs if isinstance(envs, VecEnv) else VecEnv(envs)
    log = []
    for u in range(num_updates):
        batch, stats = collect_rollout(vec, agent.actor, agent.critic, agent.cfg.rollout_ttis, rng)
        if agent.scaler is not None:
            agent.scaler.observe(stats.rewards, batch.dones.reshape(stats.rewards.shape))
            batch.rewards = batch.rewards / agent.scaler.scale
        attach_advantages(batch, agent.cfg.discount, agent.cfg.gae_lambda)
        extra = actor_extra(u) if actor_extra is not None else None
        diag = update(agent, batch, rng, extra)
        row = {"update_idx": u, "mean_reward": stats.mean_reward, "mean_ee": stats.mean_ee,
               "policy_loss": diag["policy_loss"], "critic_loss": diag["critic_loss"],
               "clip_fraction": diag["clip_fraction"], "psi_mean": stats.psi_mean,
               "outage_rate": stats.outage_rate}
        if after_update is not None:
            row.update(after_update(u, agent, batch) or {})
        log.append(row)
    return log


EVAL_COLUMNS = ("tti", "ee", "mean_reward", "psi_mean", "outage_rate")


def evaluate_policy(actor: Mlp, env, ttis: int, rng: np.random.Generator | None = None,
                    greedy: bool = True) -> list[dict]:
    """Run ``actor`` on one environment for ``ttis`` steps; one row per TTI."""
    rng = rng if rng is not None else np.random.default_rng(0)
    obs = env.reset()
    rows = []
    for t in range(ttis):
        act, _ = sample_actions(actor, obs, rng, greedy=greedy)
        obs, r, done, info = env.step(act)
        duals = env.duals
        rows.append({"tti": t, "ee": float(info.ee), "mean_reward": float(np.mean(r)),
                     "psi_mean": float(np.mean([d.psi for d in duals])),
                     "outage_rate": float(np.mean([d.phi for d in duals]))})
        if done:
            obs = env.reset()
    return rows
