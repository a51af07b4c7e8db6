"""Central finite-difference checks of every hand-written gradient.

Each check perturbs one parameter entry at a time by +/-h, rebuilds the
scalar loss from scratch and compares the slope with the analytic
gradient. The reported error is ||analytic - numeric|| / max(||analytic||,
||numeric||), taken over all parameters of the network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import Mlp
from .ppo import critic_loss, make_actor, make_critic, policy_loss, sample_actions
from .transfer import MasterPolicy, distill_loss_and_grads, off_policy_objective

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass(frozen=True)
class GradCheck:
    name: str
    rel_error: float
    n_params: int
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return math.isfinite(self.rel_error) and self.rel_error < self.tolerance


def numeric_grads(net: Mlp, loss_fn, h: float = STEP) -> list[np.ndarray]:
    """d loss / d params by central differences; ``loss_fn(net) -> float``."""
    out = []
    for p in net.params():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss_fn(net)
            flat[i] = keep - h
            down = loss_fn(net)
            flat[i] = keep
            gflat[i] = (up - down) / (2.0 * h)
        out.append(g)
    return out


def relative_error(analytic, numeric) -> float:
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-300)
    return float(np.linalg.norm(a - n) / denom)


def check(name: str, net: Mlp, loss_fn, analytic, h: float = STEP) -> GradCheck:
    return GradCheck(name, relative_error(analytic, numeric_grads(net, loss_fn, h)), net.n_params)


# ------------------------------------------------------- pinned problems

OBS_DIM = 5
HEADS = (3, 2, 4)
HIDDEN = (8, 6)
BATCH = 12


def _problem(seed: int):
    rng = np.random.default_rng(seed)
    actor = make_actor(OBS_DIM, HEADS, HIDDEN, rng)
    states = rng.normal(size=(BATCH, OBS_DIM))
    actions, logp = sample_actions(actor, states, rng)
    return rng, actor, states, actions, logp


def _off_kink_behaviour(logp, rng, epsilon):
    """Behaviour log-probs whose ratios sit well inside or outside the clip band."""
    shift = rng.choice([-0.6, -0.05, 0.05, 0.6], size=logp.shape)
    ratio = np.exp(-shift)
    near = (np.abs(ratio - (1 - epsilon)) < 0.02) | (np.abs(ratio - (1 + epsilon)) < 0.02)
    assert not near.any()
    return logp + shift


def check_forward_backward(seed: int = 0, h: float = STEP) -> GradCheck:
    rng = np.random.default_rng(seed)
    net = Mlp([OBS_DIM, *HIDDEN], [(3, "categorical"), (2, "categorical"), (1, "scalar")], rng=rng)
    x = rng.normal(size=(BATCH, OBS_DIM))
    w = rng.normal(size=(BATCH, net.out_dim))

    def loss(n):
        return float(np.sum(w * n.forward(x)))

    _, cache = net.forward(x, return_cache=True)
    return check("nn.forward_backward", net, loss, net.backward(cache, w), h)


def check_policy_loss(seed: int = 1, h: float = STEP, epsilon: float = 0.2) -> GradCheck:
    rng, actor, states, actions, logp = _problem(seed)
    behaviour = _off_kink_behaviour(logp, rng, epsilon)
    adv = rng.normal(size=BATCH)
    _, grads, _ = policy_loss(actor, states, actions, behaviour, adv, epsilon)
    return check("ppo.policy_loss", actor,
                 lambda n: policy_loss(n, states, actions, behaviour, adv, epsilon)[0], grads, h)


def check_critic_loss(seed: int = 2, h: float = STEP) -> GradCheck:
    rng = np.random.default_rng(seed)
    critic = make_critic(OBS_DIM, HIDDEN, rng)
    states = rng.normal(size=(BATCH, OBS_DIM))
    targets = rng.normal(size=BATCH)
    _, grads = critic_loss(critic, states, targets)
    return check("ppo.critic_loss", critic, lambda n: critic_loss(n, states, targets)[0], grads, h)


def check_off_policy(seed: int = 3, h: float = STEP, epsilon: float = 0.2) -> GradCheck:
    """Gradient of the replay loss against the objective evaluated independently."""
    rng, actor, states, actions, logp = _problem(seed)
    master_lp = _off_kink_behaviour(logp, rng, epsilon)
    adv = np.abs(rng.normal(size=BATCH)) + 0.1
    _, grads, _ = policy_loss(actor, states, actions, master_lp, adv, epsilon)
    return check("transfer.off_policy_objective", actor,
                 lambda n: -off_policy_objective(n, states, actions, master_lp, adv, epsilon), grads, h)


def check_distill(seed: int = 4, h: float = STEP) -> GradCheck:
    rng, actor, states, _, _ = _problem(seed)
    master = MasterPolicy(make_actor(OBS_DIM, HEADS, HIDDEN, rng))
    _, grads = distill_loss_and_grads(actor, master, states)
    return check("transfer.distill_loss", actor,
                 lambda n: distill_loss_and_grads(n, master, states)[0], grads, h)


ALL_CHECKS = (check_forward_backward, check_policy_loss, check_critic_loss, check_off_policy, check_distill)


def run_all(h: float = STEP) -> list[GradCheck]:
    return [fn(h=h) for fn in ALL_CHECKS]
