"""Brute-force ground truth for tiny instances.

The energy-efficiency evaluation here is written out again in plain
scalar Python, sharing no code with :mod:`green_oran.phy`,
:mod:`green_oran.energy` or :mod:`green_oran.env`. Only the numeric
parameters of the configuration are shared.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .env import AllocationAction, action_head_sizes, decode_action, evaluate_allocation, repair_action
from .net import ChannelRealization, NetworkConfig, build_network, sample_channels
from .phy import PhyConstants

MAX_ENUMERABLE = 10**6
TINY_LIMITS = {"num_rus": 2, "num_rbs": 2, "minislots_per_tti": 2, "embb_users_per_ru": 2,
               "urllc_users_per_ru": 2, "num_power_levels": 3}


class ActionSpaceTooLarge(ValueError):
    pass


class OracleMismatch(AssertionError):
    """Environment and oracle disagree; ``breakdown`` holds per-term values."""

    def __init__(self, message, breakdown):
        super().__init__(f"{message}: {breakdown}")
        self.breakdown = breakdown


@dataclass(frozen=True)
class TinyInstance:
    config: NetworkConfig
    channel: ChannelRealization
    arrivals: tuple  # packets per RU per TTI

    def __post_init__(self):
        c = self.config
        sizes = {"num_rus": c.num_rus, "num_rbs": c.num_rbs, "minislots_per_tti": c.phy.minislots_per_tti,
                 "embb_users_per_ru": c.embb_users_per_ru, "urllc_users_per_ru": c.urllc_users_per_ru,
                 "num_power_levels": c.num_power_levels}
        for name, value in sizes.items():
            if value > TINY_LIMITS[name]:
                raise ValueError(f"tiny instance needs {name} <= {TINY_LIMITS[name]}, got {value}")
        if len(self.arrivals) != c.num_rus:
            raise ValueError("one arrival count per RU required")
        size = action_space_size(c)
        if size > MAX_ENUMERABLE:
            raise ActionSpaceTooLarge(f"joint action space has {size} actions (limit {MAX_ENUMERABLE})")


def default_tiny_config() -> NetworkConfig:
    return NetworkConfig(
        num_dus=1, rus_per_du=2, embb_users_per_ru=1, urllc_users_per_ru=1, num_rbs=2,
        phy=PhyConstants(minislots_per_tti=2), num_power_levels=3,
        urllc_arrival_rate=0.5, embb_min_rate_bps=1e5, rng_seed=11,
    )


def default_tiny_instance() -> TinyInstance:
    """The pinned instance used for the differential and quality checks."""
    cfg = default_tiny_config()
    channel = sample_channels(build_network(cfg), 0, np.random.default_rng(2024))
    return TinyInstance(cfg, channel, (1, 1))


# ------------------------------------------------------------ enumeration


def _rb_choices(config: NetworkConfig, puncture: bool = True) -> list:
    """Per-RB options: None for idle, else (user, puncture pattern, level)."""
    m = config.phy.minislots_per_tti
    users = [-1] + list(range(config.embb_users_per_ru))
    patterns = (list(itertools.product([-1] + list(range(config.urllc_users_per_ru)), repeat=m))
                if puncture else [(-1,) * m])
    out = [None]
    for u in users:
        for pat in patterns:
            if u < 0 and all(x < 0 for x in pat):
                continue
            out.extend((u, pat, lvl) for lvl in range(config.num_power_levels))
    return out


def action_space_size(config: NetworkConfig, puncture: bool = True) -> int:
    m = config.phy.minislots_per_tti
    per_rb = (config.embb_users_per_ru + 1) * ((config.urllc_users_per_ru + 1) ** m if puncture else 1) - 1
    return (per_rb * config.num_power_levels + 1) ** (config.num_rbs * config.num_rus)


def _build(config: NetworkConfig, per_rb) -> list[AllocationAction]:
    k, m = config.num_rbs, config.phy.minislots_per_tti
    p_max = config.power.p_max_w
    top = max(config.num_power_levels - 1, 1)
    actions = []
    for ru in range(config.num_rus):
        choices = per_rb[ru * k:(ru + 1) * k]
        n_active = sum(c is not None for c in choices)
        users, powers, punct = [], [], []
        for c in choices:
            if c is None:
                users.append(-1)
                powers.append(0.0)
                punct.append((-1,) * m)
            else:
                users.append(c[0])
                frac = c[2] / top if config.num_power_levels > 1 else 1.0
                powers.append(frac * p_max / n_active)
                punct.append(c[1])
        actions.append(AllocationAction(np.array(users), np.array(powers), np.array(punct)))
    return actions


def enumerate_actions(instance_or_config, puncture: bool = True) -> Iterator[list[AllocationAction]]:
    """Every distinct feasible joint action, in lexicographic order.

    Each (RU, RB) slot is a digit over the per-RB option list, whose first
    option is idle; the all-idle action therefore comes first.
    """
    config = getattr(instance_or_config, "config", instance_or_config)
    size = action_space_size(config, puncture)
    if size > MAX_ENUMERABLE:
        raise ActionSpaceTooLarge(f"joint action space has {size} actions (limit {MAX_ENUMERABLE})")
    choices = _rb_choices(config, puncture)
    for combo in itertools.product(choices, repeat=config.num_rbs * config.num_rus):
        yield _build(config, combo)


# ------------------------------------------------- independent evaluation


def _q_inv_bisect(x: float) -> float:
    """z with 0.5*erfc(z/sqrt 2) = x, by plain bisection."""
    lo, hi = -40.0, 40.0
    while True:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            return mid
        if 0.5 * math.erfc(mid / math.sqrt(2.0)) > x:
            lo = mid
        else:
            hi = mid


class ScalarEvaluator:
    """Straight-line EE computation for one pinned TTI."""

    def __init__(self, config: NetworkConfig, channel: ChannelRealization):
        c = config
        self.c = c
        self.ge = channel.embb_gain.tolist()
        self.gu = channel.urllc_gain.tolist()
        self.bw = c.phy.rb_bandwidth_hz
        self.m = c.phy.minislots_per_tti
        self.noise = c.phy.noise_power_w
        self.blk = c.phy.subcarriers_per_rb * c.phy.symbols_per_minislot
        self.qinv = _q_inv_bisect(c.phy.urllc_error_target)

    def terms(self, actions) -> dict:
        c = self.c
        n_ru, k_n, m = c.num_rus, c.num_rbs, self.m
        we, wu = c.embb_users_per_ru, c.urllc_users_per_ru
        users = [[int(x) for x in a.rb_user] for a in actions]
        punct = [[[int(x) for x in row] for row in a.puncture] for a in actions]
        power = []
        for l in range(n_ru):
            row = []
            for k in range(k_n):
                on = users[l][k] >= 0 or any(x >= 0 for x in punct[l][k])
                row.append(float(actions[l].rb_power_w[k]) if on else 0.0)
            power.append(row)
        embb = [0.0] * n_ru
        urllc = [0.0] * n_ru
        for l in range(n_ru):
            for k in range(k_n):
                cells = punct[l][k]
                n_p = sum(1 for x in cells if x >= 0)
                u = users[l][k]
                if u >= 0:
                    j = l * we + u
                    s = power[l][k] * self.ge[l][j][k]
                    i = 0.0
                    for l2 in range(n_ru):
                        if l2 != l:
                            i += power[l2][k] * self.ge[l2][j][k]
                    omega = s / (i + self.noise)
                    embb[l] += self.bw * (1.0 - n_p / m) * math.log2(1.0 + omega)
                for w in range(wu):
                    n_w = sum(1 for x in cells if x == w)
                    if n_w == 0:
                        continue
                    j = l * wu + w
                    s = power[l][k] * self.gu[l][j][k]
                    i = 0.0
                    for l2 in range(n_ru):
                        if l2 != l:
                            i += power[l2][k] * self.gu[l2][j][k]
                    omega = s / (i + self.noise)
                    disp = 1.0 - 1.0 / ((1.0 + omega) * (1.0 + omega))
                    eff = math.log2(1.0 + omega) - math.sqrt(disp / self.blk) * self.qinv
                    if eff > 0.0:
                        urllc[l] += self.bw * (n_w / m) * eff
        rate = sum(embb) + sum(urllc)
        tx = sum(sum(r) for r in power)
        total_power = tx + n_ru * c.power.ru_circuit_power_w + c.num_dus * c.power.du_power_w
        return {"embb_rate": embb, "urllc_rate": urllc, "tx_power": tx,
                "total_power": total_power, "ee": rate / total_power}

    def ee(self, actions) -> float:
        return self.terms(actions)["ee"]


def brute_force_best(instance: TinyInstance):
    """(best joint action, EE*, EE table in enumeration order)."""
    ev = ScalarEvaluator(instance.config, instance.channel)
    table = []
    best, best_ee = None, -math.inf
    for actions in enumerate_actions(instance):
        e = ev.ee(actions)
        table.append(e)
        if e > best_ee:
            best, best_ee = actions, e
    return best, best_ee, np.array(table)


def env_ee(instance: TinyInstance, actions) -> float:
    return evaluate_allocation(actions, instance.channel, instance.config).network_ee


def cross_check(instance: TinyInstance, actions, env_evaluator: Callable | None = None,
                rtol: float = 1e-12):
    """Compare oracle and environment EE for one joint action.

    Returns (oracle EE, env EE, absolute difference); raises
    :class:`OracleMismatch` with a per-term breakdown beyond ``rtol``.
    """
    ev = ScalarEvaluator(instance.config, instance.channel)
    terms = ev.terms(actions)
    got = float((env_evaluator or env_ee)(instance, actions))
    want = terms["ee"]
    diff = abs(want - got)
    if diff > rtol * max(abs(want), 1e-300):
        met = evaluate_allocation(actions, instance.channel, instance.config)
        raise OracleMismatch("oracle and environment EE differ", {
            "oracle": terms, "env_ee": got,
            "env_embb_rate": met.embb_rates.sum(axis=1).tolist(),
            "env_urllc_rate": met.urllc_rates.sum(axis=1).tolist(),
            "env_total_power": float(met.du_power.sum()),
        })
    return want, got, diff


def random_policy(instance_or_config, rng: np.random.Generator) -> Iterator[list[AllocationAction]]:
    """Endless stream of joint actions: uniform head indices, decoded then repaired."""
    config = getattr(instance_or_config, "config", instance_or_config)
    sizes = np.array(action_head_sizes(config))
    while True:
        idx = (rng.random((config.num_rus, sizes.size)) * sizes).astype(np.int64)
        yield [repair_action(decode_action(row, config), config) for row in idx]
