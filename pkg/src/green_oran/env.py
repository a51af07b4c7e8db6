"""Per-RU Markov decision process for joint RB, power and puncturing control.

One decision unit per RU: the shared policy reads that RU's local state
and emits an :class:`AllocationAction` for its K RBs. Every RU of a DU
shares the DU's energy-efficiency term in its reward.

Action head layout for a flat integer action vector (one RU)::

    [user_0 .. user_{K-1}] [power_0 .. power_{K-1}] [punct_{0,0} .. punct_{K-1,M-1}]

User and puncture heads use index 0 for "none" and ``i + 1`` for user ``i``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .energy import energy_efficiency
from .net import (
    ChannelRealization,
    HarqProcess,
    NetworkConfig,
    NetworkState,
    UrllcTraffic,
    build_network,
    harq_step,
    harq_success_probability,
    sample_channels,
    sample_urllc_arrivals,
)
from .phy import urllc_rb_bracket

NONE = -1
GAIN_DB_FLOOR = -150.0
GAIN_DB_CEIL = -30.0


class ContractViolation(RuntimeError):
    """An infeasible action reached :meth:`OranEnv.step_actions`."""


# ---------------------------------------------------------------- actions


@dataclass
class AllocationAction:
    """One RU's decision for a TTI.

    rb_user[k]     eMBB user on RB k, or NONE
    rb_power_w[k]  transmit power on RB k (shared by eMBB and punctured URLLC)
    puncture[k, m] URLLC user puncturing mini-slot m of RB k, or NONE
    """

    rb_user: np.ndarray
    rb_power_w: np.ndarray
    puncture: np.ndarray

    def copy(self) -> "AllocationAction":
        return AllocationAction(self.rb_user.copy(), self.rb_power_w.copy(), self.puncture.copy())

    def __eq__(self, other):
        if not isinstance(other, AllocationAction):
            return NotImplemented
        return (np.array_equal(self.rb_user, other.rb_user)
                and np.array_equal(self.rb_power_w, other.rb_power_w)
                and np.array_equal(self.puncture, other.puncture))


def idle_action(config: NetworkConfig) -> AllocationAction:
    k, m = config.num_rbs, config.phy.minislots_per_tti
    return AllocationAction(np.full(k, NONE), np.zeros(k), np.full((k, m), NONE))


def power_levels(config: NetworkConfig, active_rbs: int | None = None) -> np.ndarray:
    """Discrete per-RB power set, evenly spaced on [0, P_max / K_active].

    Spreading the budget over active RBs only means any mix of levels
    stays within P_max. ``active_rbs`` defaults to all K RBs.
    """
    n = config.num_power_levels
    frac = np.linspace(0.0, 1.0, n) if n > 1 else np.ones(1)
    k_active = config.num_rbs if active_rbs is None else max(int(active_rbs), 1)
    return frac * (config.power.p_max_w / k_active)


def action_head_sizes(config: NetworkConfig) -> list[int]:
    k, m = config.num_rbs, config.phy.minislots_per_tti
    return ([config.embb_users_per_ru + 1] * k + [config.num_power_levels] * k
            + [config.urllc_users_per_ru + 1] * (k * m))


def _active(users: np.ndarray, punct: np.ndarray) -> np.ndarray:
    return (users >= 0) | (punct >= 0).any(axis=-1)


def decode_action(indices, config: NetworkConfig) -> AllocationAction:
    """Head indices to an action. Idle RBs get zero power."""
    idx = np.asarray(indices, dtype=np.int64)
    k, m = config.num_rbs, config.phy.minislots_per_tti
    users = idx[:k] - 1
    punct = idx[2 * k:].reshape(k, m) - 1
    active = _active(users, punct)
    levels = power_levels(config, int(active.sum()))
    return AllocationAction(rb_user=users, rb_power_w=np.where(active, levels[idx[k:2 * k]], 0.0),
                            puncture=punct)


def decode_actions(indices: np.ndarray, config: NetworkConfig) -> list[AllocationAction]:
    return [decode_action(row, config) for row in np.atleast_2d(indices)]


def encode_action(action: AllocationAction, config: NetworkConfig) -> np.ndarray:
    """Inverse of :func:`decode_action` on active RBs; powers snap to the
    nearest level and idle RBs encode as level 0."""
    active = _active(np.asarray(action.rb_user), np.asarray(action.puncture))
    levels = power_levels(config, int(active.sum()))
    p_idx = np.abs(action.rb_power_w[:, None] - levels[None, :]).argmin(axis=1)
    p_idx = np.where(active, p_idx, 0)
    return np.concatenate([action.rb_user + 1, p_idx, action.puncture.ravel() + 1]).astype(np.int64)


def repair_action(raw: AllocationAction, config: NetworkConfig) -> AllocationAction:
    """Project a raw action onto the feasible set.

    Out-of-range user indices become NONE, negative or non-finite powers
    become zero, and powers are scaled by P_max / sum(p) when the per-RU
    budget is exceeded. Feasible input comes back unchanged.
    """
    k, m = config.num_rbs, config.phy.minislots_per_tti
    users = np.asarray(raw.rb_user, dtype=np.int64).reshape(k)
    users = np.where((users >= 0) & (users < config.embb_users_per_ru), users, NONE)
    punct = np.asarray(raw.puncture, dtype=np.int64).reshape(k, m)
    punct = np.where((punct >= 0) & (punct < config.urllc_users_per_ru), punct, NONE)
    power = np.asarray(raw.rb_power_w, dtype=float).reshape(k)
    power = np.where(np.isfinite(power) & (power > 0), power, 0.0)
    p_max = config.power.p_max_w
    total = power.sum()
    if total > p_max:
        power = power * (p_max / total)
        while power.sum() > p_max:
            power = power * (1.0 - 2.0**-52)
    return AllocationAction(users, power, punct)


# ------------------------------------------------------------ constraints


@dataclass
class BinaryAllocation:
    """Indicator form: alpha[w, k] for eMBB, delta[w, k, m] for URLLC."""

    alpha: np.ndarray
    delta: np.ndarray
    power_w: np.ndarray


@dataclass
class ConstraintReport:
    one_embb_user_per_rb: bool
    one_urllc_user_per_minislot: bool
    punctured_within_tti: bool
    power_budget: bool
    power_nonnegative: bool
    embb_assignment_binary: bool
    puncture_binary: bool
    urllc_reliability: bool | None = None
    embb_min_rate: bool | None = None

    @property
    def per_tti_ok(self) -> bool:
        return all((self.one_embb_user_per_rb, self.one_urllc_user_per_minislot,
                    self.punctured_within_tti, self.power_budget,
                    self.power_nonnegative, self.embb_assignment_binary, self.puncture_binary))

    def violations(self) -> list[str]:
        return [k for k, v in vars(self).items() if v is False]


def to_binary(action: AllocationAction, config: NetworkConfig) -> BinaryAllocation:
    """Expand index form into indicator matrices. An index outside the user
    range yields an entry of 2, which the binary checks flag."""
    k, m = config.num_rbs, config.phy.minislots_per_tti
    we, wu = config.embb_users_per_ru, config.urllc_users_per_ru
    users = np.asarray(action.rb_user).reshape(k)
    punct = np.asarray(action.puncture).reshape(k, m)
    alpha = (users[None, :] == np.arange(we)[:, None]).astype(np.int64)
    delta = (punct[None, :, :] == np.arange(wu)[:, None, None]).astype(np.int64)
    alpha[0] += 2 * ((users != NONE) & ((users < 0) | (users >= we)))
    delta[0] += 2 * ((punct != NONE) & ((punct < 0) | (punct >= wu)))
    return BinaryAllocation(alpha, delta, np.asarray(action.rb_power_w, dtype=float))


def check_constraints(action, config: NetworkConfig, embb_rate_bps: float | None = None,
                      outage_frequency: float | None = None) -> ConstraintReport:
    """Verify the per-TTI constraints on an action, independently of repair.

    ``action`` is an :class:`AllocationAction` or a :class:`BinaryAllocation`.
    The episode-level checks run only when their statistics are supplied.
    """
    b = action if isinstance(action, BinaryAllocation) else to_binary(action, config)
    m = config.phy.minislots_per_tti
    alpha, delta, p = np.asarray(b.alpha), np.asarray(b.delta), np.asarray(b.power_w, dtype=float)
    return ConstraintReport(
        one_embb_user_per_rb=bool(np.all(alpha.sum(axis=0) <= 1)),
        one_urllc_user_per_minislot=bool(np.all(delta.sum(axis=0) <= 1)),
        punctured_within_tti=bool(delta.shape[-1] == m and np.all(delta.sum(axis=2) <= m)),
        power_budget=bool(np.all(np.isfinite(p)) and p.sum() <= config.power.p_max_w),
        power_nonnegative=bool(np.all(p >= 0)),
        embb_assignment_binary=bool(np.all((alpha == 0) | (alpha == 1))),
        puncture_binary=bool(np.all((delta == 0) | (delta == 1))),
        urllc_reliability=None if outage_frequency is None
        else bool(outage_frequency <= config.urllc_outage_target),
        embb_min_rate=None if embb_rate_bps is None else bool(embb_rate_bps >= config.embb_min_rate_bps),
    )


# ----------------------------------------------------------- evaluation


@dataclass
class AllocationMetrics:
    tx_power_w: np.ndarray      # (R, K), zero on idle RBs
    embb_sinr: np.ndarray       # (R, K), zero where no eMBB user
    embb_rb_rate: np.ndarray    # (R, K)
    embb_rates: np.ndarray      # (R, We)
    urllc_sinr: np.ndarray      # (R, Wu, K)
    urllc_minislots: np.ndarray  # (R, Wu, K)
    urllc_rates: np.ndarray     # (R, Wu)
    du_rate: np.ndarray         # (N,)
    du_power: np.ndarray        # (N,)
    du_ee: np.ndarray           # (N,)

    @property
    def sum_rate(self) -> float:
        return float(self.du_rate.sum())

    @property
    def network_ee(self) -> float:
        return energy_efficiency(self.sum_rate, float(self.du_power.sum()))


def _stack(actions: Sequence[AllocationAction]):
    users = np.stack([a.rb_user for a in actions]).astype(np.int64)
    power = np.stack([a.rb_power_w for a in actions]).astype(float)
    punct = np.stack([a.puncture for a in actions]).astype(np.int64)
    return users, power, punct


def evaluate_allocation(actions: Sequence[AllocationAction], realization: ChannelRealization,
                        config: NetworkConfig) -> AllocationMetrics:
    """SINR, rates, power and EE for one TTI given every RU's action."""
    phy = config.phy
    r, k, m = config.num_rus, config.num_rbs, phy.minislots_per_tti
    we, wu = config.embb_users_per_ru, config.urllc_users_per_ru
    users, power, punct = _stack(actions)
    punctured = punct >= 0
    active = (users >= 0) | punctured.any(axis=2)
    p = np.where(active, power, 0.0)
    cross = (1.0 - np.eye(r))
    kk = np.arange(k)

    # eMBB: rx[l', l, k] is RU l' power received by the user RU l serves on RB k
    has_user = users >= 0
    j = np.arange(r)[:, None] * we + np.where(has_user, users, 0)
    rx = p[:, None, :] * realization.embb_gain[:, j, kk[None, :]]
    signal = np.where(has_user, rx[np.arange(r), np.arange(r)], 0.0)
    interference = (rx * cross[:, :, None]).sum(axis=0)
    embb_sinr = signal / (interference + phy.noise_power_w)
    n_punct = punctured.sum(axis=2)
    rb_rate = np.where(has_user, phy.rb_bandwidth_hz * (1.0 - n_punct / m) * np.log2(1.0 + embb_sinr), 0.0)
    embb_rates = np.zeros((r, we))
    for w in range(we):
        embb_rates[:, w] = np.where(users == w, rb_rate, 0.0).sum(axis=1)

    # URLLC: gains regrouped as (l', l, w, k)
    gu = realization.urllc_gain.reshape(r, r, wu, k)
    rxu = p[:, None, None, :] * gu
    sig_u = rxu[np.arange(r), np.arange(r)]
    int_u = (rxu * cross[:, :, None, None]).sum(axis=0)
    urllc_sinr = sig_u / (int_u + phy.noise_power_w)
    counts = np.stack([(punct == w).sum(axis=2) for w in range(wu)], axis=1)
    bracket = urllc_rb_bracket(urllc_sinr, phy.symbols_per_block, phy.urllc_error_target)
    urllc_rates = (phy.rb_bandwidth_hz * (counts / m) * bracket).sum(axis=2)

    ru_rate = embb_rates.sum(axis=1) + urllc_rates.sum(axis=1)
    ru_tx = p.sum(axis=1)
    n, lpd = config.num_dus, config.rus_per_du
    du_rate = ru_rate.reshape(n, lpd).sum(axis=1)
    du_power = (ru_tx.reshape(n, lpd).sum(axis=1) + lpd * config.power.ru_circuit_power_w
                + config.power.du_power_w)
    return AllocationMetrics(
        tx_power_w=p, embb_sinr=embb_sinr, embb_rb_rate=rb_rate, embb_rates=embb_rates,
        urllc_sinr=urllc_sinr, urllc_minislots=counts, urllc_rates=urllc_rates,
        du_rate=du_rate, du_power=du_power, du_ee=du_rate / du_power,
    )


# ------------------------------------------------------------- state/dual


@dataclass
class AgentState:
    embb_gain_summary: np.ndarray
    urllc_gain_summary: np.ndarray
    traffic_load: float
    backlog: int
    user_counts: tuple
    psi: float = 0.0

    def to_vector(self, config: NetworkConfig) -> np.ndarray:
        scale = 4.0 * config.phy.minislots_per_tti
        return np.concatenate([
            self.embb_gain_summary,
            self.urllc_gain_summary,
            [self.traffic_load / (config.urllc_packet_bytes * scale),
             self.backlog / scale,
             self.user_counts[0] / 8.0,
             self.user_counts[1] / 8.0,
             math.log1p(self.psi)],
        ])


def state_dim(config: NetworkConfig) -> int:
    return config.embb_users_per_ru + config.urllc_users_per_ru + 5


def _normalise_db(gain_linear: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(gain_linear)
    db = np.clip(np.nan_to_num(db, neginf=GAIN_DB_FLOOR), GAIN_DB_FLOOR, GAIN_DB_CEIL)
    return 2.0 * (db - GAIN_DB_FLOOR) / (GAIN_DB_CEIL - GAIN_DB_FLOOR) - 1.0


def encode_state(realization: ChannelRealization, traffic: UrllcTraffic, config: NetworkConfig,
                 ru: int = 0, psi: float = 0.0) -> AgentState:
    """Local observation of RU ``ru``: wideband serving gains and URLLC load."""
    we, wu = config.embb_users_per_ru, config.urllc_users_per_ru
    ge = realization.embb_gain[ru, ru * we:(ru + 1) * we].mean(axis=1)
    gu = realization.urllc_gain[ru, ru * wu:(ru + 1) * wu].mean(axis=1)
    return AgentState(
        embb_gain_summary=_normalise_db(ge),
        urllc_gain_summary=_normalise_db(gu),
        traffic_load=float(traffic.total * config.urllc_packet_bytes),
        backlog=int(traffic.backlog),
        user_counts=(we, wu),
        psi=psi,
    )


@dataclass
class DualState:
    psi: float = 0.0
    phi: float = 0.0
    sigma_u: float = 1e-5

    def __post_init__(self):
        if self.psi < 0 or not 0.0 <= self.phi <= 1.0:
            raise ValueError("need psi >= 0 and phi in [0, 1]")


def dual_update(dual: DualState) -> DualState:
    """Projected dual ascent on the URLLC reliability constraint."""
    return DualState(psi=max(dual.psi + dual.phi - dual.sigma_u, 0.0), phi=dual.phi, sigma_u=dual.sigma_u)


def measure_outage(window) -> float:
    """Outage fraction over a window of per-packet outcomes.

    Entries are booleans (True = outage) or (resolved, outages) count pairs.
    """
    resolved = outages = 0
    for item in window:
        if isinstance(item, tuple):
            resolved += item[0]
            outages += item[1]
        else:
            resolved += 1
            outages += bool(item)
    return outages / resolved if resolved else 0.0


@dataclass
class RewardTerms:
    ee_term: float
    urllc_term: float
    embb_term: float

    @property
    def reward(self) -> float:
        return self.ee_term - self.urllc_term - self.embb_term


def reward_terms(du_ee: float, psi: float, arrivals: int, urllc_rate_bps: float,
                 embb_rate_bps: float, config: NetworkConfig) -> RewardTerms:
    """EE reward minus the dual-weighted URLLC deficit and the eMBB term.

    The URLLC deficit is counted in packets: demanded bits this TTI minus
    the bits the punctured mini-slots can carry, divided by packet size.
    """
    bits = config.packet_bits
    deficit = max(0.0, bits * arrivals - urllc_rate_bps * config.phy.tti_duration_s) / bits
    if config.reward_embb_term == "verbatim":
        embb = embb_rate_bps
    else:
        rmin = config.embb_min_rate_bps
        embb = config.kappa_embb * max(0.0, rmin - embb_rate_bps) / rmin
    return RewardTerms(du_ee / config.ee_scale, psi * deficit, embb)


def packet_success_probabilities(puncture: np.ndarray, user: int, rb_sinr: np.ndarray,
                                 n_packets: int, config: NetworkConfig) -> np.ndarray:
    """Decode probability of each of the first ``n_packets`` queued packets.

    Packet bits fill the user's punctured cells in time order (mini-slot
    major, then RB), each cell carrying its finite-blocklength capacity.
    A packet succeeds if all its bits do, so its log-success is the sum
    over cells of bits_on_cell * log(1 - BER(cell SINR)).
    """
    phy = config.phy
    cells_k = np.nonzero(np.asarray(puncture).T == user)[1]
    per_cell = (phy.rb_bandwidth_hz / phy.minislots_per_tti * phy.tti_duration_s
                * urllc_rb_bracket(rb_sinr[cells_k], phy.symbols_per_block, phy.urllc_error_target))
    log_ok = np.log(harq_success_probability(rb_sinr[cells_k], 1)) if cells_k.size else np.zeros(0)
    edges = np.concatenate([[0.0], np.cumsum(per_cell)])
    cum_log = np.concatenate([[0.0], np.cumsum(per_cell * log_ok)])
    bounds = config.packet_bits * np.arange(n_packets + 1, dtype=float)
    acc = np.interp(bounds, edges, cum_log)
    return np.exp(np.diff(acc))


# ------------------------------------------------------------ environment


@dataclass
class StepOutcome:
    reward: np.ndarray          # per RU
    ee: float                   # network EE, bit/J
    du_ee: np.ndarray
    embb_rates: np.ndarray      # per RU, summed over users
    urllc_rate: np.ndarray      # per RU
    outage_flag: np.ndarray     # per RU: any outage resolved this TTI
    constraint_report: list
    metrics: AllocationMetrics = None
    terms: list = field(default_factory=list)


@dataclass
class _RuQueue:
    # per URLLC user: list of [packet_id, deadline_tti]
    users: list
    harq: HarqProcess
    window: deque
    dual: DualState
    owner: dict = field(default_factory=dict)  # packet id -> URLLC user, while in HARQ
    arrivals: int = 0
    arrived_total: int = 0
    deadline_drops: int = 0


TRACE_COLUMNS = ("tti", "agent", "reward", "ee_bit_per_joule", "sum_rate_bps", "urllc_outage", "psi", "phi")


class OranEnv:
    """Stateful multi-RU downlink simulator.

    ``fixed_channel`` / ``fixed_traffic`` pin the realization and per-RU
    arrival counts for every TTI (used for the oracle instance). With
    ``record_trace`` each step appends one row per RU to ``self.trace``
    (columns :data:`TRACE_COLUMNS`).
    """

    def __init__(self, config: NetworkConfig, seed: int | None = None,
                 network: NetworkState | None = None,
                 fixed_channel: ChannelRealization | None = None,
                 fixed_traffic: Sequence[int] | None = None, record_trace: bool = False):
        self.config = config
        self.trace = [] if record_trace else None
        self.seed = config.rng_seed if seed is None else seed
        self.network = network if network is not None else build_network(config)
        self.fixed_channel = fixed_channel
        self.fixed_traffic = None if fixed_traffic is None else [int(x) for x in fixed_traffic]
        self.rng = np.random.default_rng([self.seed, 7919])
        self.head_sizes = action_head_sizes(config)
        self.obs_dim = state_dim(config)
        self.n_agents = config.num_rus
        self._next_pid = 0
        self.episode = 0
        self.tti = 0

    # -- episode lifecycle
    def reset(self, psi0: float = 0.0) -> np.ndarray:
        cfg = self.config
        self.tti = 0
        self.queues = [
            _RuQueue(users=[[] for _ in range(cfg.urllc_users_per_ru)],
                     harq=HarqProcess(cfg.harq_rtt_ttis, cfg.max_retx),
                     window=deque(maxlen=cfg.outage_window_ttis),
                     dual=DualState(psi=psi0, sigma_u=cfg.urllc_outage_target))
            for _ in range(cfg.num_rus)
        ]
        self.episode += 1
        self._draw_tti()
        return self.observe()

    def _draw_tti(self):
        cfg = self.config
        if self.fixed_channel is not None:
            self.realization = self.fixed_channel
        else:
            self.realization = sample_channels(self.network, self.tti, self.rng)
        m = cfg.phy.minislots_per_tti
        for ru, q in enumerate(self.queues):
            if self.fixed_traffic is not None:
                n = self.fixed_traffic[ru]
            else:
                n = sample_urllc_arrivals(cfg.urllc_arrival_rate, m, self.rng).total
            q.arrivals = n
            q.arrived_total += n
            dest = self.rng.integers(0, cfg.urllc_users_per_ru, size=n)
            for u in dest:
                q.users[u].append([self._next_pid, self.tti + cfg.urllc_deadline_ttis])
                self._next_pid += 1

    def traffic(self, ru: int) -> UrllcTraffic:
        q = self.queues[ru]
        queued = sum(len(u) for u in q.users)
        arr = np.zeros(self.config.phy.minislots_per_tti, dtype=np.int64)
        arr[0] = q.arrivals
        return UrllcTraffic(arrivals_per_minislot=arr, total=q.arrivals, backlog=queued - q.arrivals)

    def observe(self) -> np.ndarray:
        """Stacked state vectors, one row per RU (vectorised encode_state)."""
        cfg = self.config
        r, we, wu, k = cfg.num_rus, cfg.embb_users_per_ru, cfg.urllc_users_per_ru, cfg.num_rbs
        diag = np.arange(r)
        ge = self.realization.embb_gain.reshape(r, r, we, k)[diag, diag].mean(axis=2)
        gu = self.realization.urllc_gain.reshape(r, r, wu, k)[diag, diag].mean(axis=2)
        scale = 4.0 * cfg.phy.minislots_per_tti
        extra = np.array([
            [q.arrivals / scale,
             (sum(len(u) for u in q.users) - q.arrivals) / scale,
             we / 8.0, wu / 8.0, math.log1p(q.dual.psi)]
            for q in self.queues
        ])
        return np.concatenate([_normalise_db(ge), _normalise_db(gu), extra], axis=1)

    # -- dynamics
    def step(self, action_indices: np.ndarray):
        """Policy-facing step: integer head indices of shape (num_rus, n_heads)."""
        return self.step_actions(decode_actions(action_indices, self.config))

    def step_actions(self, actions: Sequence[AllocationAction]):
        cfg = self.config
        reports = [check_constraints(a, cfg) for a in actions]
        bad = [i for i, rep in enumerate(reports) if not rep.per_tti_ok]
        if bad:
            raise ContractViolation(f"infeasible action for RU {bad}: {reports[bad[0]].violations()}")
        met = evaluate_allocation(actions, self.realization, cfg)
        t, tti_s, bits = self.tti, cfg.phy.tti_duration_s, cfg.packet_bits
        rewards = np.zeros(cfg.num_rus)
        outage_flag = np.zeros(cfg.num_rus, dtype=bool)
        terms = []
        for ru, q in enumerate(self.queues):
            n = ru // cfg.rus_per_du
            terms_ru = reward_terms(met.du_ee[n], q.dual.psi, q.arrivals, met.urllc_rates[ru].sum(),
                                    met.embb_rates[ru].sum(), cfg)
            rewards[ru] = terms_ru.reward
            terms.append(terms_ru)
            delivered0, outages0 = q.harq.delivered, q.harq.outages
            outcomes = []
            for w, queue in enumerate(q.users):
                cap = int(met.urllc_rates[ru, w] * tti_s // bits)
                if cap <= 0 or not queue:
                    continue
                served, q.users[w] = queue[:cap], queue[cap:]
                p_ok = packet_success_probabilities(actions[ru].puncture, w, met.urllc_sinr[ru, w],
                                                    len(served), cfg)
                ok = self.rng.random(len(served)) < p_ok
                outcomes.extend((pkt[0], bool(o)) for pkt, o in zip(served, ok))
                q.owner.update((pkt[0], w) for pkt, o in zip(served, ok) if not o)
            dropped = 0
            for w, queue in enumerate(q.users):
                keep = [pkt for pkt in queue if pkt[1] > t]
                if len(keep) < len(queue):
                    dropped += len(queue) - len(keep)
                    for pkt in queue:
                        if pkt[1] <= t:
                            q.harq.retx_count.pop(pkt[0], None)
                q.users[w] = keep
            q.deadline_drops += dropped
            q.harq, _ = harq_step(q.harq, t, outcomes)
            q.harq, due = harq_step(q.harq, t + 1, [])
            for pid in reversed(due):
                q.users[q.owner.pop(pid)].insert(0, [pid, t + 1 + cfg.urllc_deadline_ttis])
            for pid in [p for p in q.owner if p not in q.harq.retx_count]:
                del q.owner[pid]
            n_out = q.harq.outages - outages0 + dropped
            n_res = q.harq.delivered - delivered0 + n_out
            q.window.append((n_res, n_out))
            outage_flag[ru] = n_out > 0
            phi = measure_outage(q.window)
            q.dual = dual_update(DualState(psi=q.dual.psi, phi=phi, sigma_u=q.dual.sigma_u))
        if self.trace is not None:
            ru_rate = met.embb_rates.sum(axis=1) + met.urllc_rates.sum(axis=1)
            for ru, q in enumerate(self.queues):
                self.trace.append({
                    "tti": self.tti, "agent": ru, "reward": float(rewards[ru]),
                    "ee_bit_per_joule": float(met.network_ee), "sum_rate_bps": float(ru_rate[ru]),
                    "urllc_outage": int(outage_flag[ru]), "psi": q.dual.psi, "phi": q.dual.phi,
                })
        self.tti += 1
        done = self.tti >= cfg.episode_ttis
        outcome = StepOutcome(
            reward=rewards, ee=met.network_ee, du_ee=met.du_ee,
            embb_rates=met.embb_rates.sum(axis=1), urllc_rate=met.urllc_rates.sum(axis=1),
            outage_flag=outage_flag, constraint_report=reports, metrics=met, terms=terms,
        )
        self._draw_tti()
        return self.observe(), rewards, done, outcome

    # -- accounting
    def packet_ledger(self, ru: int) -> dict:
        """Arrived vs delivered/outage/in-flight counts for one RU."""
        q = self.queues[ru]
        queued = sum(len(u) for u in q.users)
        in_flight = queued + len(q.harq.pending)
        return {
            "arrived": q.arrived_total,
            "delivered": q.harq.delivered,
            "outage": q.harq.outages + q.deadline_drops,
            "in_flight": in_flight,
        }

    @property
    def duals(self) -> list[DualState]:
        return [q.dual for q in self.queues]
