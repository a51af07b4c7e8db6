"""Scenario construction, channel sampling, URLLC traffic and HARQ."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .energy import PowerConfig
from .phy import PhyConstants, pathloss_db

REWARD_EMBB_TERMS = ("shortfall_penalty", "verbatim")


class ConfigError(ValueError):
    """Raised for an invalid scenario or experiment configuration."""


@dataclass(frozen=True)
class NetworkConfig:
    """Everything needed to build and simulate one scenario.

    Counts follow the small-cell deployment (DUs, RUs per DU, users per RU,
    RBs). The trailing block holds MDP knobs read by :mod:`green_oran.env`.
    """

    num_dus: int = 4
    rus_per_du: int = 2
    embb_users_per_ru: int = 2
    urllc_users_per_ru: int = 2
    num_rbs: int = 100
    cell_radius_m: float = 250.0
    phy: PhyConstants = field(default_factory=PhyConstants)
    power: PowerConfig = field(default_factory=PowerConfig)
    urllc_arrival_rate: float = 2.0
    urllc_packet_bytes: int = 32
    harq_rtt_ttis: int = 1
    urllc_outage_target: float = 1e-5
    embb_min_rate_bps: float = 5e6
    rng_seed: int = 0
    system_bandwidth_hz: float = 20e6
    pathloss_intercept_db: float = 120.8
    pathloss_slope_db: float = 37.5
    shadowing_sigma_db: float = 4.0
    min_distance_m: float = 10.0
    max_retx: int = 1
    urllc_deadline_ttis: int = 1
    # MDP knobs
    num_power_levels: int = 5
    ee_scale: float = 1e5
    kappa_embb: float = 1.0
    outage_window_ttis: int = 50
    reward_embb_term: str = "shortfall_penalty"
    episode_ttis: int = 200

    def __post_init__(self):
        counts = ("num_dus", "rus_per_du", "embb_users_per_ru", "urllc_users_per_ru",
                  "num_rbs", "harq_rtt_ttis", "urllc_packet_bytes", "num_power_levels",
                  "outage_window_ttis", "episode_ttis")
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.max_retx < 0 or self.urllc_deadline_ttis < 0:
            raise ConfigError("max_retx and urllc_deadline_ttis must be >= 0")
        if self.urllc_arrival_rate < 0:
            raise ConfigError("urllc_arrival_rate must be >= 0")
        if not 0.0 < self.urllc_outage_target < 1.0:
            raise ConfigError("urllc_outage_target must lie in (0, 1)")
        if self.num_rbs * self.phy.rb_bandwidth_hz > self.system_bandwidth_hz * (1 + 1e-12):
            raise ConfigError("num_rbs * rb_bandwidth_hz exceeds system_bandwidth_hz")
        if not self.cell_radius_m > self.min_distance_m > 0:
            raise ConfigError("need cell_radius_m > min_distance_m > 0")
        if self.embb_min_rate_bps <= 0 or self.ee_scale <= 0:
            raise ConfigError("embb_min_rate_bps and ee_scale must be positive")
        if self.reward_embb_term not in REWARD_EMBB_TERMS:
            raise ConfigError(f"reward_embb_term must be one of {REWARD_EMBB_TERMS}")

    @property
    def num_rus(self) -> int:
        return self.num_dus * self.rus_per_du

    @property
    def packet_bits(self) -> int:
        return 8 * self.urllc_packet_bytes

    def replace(self, **changes) -> "NetworkConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class NetworkState:
    """Immutable topology: RU sites, user drops and large-scale losses.

    ``*_loss_db`` has shape (num_rus, num_users): pathloss plus shadowing
    from every RU to every user, so the same table serves signal and
    interference. User ``j`` is served by RU ``j // users_per_ru``.
    """

    config: NetworkConfig
    ru_positions: np.ndarray
    embb_positions: np.ndarray
    urllc_positions: np.ndarray
    embb_loss_db: np.ndarray
    urllc_loss_db: np.ndarray

    @property
    def embb_serving_ru(self) -> np.ndarray:
        return np.arange(self.embb_positions.shape[0]) // self.config.embb_users_per_ru

    @property
    def urllc_serving_ru(self) -> np.ndarray:
        return np.arange(self.urllc_positions.shape[0]) // self.config.urllc_users_per_ru


@dataclass(frozen=True)
class ChannelRealization:
    """Linear gains for one TTI, indexed (transmitting RU, user, RB)."""

    embb_gain: np.ndarray
    urllc_gain: np.ndarray
    tti_index: int = 0


@dataclass(frozen=True)
class UrllcTraffic:
    arrivals_per_minislot: np.ndarray
    total: int
    backlog: int = 0

    def __post_init__(self):
        if int(np.sum(self.arrivals_per_minislot)) != self.total:
            raise ValueError("total must equal the sum of per-minislot arrivals")
        if self.backlog < 0:
            raise ValueError("backlog must be non-negative")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


def ru_grid(num_rus: int, spacing_m: float) -> np.ndarray:
    cols = math.ceil(math.sqrt(num_rus))
    idx = np.arange(num_rus)
    return np.stack([(idx % cols) * spacing_m, (idx // cols) * spacing_m], axis=1).astype(float)


def _drop_users(rng, centres, per_ru, radius, dmin):
    n = centres.shape[0] * per_ru
    # uniform over the annulus dmin <= r <= radius
    r = np.sqrt(rng.uniform(size=n) * (radius**2 - dmin**2) + dmin**2)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    base = np.repeat(centres, per_ru, axis=0)
    return base + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


def _loss_table(config, ru_pos, user_pos, rng):
    d_m = np.linalg.norm(ru_pos[:, None, :] - user_pos[None, :, :], axis=2)
    d_km = np.maximum(d_m, config.min_distance_m) / 1000.0
    pl = pathloss_db(d_km, config.pathloss_intercept_db, config.pathloss_slope_db)
    shadow = rng.normal(0.0, config.shadowing_sigma_db, size=pl.shape)
    return np.atleast_2d(pl) + shadow


def build_network(config: NetworkConfig, rng: np.random.Generator | None = None) -> NetworkState:
    """Place RUs on a square grid and drop users uniformly in each RU disc."""
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    ru_pos = ru_grid(config.num_rus, 2.0 * config.cell_radius_m)
    embb = _drop_users(rng, ru_pos, config.embb_users_per_ru, config.cell_radius_m, config.min_distance_m)
    urllc = _drop_users(rng, ru_pos, config.urllc_users_per_ru, config.cell_radius_m, config.min_distance_m)
    return NetworkState(
        config=config,
        ru_positions=_readonly(ru_pos),
        embb_positions=_readonly(embb),
        urllc_positions=_readonly(urllc),
        embb_loss_db=_readonly(_loss_table(config, ru_pos, embb, rng)),
        urllc_loss_db=_readonly(_loss_table(config, ru_pos, urllc, rng)),
    )


def sample_channels(state: NetworkState, tti: int, rng: np.random.Generator) -> ChannelRealization:
    """Rayleigh block fading per (RU, user, RB) on top of the static losses."""
    k = state.config.num_rbs
    fe = rng.exponential(1.0, size=state.embb_loss_db.shape + (k,))
    fu = rng.exponential(1.0, size=state.urllc_loss_db.shape + (k,))
    return ChannelRealization(
        embb_gain=fe * 10.0 ** (-state.embb_loss_db / 10.0)[:, :, None],
        urllc_gain=fu * 10.0 ** (-state.urllc_loss_db / 10.0)[:, :, None],
        tti_index=tti,
    )


def sample_urllc_arrivals(rate: float, m_slots: int, rng: np.random.Generator) -> UrllcTraffic:
    """Independent Poisson arrivals in each of ``m_slots`` mini-slots."""
    if rate < 0:
        raise ValueError("arrival rate must be non-negative")
    arrivals = rng.poisson(rate, size=m_slots)
    return UrllcTraffic(arrivals_per_minislot=arrivals, total=int(arrivals.sum()))


def qpsk_ber(sinr_value):
    """Coherent QPSK bit error rate Q(sqrt(2*SINR))."""
    s = np.maximum(np.asarray(sinr_value, dtype=float), 0.0)
    if s.ndim == 0:
        return 0.5 * math.erfc(math.sqrt(float(s)))
    return 0.5 * _erfc(np.sqrt(s)).astype(float)


_erfc = np.frompyfunc(math.erfc, 1, 1)


def harq_success_probability(sinr_value, tb_bits: int):
    """Probability that a transport block of ``tb_bits`` decodes error-free."""
    if tb_bits < 1:
        raise ValueError("tb_bits must be >= 1")
    ber = np.asarray(qpsk_ber(sinr_value), dtype=float)
    p = np.exp(tb_bits * np.log1p(-ber))
    return float(p) if p.ndim == 0 else p


@dataclass
class HarqProcess:
    """Retransmission bookkeeping for one RU.

    ``pending`` holds (packet_id, retransmit_at_tti); ``retx_count`` maps a
    packet to the retransmissions already scheduled for it.
    """

    rtt_ttis: int = 1
    max_retx: int = 1
    pending: list = field(default_factory=list)
    retx_count: dict = field(default_factory=dict)
    outages: int = 0
    delivered: int = 0


def harq_step(process: HarqProcess, tti: int, outcomes) -> tuple[HarqProcess, list]:
    """Apply this TTI's decode outcomes and release packets due now.

    Failed packets with retransmissions left are rescheduled at
    ``tti + rtt``; the rest count as outages. Returns the new process and
    the ids whose retransmission slot is ``tti``.
    """
    pending = [p for p in process.pending if p[1] != tti]
    due = [pid for pid, at in process.pending if at == tti]
    retx = dict(process.retx_count)
    outages, delivered = process.outages, process.delivered
    for pid, ok in outcomes:
        n = retx.pop(pid, 0)
        if ok:
            delivered += 1
        elif n < process.max_retx:
            retx[pid] = n + 1
            pending.append((pid, tti + process.rtt_ttis))
        else:
            outages += 1
    new = dataclasses.replace(process, pending=pending, retx_count=retx,
                              outages=outages, delivered=delivered)
    return new, due
