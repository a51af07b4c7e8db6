"""Radio-layer closed forms: pathloss, SINR, punctured eMBB rate and
finite-blocklength URLLC rate.

Every function here is pure. Scalar inputs return floats; the rate and
dispersion helpers also accept numpy arrays elementwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SQRT2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def thermal_noise_w(bandwidth_hz: float, noise_figure_db: float = 9.0, density_dbm_hz: float = -174.0) -> float:
    """Thermal noise over ``bandwidth_hz`` plus receiver noise figure, in W."""
    dbm = density_dbm_hz + 10.0 * math.log10(bandwidth_hz) + noise_figure_db
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class PhyConstants:
    rb_bandwidth_hz: float = 180e3
    minislots_per_tti: int = 7
    noise_power_w: float = thermal_noise_w(180e3)
    symbols_per_minislot: int = 2
    subcarriers_per_rb: int = 12
    urllc_error_target: float = 1e-5
    tti_duration_s: float = 1e-3

    def __post_init__(self):
        if not self.rb_bandwidth_hz > 0:
            raise ValueError("rb_bandwidth_hz must be positive")
        if self.minislots_per_tti < 1:
            raise ValueError("minislots_per_tti must be >= 1")
        if not self.noise_power_w > 0:
            raise ValueError("noise_power_w must be positive")
        if self.symbols_per_minislot < 1 or self.subcarriers_per_rb < 1:
            raise ValueError("symbol and subcarrier counts must be >= 1")
        if not 0.0 < self.urllc_error_target < 0.5:
            raise ValueError("urllc_error_target must lie in (0, 0.5)")
        if not self.tti_duration_s > 0:
            raise ValueError("tti_duration_s must be positive")

    @property
    def symbols_per_block(self) -> int:
        """Channel uses in one punctured mini-slot of one RB."""
        return self.subcarriers_per_rb * self.symbols_per_minislot


@dataclass(frozen=True)
class LinkGain:
    tx_power_w: float
    gain_linear: float

    def __post_init__(self):
        if self.tx_power_w < 0 or self.gain_linear < 0:
            raise ValueError("power and gain must be non-negative")

    @property
    def received_w(self) -> float:
        return self.tx_power_w * self.gain_linear


def pathloss_db(distance_km, intercept_db: float = 120.8, slope_db: float = 37.5):
    """Macro-style log-distance pathloss ``intercept + slope*log10(d)``, d in km."""
    d = np.asarray(distance_km, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    out = intercept_db + slope_db * np.log10(d)
    return float(out) if out.ndim == 0 else out


def channel_gain(pathloss_db, fading_power, shadowing_db=0.0):
    """Linear gain from pathloss, shadowing (both dB) and fading power."""
    fading = np.asarray(fading_power, dtype=float)
    if np.any(fading < 0):
        raise ValueError("fading power must be non-negative")
    g = fading * 10.0 ** (-(np.asarray(pathloss_db) + np.asarray(shadowing_db)) / 10.0)
    return float(g) if np.ndim(g) == 0 else g


def sinr(
    signal: LinkGain,
    same_service_interferers: Sequence[LinkGain],
    cross_service_interferers: Sequence[LinkGain],
    noise_power_w: float,
) -> float:
    """SINR of one link. Both interference classes enter the denominator
    the same way, so eMBB and URLLC SINR share this function."""
    if not noise_power_w > 0:
        raise ValueError("noise power must be positive")
    interference = math.fsum(i.received_w for i in same_service_interferers)
    interference += math.fsum(i.received_w for i in cross_service_interferers)
    return signal.received_w / (interference + noise_power_w)


def embb_rb_rate(sinr_value, punctured_minislots, phy: PhyConstants):
    """eMBB rate on one RB after URLLC puncturing, in bit/s."""
    m = phy.minislots_per_tti
    punct = np.asarray(punctured_minislots)
    if np.any(punct < 0) or np.any(punct > m):
        raise ValueError(f"punctured mini-slots must lie in [0, {m}]")
    r = phy.rb_bandwidth_hz * (1.0 - punct / m) * np.log2(1.0 + np.asarray(sinr_value, dtype=float))
    return float(r) if np.ndim(r) == 0 else r


def embb_user_rate(rb_assignment_row, per_rb_rates) -> float:
    alpha = np.asarray(rb_assignment_row, dtype=float)
    rates = np.asarray(per_rb_rates, dtype=float)
    if alpha.shape != rates.shape:
        raise ValueError(f"length mismatch: {alpha.shape} vs {rates.shape}")
    return float(np.dot(alpha, rates))


def channel_dispersion(sinr_value):
    s = np.asarray(sinr_value, dtype=float)
    d = 1.0 - 1.0 / (1.0 + s) ** 2
    return float(d) if d.ndim == 0 else d


def q_function(z: float) -> float:
    """Gaussian tail probability Q(z) = P[N(0,1) > z]."""
    return 0.5 * math.erfc(z / SQRT2)


def _q_inv_guess(p: float) -> float:
    # Hastings rational approximation, |error| < 4.5e-4, valid for p <= 0.5
    t = math.sqrt(-2.0 * math.log(p))
    num = 2.515517 + t * (0.802853 + t * 0.010328)
    den = 1.0 + t * (1.432788 + t * (0.189269 + t * 0.001308))
    return t - num / den


def q_inv(x: float) -> float:
    """Inverse Gaussian tail: returns z with Q(z) = x.

    Hastings starting point followed by Newton iterations on Q(z) - x,
    with a bisection fallback if Newton ever leaves the bracket.
    """
    x = float(x)
    if not 0.0 < x < 1.0:
        raise ValueError(f"q_inv argument must lie in (0, 1), got {x}")
    if x == 0.5:
        return 0.0
    z = _q_inv_guess(x) if x < 0.5 else -_q_inv_guess(1.0 - x)
    lo, hi = -40.0, 40.0
    for _ in range(60):
        f = q_function(z) - x
        if f > 0:
            lo = max(lo, z)
        else:
            hi = min(hi, z)
        pdf = INV_SQRT_2PI * math.exp(-0.5 * z * z)
        step = f / pdf if pdf > 0 else math.inf
        z_new = z + step
        if not lo <= z_new <= hi:
            z_new = 0.5 * (lo + hi)
        if abs(z_new - z) <= 1e-15 * max(1.0, abs(z)):
            return z_new
        z = z_new
    return z


def urllc_rb_bracket(sinr_value, symbols_per_block: int, error_target: float):
    """Per-RB spectral efficiency under the normal approximation, floored at 0."""
    s = np.asarray(sinr_value, dtype=float)
    penalty = np.sqrt(channel_dispersion(s) / symbols_per_block) * q_inv(error_target)
    b = np.maximum(np.log2(1.0 + s) - penalty, 0.0)
    return float(b) if b.ndim == 0 else b


def urllc_rate(sinr_value, punctured_minislots_per_rb, symbols_per_block: int, phy: PhyConstants) -> float:
    """Finite-blocklength URLLC rate summed over RBs, in bit/s.

    ``sinr_value`` is a scalar or one SINR per RB; ``punctured_minislots_per_rb``
    counts the mini-slots this user punctures on each RB.
    """
    punct = np.atleast_1d(np.asarray(punctured_minislots_per_rb, dtype=float))
    m = phy.minislots_per_tti
    if np.any(punct < 0) or np.any(punct > m):
        raise ValueError(f"punctured mini-slots must lie in [0, {m}]")
    if symbols_per_block < 1:
        raise ValueError("symbols_per_block must be >= 1")
    s = np.broadcast_to(np.asarray(sinr_value, dtype=float), punct.shape)
    bracket = urllc_rb_bracket(s, symbols_per_block, phy.urllc_error_target)
    return float(np.sum(phy.rb_bandwidth_hz * (punct / m) * bracket))
