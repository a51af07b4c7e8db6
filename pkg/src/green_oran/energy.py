"""Power accounting and the energy-efficiency objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def dbm_to_w(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class PowerConfig:
    """Per-RU transmit budget plus the circuit terms of the EE denominator."""

    p_max_w: float = dbm_to_w(38.0)
    ru_circuit_power_w: float = 10.0
    du_power_w: float = 200.0

    def __post_init__(self):
        if not self.p_max_w > 0:
            raise ValueError("p_max_w must be positive")
        if self.ru_circuit_power_w < 0 or self.du_power_w < 0:
            raise ValueError("circuit powers must be non-negative")


def total_power(tx_powers_w, num_rus: int, power: PowerConfig) -> float:
    """Radiated power summed over all entries, plus RU and DU circuit power."""
    tx = np.asarray(tx_powers_w, dtype=float)
    if np.any(tx < 0):
        raise ValueError("transmit powers must be non-negative")
    return float(tx.sum()) + num_rus * power.ru_circuit_power_w + power.du_power_w


def energy_efficiency(sum_rate_bps: float, total_power_w: float) -> float:
    """Bits delivered per joule consumed."""
    return sum_rate_bps / total_power_w
