# # Link budget walkthrough
#
# This script follows one resource block from distance to bits. Every number
# printed here comes from the library functions the simulator uses.

import numpy as np

from green_oran.energy import PowerConfig, energy_efficiency, total_power
from green_oran.phy import (
    LinkGain,
    PhyConstants,
    channel_gain,
    embb_rb_rate,
    pathloss_db,
    q_inv,
    sinr,
    urllc_rate,
)

phy = PhyConstants()
power = PowerConfig()

# ## Pathloss and gain
#
# Distances are in kilometres. A user 100 m from its radio unit loses 83.3 dB
# before fading and shadowing.

for d_km in (0.05, 0.1, 0.25):
    print(f"{1000 * d_km:5.0f} m  pathloss {pathloss_db(d_km):6.2f} dB")

g = channel_gain(pathloss_db(0.1), fading_power=1.0, shadowing_db=0.0)
print("gain at 100 m, unit fading:", g)

# ## SINR on one RB
#
# Transmit power per RB is the RU budget split over the active RBs. Here 8
# active RBs, one interfering RU at 250 m with the same power.

p_rb = power.p_max_w / 8
serving = LinkGain(p_rb, g)
interferer = LinkGain(p_rb, channel_gain(pathloss_db(0.25), 1.0))
omega = sinr(serving, [interferer], [], phy.noise_power_w)
print(f"SINR {omega:.1f} ({10 * np.log10(omega):.1f} dB)")

# ## eMBB rate and puncturing
#
# Every mini-slot handed to URLLC removes 1/M of the RB from the eMBB user.

for n in (0, 2, 7):
    print(f"{n} punctured mini-slots -> eMBB {embb_rb_rate(omega, n, phy) / 1e3:8.1f} kbit/s")

# ## Finite blocklength penalty
#
# A short URLLC block pays a back-off below Shannon that shrinks as SINR
# rises. C = 24 symbols per mini-slot block, decoding error target 1e-5.

print("Q^-1(1e-5) =", q_inv(1e-5))
for s in (0.5, 3.0, 30.0):
    shannon = phy.rb_bandwidth_hz * np.log2(1 + s)
    fbl = urllc_rate(s, [phy.minislots_per_tti], phy.symbols_per_block, phy)
    print(f"SINR {s:5.1f}: Shannon {shannon / 1e3:7.1f} kbit/s, finite blocklength {fbl / 1e3:7.1f} kbit/s")

# ## Energy efficiency
#
# Two RUs on one DU, each spending its full budget on 8 RBs at the rate above.
# The fixed circuit terms dominate the denominator.

rate = 2 * 8 * embb_rb_rate(omega, 0, phy)
tx = np.full(16, p_rb)
p_total = total_power(tx, 2, power)
print(f"total power {p_total:.1f} W, EE = {energy_efficiency(rate, p_total):.0f} bit/J")
