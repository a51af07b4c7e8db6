# # Policy transfer on the reduced grid
#
# A master policy learns on the source task; three learners then start on a
# target task with steeper pathloss and heavier shadowing:
#
# * random_init trains from scratch,
# * on_policy adds a decaying cross-entropy pull toward the master,
# * off_policy also replays master rollouts that beat the learner's critic.
#
# Budgets here are a few minutes of CPU; the acceptance suite runs the long
# version over five seeds.

import time

import numpy as np

from green_oran.net import NetworkConfig
from green_oran.ppo import PpoConfig
from green_oran.transfer import MODES, TransferConfig, run_single, target_task, train_master

source = NetworkConfig(num_dus=1, rus_per_du=2, num_rbs=8, rng_seed=3, embb_min_rate_bps=4e5)
target = target_task(source)
ppo = PpoConfig(actor_lr=3e-4, discount=0.5, gae_lambda=0.5)

# ## Master on the source task

t0 = time.perf_counter()
master, _, mlog = train_master(source, ppo, 30, seed=0)
print(f"master: reward {mlog[0]['mean_reward']:.2f} -> {mlog[-1]['mean_reward']:.2f} "
      f"({time.perf_counter() - t0:.0f} s)")

# ## Three learners on the target task
#
# Early rewards show the head start a transferred policy gets; the last
# column is energy efficiency in bit/J.

before = master.fingerprint()
for mode in MODES:
    t0 = time.perf_counter()
    _, log = run_single(mode, target, 1, ppo, TransferConfig(), 20, master)
    r = np.array([row["mean_reward"] for row in log])
    ee = np.array([row["mean_ee"] for row in log])
    print(f"{mode:12s} reward first 5 {r[:5].mean():5.2f}, last 5 {r[-5:].mean():5.2f}, "
          f"EE last 5 {ee[-5:].mean():8.0f}  ({time.perf_counter() - t0:.0f} s)")

# The master itself is never modified by any learner.
print("master parameters unchanged:", master.fingerprint() == before)
