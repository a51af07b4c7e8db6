# # The command line pipeline
#
# The same steps as the `green-oran` command, called in-process. Each output
# directory receives resolved_config.json with the config and code hashes.
# Shell equivalent:
#
#     green-oran train_master  --config demos/configs/reduced_sweep.json --seed 0 --out runs/master
#     green-oran train         --config ... --transfer on_policy --master-checkpoint runs/master/seed_0/master.json --out runs/on
#     green-oran eval          --config ... --checkpoint runs/on/seed_1/agent.json --out runs/eval
#     green-oran sweep_arrival --config ... --out runs/sweep

import csv
import sys
from pathlib import Path

from green_oran.cli import main

here = Path(__file__).parent
cfg = str(here / "configs" / "reduced_sweep.json")
out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs")


def step(*argv):
    print("\n$ green-oran", " ".join(argv))
    rc = main(list(argv))
    if rc != 0:
        raise SystemExit(rc)


step("train_master", "--config", cfg, "--seed", "0", "--out", str(out / "master"))
master = out / "master" / "seed_0" / "master.json"
step("train", "--config", cfg, "--transfer", "on_policy", "--master-checkpoint", str(master), "--out", str(out / "on"))
step("eval", "--config", cfg, "--checkpoint", str(out / "on" / "seed_1" / "agent.json"), "--out", str(out / "eval"))

# ## Arrival-rate sweep
#
# One master per rate, then every mode and seed on the target task. The
# per-mode tables are tidy CSVs: rate, mean_ee, std_ee.

step("sweep_arrival", "--config", cfg, "--out", str(out / "sweep"))
for mode in ("on_policy", "off_policy", "random_init"):
    with open(out / "sweep" / f"sweep_{mode}.csv") as fh:
        rows = list(csv.DictReader(fh))
    print(mode, [(float(r["rate"]), round(float(r["mean_ee"]))) for r in rows])
