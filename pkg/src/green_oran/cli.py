"""``green-oran`` command line: train, evaluate, sweep and verify.

Usage::

    green-oran <mode> [--config FILE] [--seed 0,1,2] [--out DIR]
                      [--master-checkpoint FILE] [--transfer MODE] [--checkpoint FILE]

Every output directory gets ``resolved_config.json`` (the full experiment config after
defaults, plus config and code hashes). Failures print a JSON error
object on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import traceback
from pathlib import Path

import numpy as np

from . import oracle
from .config import (
    RUN_MODES,
    ExperimentSpec,
    check_writable,
    code_hash,
    config_hash,
    load_config,
    to_dict,
)
from .env import TRACE_COLUMNS, OranEnv
from .gradcheck import run_all as run_gradchecks
from .net import ConfigError
from .nn import CheckpointError, load_bundle, save_bundle
from .ppo import EVAL_COLUMNS, LOG_COLUMNS, evaluate_policy
from .transfer import MODES, MasterPolicy, run_single, train_master, write_curve

EXIT_CONFIG = 2
EXIT_RUNTIME = 1


# ------------------------------------------------------------- artifacts


def write_rows(path, columns, rows) -> None:
    """CSV with a header; floats written with repr so reruns compare bit-exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (row[c] for c in columns)])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def stamp(directory, spec: ExperimentSpec) -> Path:
    """Record the resolved config and the code hash next to the outputs."""
    directory = check_writable(directory)
    write_json(directory / "resolved_config.json", {
        "config": to_dict(spec), "config_hash": config_hash(spec), "code_hash": code_hash(),
    })
    return directory


def final_mean(log, key: str, fraction: float) -> float:
    k = max(1, int(math.ceil(len(log) * fraction)))
    return float(np.mean([row[key] for row in log[-k:]]))


def _stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {"mean": float(v.mean()), "std": float(v.std())}


def load_policy(path, member: str = "actor"):
    members, _ = load_bundle(path)
    if member not in members:
        raise CheckpointError(f"{path}: no {member!r} network in checkpoint")
    return members[member][0]


# ------------------------------------------------------------------ modes


def run_train_master(spec: ExperimentSpec, out: Path) -> dict:
    per_seed = {}
    for seed in spec.seeds:
        d = stamp(out / f"seed_{seed}", spec)
        _, agent, log = train_master(spec.source, spec.ppo, spec.run.master_updates, seed)
        write_rows(d / "train_log.csv", LOG_COLUMNS, log)
        save_bundle(d / "master.json", {"actor": (agent.actor, agent.actor_opt),
                                        "critic": (agent.critic, agent.critic_opt)}, config_hash(spec))
        per_seed[seed] = log
    return _summary(spec, per_seed)


def _summary(spec, per_seed: dict) -> dict:
    f = spec.run.final_fraction
    ee = [final_mean(log, "mean_ee", f) for log in per_seed.values()]
    rw = [final_mean(log, "mean_reward", f) for log in per_seed.values()]
    return {"mode": spec.mode, "seeds": list(per_seed), "final_ee": _stats(ee), "final_reward": _stats(rw),
            "per_seed_final_ee": ee, "per_seed_final_reward": rw}


def run_train(spec: ExperimentSpec, out: Path, mode: str, master_checkpoint=None) -> dict:
    master = None
    if mode != "random_init":
        if master_checkpoint is None:
            raise ConfigError(f"transfer mode {mode!r} needs --master-checkpoint")
        master = MasterPolicy(load_policy(master_checkpoint), source_task_id=str(master_checkpoint))
    per_seed = {}
    for seed in spec.seeds:
        d = stamp(out / f"seed_{seed}", spec)
        agent, log = run_single(mode, spec.target, seed, spec.ppo, spec.transfer, spec.ppo.num_updates, master)
        write_rows(d / "train_log.csv", LOG_COLUMNS, log)
        write_curve(d / f"curve_{mode}.csv", log)
        save_bundle(d / "agent.json", {"actor": (agent.actor, agent.actor_opt),
                                       "critic": (agent.critic, agent.critic_opt)}, config_hash(spec))
        per_seed[seed] = log
    summary = _summary(spec, per_seed)
    summary["transfer"] = mode
    return summary


def run_eval(spec: ExperimentSpec, out: Path, checkpoint) -> dict:
    if checkpoint is None:
        raise ConfigError("eval needs --checkpoint (or --master-checkpoint)")
    actor = load_policy(checkpoint)
    per_seed = {}
    for seed in spec.seeds:
        d = stamp(out / f"seed_{seed}", spec)
        env = OranEnv(spec.target, seed=seed * 1000 + 900, record_trace=True)
        rows = evaluate_policy(actor, env, spec.run.eval_ttis)
        write_rows(d / "eval.csv", EVAL_COLUMNS, rows)
        write_rows(d / "trace.csv", TRACE_COLUMNS, env.trace)
        per_seed[seed] = [r["ee"] for r in rows]
    means = [float(np.mean(v)) for v in per_seed.values()]
    return {"mode": "eval", "checkpoint": str(checkpoint), "seeds": list(per_seed), "mean_ee": _stats(means),
            "median_ee": float(np.median(np.concatenate(list(per_seed.values()))))}


SWEEP_COLUMNS = ("rate", "mean_ee", "std_ee")
SWEEP_RUN_COLUMNS = ("mode", "rate", "seed", "final_ee", "final_reward")


def run_sweep(spec: ExperimentSpec, out: Path) -> dict:
    """Final EE against URLLC arrival rate for each training mode.

    One master is trained per rate on the source task (seeded with the
    first seed); every mode and seed then trains on the target task.
    """
    runs = []
    f = spec.run.final_fraction
    for rate in spec.run.arrival_rates:
        src = spec.source.replace(urllc_arrival_rate=rate)
        tgt = spec.target.replace(urllc_arrival_rate=rate)
        needs_master = any(m != "random_init" for m in spec.run.sweep_modes)
        master = None
        if needs_master:
            master, _, mlog = train_master(src, spec.ppo, spec.run.master_updates, spec.seeds[0])
            write_rows(out / f"master_rate{rate:g}.csv", LOG_COLUMNS, mlog)
        for mode in spec.run.sweep_modes:
            for seed in spec.seeds:
                _, log = run_single(mode, tgt, seed, spec.ppo, spec.transfer, spec.ppo.num_updates, master)
                write_curve(out / "curves" / f"{mode}_rate{rate:g}_seed{seed}.csv", log)
                runs.append({"mode": mode, "rate": float(rate), "seed": seed,
                             "final_ee": final_mean(log, "mean_ee", f),
                             "final_reward": final_mean(log, "mean_reward", f)})
    write_rows(out / "sweep_runs.csv", SWEEP_RUN_COLUMNS, runs)
    table = {}
    for mode in spec.run.sweep_modes:
        rows = []
        for rate in spec.run.arrival_rates:
            ee = [r["final_ee"] for r in runs if r["mode"] == mode and r["rate"] == float(rate)]
            rows.append({"rate": float(rate), "mean_ee": float(np.mean(ee)), "std_ee": float(np.std(ee))})
        write_rows(out / f"sweep_{mode}.csv", SWEEP_COLUMNS, rows)
        table[mode] = rows
    return {"mode": "sweep_arrival", "seeds": list(spec.seeds), "sweep": table}


def run_oracle(spec: ExperimentSpec, out: Path) -> dict:
    inst = oracle.default_tiny_instance()
    best, ee_star, table = oracle.brute_force_best(inst)
    with (out / "ee_table.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("action_index", "ee"))
        for i, v in enumerate(table.tolist()):
            w.writerow((i, repr(v)))
    argmax = {
        "action_index": int(np.argmax(table)), "ee_star": ee_star, "n_actions": int(table.size),
        "actions": [{"rb_user": a.rb_user.tolist(), "rb_power_w": a.rb_power_w.tolist(),
                     "puncture": a.puncture.tolist()} for a in best],
    }
    write_json(out / "argmax.json", argmax)
    return {"mode": "oracle", "ee_star": ee_star, "n_actions": int(table.size)}


def run_gradcheck(spec: ExperimentSpec, out: Path) -> dict:
    checks = run_gradchecks()
    report = [{"name": c.name, "rel_error": c.rel_error, "tolerance": c.tolerance, "passed": c.passed,
               "n_params": c.n_params} for c in checks]
    write_json(out / "gradcheck.json", report)
    ok = all(c.passed for c in checks)
    if not ok:
        raise RuntimeError("gradient check failed: " + ", ".join(c.name for c in checks if not c.passed))
    return {"mode": "gradcheck", "passed": ok, "checks": report}


def run(spec: ExperimentSpec, master_checkpoint=None, transfer: str | None = None, checkpoint=None) -> dict:
    """Execute one experiment spec; writes artifacts and returns the summary."""
    out = stamp(spec.output_dir, spec)
    mode = spec.mode
    if mode == "train_master":
        summary = run_train_master(spec, out)
    elif mode == "train":
        summary = run_train(spec, out, transfer or spec.run.transfer_mode, master_checkpoint)
    elif mode == "eval":
        summary = run_eval(spec, out, checkpoint or master_checkpoint)
    elif mode == "sweep_arrival":
        summary = run_sweep(spec, out)
    elif mode == "oracle":
        summary = run_oracle(spec, out)
    else:
        summary = run_gradcheck(spec, out)
    summary["code_hash"] = code_hash()
    summary["config_hash"] = config_hash(spec)
    write_json(out / "summary.json", summary)
    return summary


# ----------------------------------------------------------------- parser


def _seeds(text: str) -> tuple:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"--seed expects comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("--seed needs at least one integer")
    return seeds


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="green-oran", description="Energy-efficient O-RAN resource allocation experiments.")
    p.add_argument("mode", choices=RUN_MODES)
    p.add_argument("--config", type=Path, help="JSON experiment file (omitted keys take defaults)")
    p.add_argument("--seed", type=_seeds, help="comma-separated seeds, overriding the config")
    p.add_argument("--out", type=Path, help="output directory, overriding the config")
    p.add_argument("--master-checkpoint", type=Path, help="master policy for transfer modes")
    p.add_argument("--transfer", choices=MODES, help="training mode for `train`")
    p.add_argument("--checkpoint", type=Path, help="policy checkpoint for `eval`")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        spec = load_config(args.config) if args.config is not None else ExperimentSpec()
        changes = {"mode": args.mode}
        if args.seed is not None:
            changes["seeds"] = args.seed
        if args.out is not None:
            changes["output_dir"] = str(args.out)
        spec = spec.replace(**changes)
        for path in (args.master_checkpoint, args.checkpoint):
            if path is not None and not path.is_file():
                raise ConfigError(f"checkpoint not found: {path}")
        summary = run(spec, args.master_checkpoint, args.transfer, args.checkpoint)
    except (ConfigError, CheckpointError) as exc:
        _fail(exc, EXIT_CONFIG)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report anything as machine-readable JSON
        _fail(exc, EXIT_RUNTIME, traceback.format_exc())
        return EXIT_RUNTIME
    print(json.dumps(summary, sort_keys=True))
    return 0


def _fail(exc: BaseException, code: int, trace: str | None = None) -> None:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if trace:
        err["traceback"] = trace
    print(json.dumps(err), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
