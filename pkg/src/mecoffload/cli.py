"""Command-line entry point: ``mecoffload {train,compare,sweep}``.

Configuration is a flat YAML mapping whose keys are the :class:`SimConfig`
fields plus the agent and run keys in :data:`RUN_DEFAULTS`. Flags override
file values, and the effective configuration is echoed to ``config.echo`` in
the output directory.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import yaml

from . import agents as ag
from . import harness, neural
from .config import ConfigError, SimConfig

OUT_ROOT_ENV = "MECOFFLOAD_RUN_ROOT"
DEFAULT_OUT_ROOT = "run"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

RUN_DEFAULTS = {
    # agent
    "hidden": [200, 200],
    "gamma": 0.9,
    "batch_size": 64,
    "buffer_capacity": 100_000,
    "learning_rate": 5e-3,
    "lr_halving_episodes": 100,
    "updates_per_episode": 1,
    "target_sync_updates": 0,
    "reward_transform": "log1p",
    "reward_clip": 10.0,
    "pretrain_episodes": 100,
    "epsilon_decay_steps": 10_000,
    "epsilon_start": 1.0,
    "epsilon_end": 0.01,
    # run control
    "seed": 0,
    "episodes": 2000,
    "eval_episodes": 50,
    "sweep_seeds": 10,
    "sweep_servers": [1, 2, 3],
    "checkpoint_every": 0,
}

SIM_KEYS = tuple(f.name for f in dataclasses.fields(SimConfig))


class UsageError(Exception):
    pass


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"config {path} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must be a key-value mapping")
    return data


def effective_config(file_values: dict, overrides: dict) -> dict:
    """Defaults, then file values, then flag overrides; unknown keys rejected."""
    unknown = sorted(set(file_values) - set(SIM_KEYS) - set(RUN_DEFAULTS))
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(map(str, unknown))}")
    merged = dict(RUN_DEFAULTS)
    merged.update(dataclasses.asdict(SimConfig()))
    merged.update(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def build_sim_config(values: dict) -> SimConfig:
    try:
        return SimConfig.from_dict({k: values[k] for k in SIM_KEYS})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def build_train_settings(values: dict) -> harness.TrainSettings:
    try:
        dqn = ag.DqnSettings(
            hidden=tuple(int(h) for h in values["hidden"]),
            gamma=float(values["gamma"]),
            batch_size=int(values["batch_size"]),
            buffer_capacity=int(values["buffer_capacity"]),
            learning_rate=float(values["learning_rate"]),
            target_sync_updates=int(values["target_sync_updates"]),
            reward_transform=str(values["reward_transform"]),
            reward_clip=float(values["reward_clip"]),
        )
        schedule = ag.EpsilonSchedule(
            pretrain_episodes=int(values["pretrain_episodes"]),
            decay_steps=int(values["epsilon_decay_steps"]),
            start=float(values["epsilon_start"]),
            end=float(values["epsilon_end"]),
        )
        settings = harness.TrainSettings(
            dqn=dqn, schedule=schedule,
            lr_halving_episodes=int(values["lr_halving_episodes"]),
            updates_per_episode=int(values["updates_per_episode"]),
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid agent settings: {exc}") from exc
    if dqn.reward_transform not in ag.REWARD_TRANSFORMS:
        raise UsageError(f"reward_transform must be one of {', '.join(ag.REWARD_TRANSFORMS)}")
    if not 0.0 <= dqn.gamma < 1.0 or dqn.batch_size < 1 or dqn.buffer_capacity < 1:
        raise UsageError("gamma must be in [0, 1); batch_size and buffer_capacity >= 1")
    if settings.lr_halving_episodes < 1 or settings.updates_per_episode < 0:
        raise UsageError("lr_halving_episodes must be >= 1 and updates_per_episode >= 0")
    return settings


def parse_server_list(text) -> list[int]:
    if isinstance(text, int):
        return [text]
    if isinstance(text, (list, tuple)):
        items = list(text)
    else:
        items = [p for p in str(text).split(",") if p.strip()]
    try:
        counts = [int(x) for x in items]
    except (TypeError, ValueError) as exc:
        raise UsageError(f"server counts must be integers, got {text!r}") from exc
    if not counts:
        raise UsageError("no server counts given")
    return counts


def output_dir(args, command: str, seed: int) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(OUT_ROOT_ENV) or DEFAULT_OUT_ROOT
    return Path(root) / f"{command}-seed{seed}"


def default_checkpoint(args, seed: int) -> Path:
    """``<out>/checkpoints/final`` with ``--out``, else the matching ``train`` run's."""
    if args.out:
        return Path(args.out) / "checkpoints" / "final"
    return output_dir(args, "train", seed) / "checkpoints" / "final"


def write_echo(out: Path, command: str, values: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    body = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(values.items())}
    with (out / "config.echo").open("w", encoding="utf-8") as fh:
        fh.write(f"# mecoffload {command}\n")
        yaml.safe_dump(body, fh, sort_keys=True, default_flow_style=None)


def _overrides(args) -> dict:
    out = {"seed": args.seed, "num_users": args.users}
    if args.fading is not None:
        out["fading_enabled"] = args.fading == "on"
    return out


def cmd_train(args) -> int:
    overrides = _overrides(args)
    if args.servers is not None:
        counts = parse_server_list(args.servers)
        if len(counts) != 1:
            raise UsageError("train takes a single --servers value")
        overrides["num_servers"] = counts[0]
    overrides["episodes"] = args.episodes
    values = effective_config(load_config_file(args.config), overrides)
    config = build_sim_config(values)
    settings = build_train_settings(values)
    episodes = int(values["episodes"])
    if episodes < 0:
        raise UsageError("episodes must be >= 0")
    seed = int(values["seed"])
    out = output_dir(args, "train", seed)
    write_echo(out, "train", values)
    result = harness.train(config, seed, episodes, settings,
                           checkpoint_dir=out / "checkpoints",
                           checkpoint_every=int(values["checkpoint_every"]))
    harness.write_csv(result.summary.records, out / "train.csv",
                      harness.train_columns(config.num_servers))
    print(f"wrote {out / 'train.csv'} and {out / 'checkpoints'}")
    return EXIT_OK


EVAL_COLUMNS = ["policy", "episode", "seed", "lifetime", "mean_tct", "num_completed", "censored"]


def cmd_compare(args) -> int:
    overrides = _overrides(args)
    if args.servers is not None:
        counts = parse_server_list(args.servers)
        if len(counts) != 1:
            raise UsageError("compare takes a single --servers value")
        overrides["num_servers"] = counts[0]
    overrides["eval_episodes"] = args.episodes
    values = effective_config(load_config_file(args.config), overrides)
    config = build_sim_config(values)
    seed = int(values["seed"])
    out = output_dir(args, "compare", seed)
    policies: dict[str, harness.Policy] = {}
    if not args.no_dqn:
        settings = build_train_settings(values)
        ckpt = Path(args.checkpoint) if args.checkpoint else default_checkpoint(args, seed)
        try:
            agents = harness.load_agents(config, ckpt, settings)
        except neural.CheckpointError as exc:
            raise UsageError(f"cannot load checkpoint from {ckpt}: {exc}") from exc
        policies["dqn"] = harness.DqnPolicy(agents, config.max_pool_size)
    for name in harness.BASELINES:
        policies[name] = harness.make_policy(name)
    n_eval = int(values["eval_episodes"])
    if n_eval < 1:
        raise UsageError("eval_episodes must be >= 1")
    write_echo(out, "compare", values)
    rows, summary = harness.evaluate(policies, config, n_eval, seed)
    harness.write_csv(rows, out / "eval.csv", EVAL_COLUMNS)
    for name, s in summary.items():
        tct = "NA" if s["tct_mean"] is None else f"{s['tct_mean']:.4f}"
        print(f"{name:14s} lifetime {s['lifetime_mean']:8.2f}  mean TCT {tct}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    overrides = _overrides(args)
    overrides["episodes"] = args.episodes
    if args.servers is not None:
        overrides["sweep_servers"] = parse_server_list(args.servers)
    values = effective_config(load_config_file(args.config), overrides)
    counts = parse_server_list(values["sweep_servers"])
    values["sweep_servers"] = counts
    values["num_servers"] = min(counts)  # per-count configs are derived from this template
    base = build_sim_config(values)
    for c in counts:
        if c < 1 or c > base.num_users:
            raise UsageError(f"server count {c} must be in [1, num_users={base.num_users}]")
    settings = build_train_settings(values)
    seed = int(values["seed"])
    out = output_dir(args, "sweep", seed)
    write_echo(out, "sweep", values)
    rows = harness.sweep_servers(base, counts, int(values["sweep_seeds"]), seed,
                                 int(values["episodes"]), settings)
    harness.write_csv(rows, out / "sweep.csv", ["num_servers", *EVAL_COLUMNS])
    for c, s in harness.summarize(rows, key="num_servers").items():
        tct = "NA" if s["tct_mean"] is None else f"{s['tct_mean']:.4f}"
        print(f"N={c}  lifetime {s['lifetime_mean']:8.2f}  mean TCT {tct}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file of key: value settings")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--users", type=int, help="number of users K")
    common.add_argument("--out", help=f"output directory (default ${OUT_ROOT_ENV} or ./{DEFAULT_OUT_ROOT}, "
                                      "plus <command>-seed<seed>)")
    common.add_argument("--fading", choices=("on", "off"), help="small-scale fading")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mecoffload", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train one DQN agent per server")
    p.add_argument("--episodes", type=int, help="training episodes")
    p.add_argument("--servers", help="number of servers N")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", parents=[common], help="evaluate DQN against the baselines")
    p.add_argument("--episodes", type=int, help="paired evaluation episodes")
    p.add_argument("--servers", help="number of servers N")
    p.add_argument("--checkpoint", help="directory holding agent<i>.npz "
                                        "(default: checkpoints/final of the train run)")
    p.add_argument("--no-dqn", action="store_true", help="evaluate the baselines only")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", parents=[common], help="train and evaluate per server count")
    p.add_argument("--episodes", type=int, help="training episodes per server count")
    p.add_argument("--servers", help="comma-separated server counts, e.g. 1,2,3")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"mecoffload: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except harness.TrainingDiverged as exc:
        print(f"mecoffload: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
