"""Command-line entry point: ``jobshop-rl <subcommand> [flags]``.

Every subcommand accepts ``--config FILE``, a plain ``key = value`` file
(``#`` starts a comment; keys are flag names with or without the leading
dashes, ``-`` and ``_`` interchangeable). Flags given on the command line win
over the file. All outputs land under ``--out``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure. Failures print one line to stderr::

    error kind=<kind> code=<exit code> message="<text>"
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import CHECKPOINT_FORMAT_VERSION, __version__
from . import env, evaluation, exact, ppo
from .errors import ConfigError, DataError, JobShopError
from .instances import format_distribution, generate_many, load_instance, parse_distribution, save_instance

INSTANCE_SUFFIX = ".jssp"


def _ffn(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"FFN widths must be comma-separated integers: {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; command-line flags override it")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="parallel workers (default: cores)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jobshop-rl", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version",
                        version=f"jobshop-rl {__version__} (checkpoint format {CHECKPOINT_FORMAT_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate random instances")
    _common(p)
    p.add_argument("--jobs", type=int, required=True)
    p.add_argument("--machines", type=int, required=True)
    p.add_argument("--dist", default="gaussian:100:10", help="gaussian:MU:SIGMA or poisson:LAMBDA")
    p.add_argument("--count", type=int, default=1)

    p = sub.add_parser("train", help="train actor and critic on a directory of instances")
    _common(p)
    p.add_argument("--data", required=True, help=f"directory of *{INSTANCE_SUFFIX} files")
    p.add_argument("--episodes", type=int, default=5000)
    p.add_argument("--rollouts", type=int, default=10)
    p.add_argument("--beta0", type=float, default=15.0)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--actor-steps", type=int, default=1)
    p.add_argument("--critic-steps", type=int, default=3)
    p.add_argument("--actor-lr", type=float, default=1e-4)
    p.add_argument("--critic-lr", type=float, default=1e-4)
    p.add_argument("--kl-direction", choices=("old_new", "new_old"), default="old_new")
    p.add_argument("--hidden1", type=int, default=110)
    p.add_argument("--hidden2", type=int, default=220)
    p.add_argument("--ffn", type=_ffn, default=(1100, 550, 110), help="comma-separated widths")
    p.add_argument("--time-scale", type=float, help="feature scale (default: mean p * max machines)")
    p.add_argument("--value-scale", type=float, help="critic output scale (default: the time scale)")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-after", type=int, help="stop after this many new episodes")

    p = sub.add_parser("solve", help="greedy schedule from a trained actor")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--instance", required=True)

    p = sub.add_parser("exact", help="branch-and-bound with a time limit")
    _common(p)
    p.add_argument("--instance", required=True)
    p.add_argument("--time-limit", type=float, default=60.0)
    p.add_argument("--target", type=int, help="stop once a makespan <= target is found")

    p = sub.add_parser("bench", help="compare the trained actor with the exact search")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--time-limit", type=float, default=60.0)
    p.add_argument("--analyses", default="time,quality", help="comma-separated subset of time,quality")

    p = sub.add_parser("export", help="write the disjunctive MILP as an LP file")
    _common(p)
    p.add_argument("--instance", required=True)
    return parser


def read_config_file(path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.lstrip("-").replace("-", "_")] = value
    return values


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if name in action.choices:
            return action.choices[name]
    raise KeyError(name)


def parse_args(argv=None) -> argparse.Namespace:
    """Parse flags, layering a ``--config`` file underneath them."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or known.command not in COMMANDS:
        return parser.parse_args(argv)
    config_path, command = known.config, known.command
    sub = _subparser(parser, command)
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, text in read_config_file(config_path).items():
        if key not in actions:
            raise ConfigError(f"unknown key {key!r} in {config_path} for '{command}'")
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = text.lower() in ("1", "true", "yes", "on")
            continue
        try:
            value = action.type(text) if action.type else text
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r} in {config_path}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise ConfigError(f"{key!r} must be one of {sorted(action.choices)}, got {value!r}")
        defaults[key] = value
    # required flags supplied by the file must not be rejected by argparse
    for key in defaults:
        actions[key].required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _instance_files(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"not a directory: {d}")
    files = sorted(d.glob(f"*{INSTANCE_SUFFIX}"))
    if not files:
        raise DataError(f"no *{INSTANCE_SUFFIX} files in {d}")
    return files


def _load_set(directory) -> list[tuple[str, object]]:
    return [(f.stem, load_instance(f)) for f in _instance_files(directory)]


def cmd_gen(args) -> int:
    if args.count < 1:
        raise ConfigError(f"count must be >= 1, got {args.count}")
    dist = parse_distribution(args.dist)
    out = _out(args)
    label = f"{args.jobs}x{args.machines}-{dist.label()}"
    instances = generate_many(args.jobs, args.machines, dist, args.count, args.seed)
    print(f"# {len(instances)} instances {label} {format_distribution(dist)} seed={args.seed}")
    for i, inst in enumerate(instances):
        path = out / f"{label}_{args.seed}_{i}{INSTANCE_SUFFIX}"
        save_instance(inst, path)
        print(path)
    return 0


def _train_config(args, dataset) -> ppo.TrainConfig:
    overrides = {"hidden1": args.hidden1, "hidden2": args.hidden2, "ffn": args.ffn}
    if args.time_scale is not None:
        overrides["time_scale"] = args.time_scale
        overrides["value_scale"] = args.time_scale
    if args.value_scale is not None:
        overrides["value_scale"] = args.value_scale
    model = ppo.default_model_config([inst for _, inst in dataset], **overrides)
    return ppo.TrainConfig(
        episodes=args.episodes, rollouts=args.rollouts, beta0=args.beta0, delta=args.delta,
        actor_steps=args.actor_steps, critic_steps=args.critic_steps, actor_lr=args.actor_lr,
        critic_lr=args.critic_lr, seed=args.seed, kl_direction=args.kl_direction,
        checkpoint_every=args.checkpoint_every, model=model,
    )


def cmd_train(args) -> int:
    dataset = _load_set(args.data)
    config = _train_config(args, dataset)
    out = _out(args)
    if args.resume and not Path(args.resume).is_file():
        raise DataError(f"checkpoint not found: {args.resume}")
    if args.stop_after is not None and args.stop_after < 1:
        raise ConfigError(f"stop-after must be >= 1, got {args.stop_after}")
    log_path, ckpt = out / "train_log.csv", out / "checkpoint.ckpt"
    result = ppo.train(dataset, config, log_path=log_path, checkpoint_path=ckpt,
                       resume=args.resume, stop_after=args.stop_after)
    last = result.log[-1] if result.log else None
    print(f"episodes={result.trainer.episode} log={log_path} checkpoint={ckpt}"
          + (f" last_best_return={last.best_return}" if last else ""))
    return 0


def _policy(path):
    if not Path(path).is_file():
        raise DataError(f"checkpoint not found: {path}")
    actor, _, _ = ppo.load_policy(path)
    return actor


def cmd_solve(args) -> int:
    actor = _policy(args.checkpoint)
    inst = load_instance(args.instance)
    schedule, ms = ppo.greedy_solve(inst, actor)
    path = _out(args) / f"{Path(args.instance).stem}_schedule.csv"
    path.write_text(env.schedule_to_csv(schedule), encoding="utf-8")
    print(f"makespan={ms}")
    return 0


def cmd_exact(args) -> int:
    if args.time_limit <= 0:
        raise ConfigError(f"time-limit must be positive, got {args.time_limit}")
    inst = load_instance(args.instance)
    res = exact.branch_and_bound(inst, args.time_limit, target=args.target)
    path = _out(args) / f"{Path(args.instance).stem}_exact.csv"
    path.write_text(env.schedule_to_csv(res.schedule), encoding="utf-8")
    print(res.summary())
    return 0


def cmd_bench(args) -> int:
    analyses = tuple(a.strip() for a in args.analyses.split(",") if a.strip())
    if not analyses or set(analyses) - {"time", "quality"}:
        raise ConfigError(f"analyses must be a subset of time,quality, got {args.analyses!r}")
    if args.time_limit <= 0:
        raise ConfigError(f"time-limit must be positive, got {args.time_limit}")
    actor = _policy(args.checkpoint)
    dataset = _load_set(args.data)
    result = evaluation.bench(dataset, actor, args.time_limit, analyses, max(1, args.workers))
    for path in evaluation.write_bench(result, _out(args)):
        print(path)
    return 0


def cmd_export(args) -> int:
    inst = load_instance(args.instance)
    path = _out(args) / f"{Path(args.instance).stem}.lp"
    path.write_bytes(exact.export_lp(exact.build_milp(inst)))
    print(path)
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "solve": cmd_solve, "exact": cmd_exact,
            "bench": cmd_bench, "export": cmd_export}


def _fail(kind: str, code: int, message: str) -> int:
    print(f"error kind={kind} code={code} message={json.dumps(str(message))}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except JobShopError as exc:
        return _fail(exc.kind, exc.exit_code, exc)
    except FileNotFoundError as exc:
        return _fail("data", DataError.exit_code, exc)
    except OSError as exc:
        return _fail("io", DataError.exit_code, exc)


if __name__ == "__main__":
    sys.exit(main())
