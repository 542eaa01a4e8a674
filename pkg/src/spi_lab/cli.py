"""Command-line entry point: spi-lab <subcommand> [options]."""
from __future__ import annotations

import argparse
import ast
import json
import re
import sys
from pathlib import Path

from . import harness, io
from .guarantees import PreconditionError
from .harness import EXIT_CONFIG, EXIT_OK, EXIT_VIOLATION, ConfigError, ExperimentConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

# per-subcommand defaults layered over ExperimentConfig's own
SUBCOMMAND_DEFAULTS = {
    "improve": dict(algorithm="mirror"),
    "deepspi": dict(algorithm="deepspi", env="fig2"),
    "dream-eval": dict(algorithm="dreamspi-eval", instances=20),
    "verify": dict(algorithm="verify", instances=300, epsilon=0.25),
    "pac": dict(algorithm="pac", instances=3, trials=200, epsilon=0.05, delta=0.1),
}


def parse_params(text):
    """'k=v,k2=(1,2)' -> dict with Python-literal values."""
    if not text:
        return {}
    out = {}
    for item in re.split(r",(?![^()\[\]]*[)\]])", text):
        if not item.strip():
            continue
        if "=" not in item:
            raise ConfigError(f"malformed parameter {item!r}; expected key=value")
        key, val = item.split("=", 1)
        try:
            out[key.strip()] = ast.literal_eval(val.strip())
        except (ValueError, SyntaxError):
            out[key.strip()] = val.strip()
    return out


def load_config_file(path) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from None
    return {k.replace("-", "_"): v for k, v in data.items()}


def build_config(command: str, args) -> ExperimentConfig:
    data = dict(SUBCOMMAND_DEFAULTS.get(command, {}))
    if getattr(args, "config", None):
        data.update(load_config_file(args.config))
    flags = {k: v for k, v in vars(args).items() if v is not None and k not in ("command", "config", "params", "suite")}
    if getattr(args, "params", None):
        flags["env_params"] = parse_params(args.params)
    data.update(flags)
    data["algorithm"] = SUBCOMMAND_DEFAULTS[command]["algorithm"]
    return ExperimentConfig.from_mapping(data).validate()


def _common(p, out_help="trace CSV path (default: <run-root>/<algorithm>-<config digest>/trace.csv)"):
    p.add_argument("--config", help="TOML file with config keys; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=out_help)
    p.add_argument("--run-root", dest="run_root")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spi-lab", description="Safe policy improvement lab for finite MDPs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="optimal values, and policy statistics when a policy is given")
    p.add_argument("--mdp", required=True)
    p.add_argument("--policy")
    p.add_argument("--out")

    p = sub.add_parser("improve", help="iterate the exact constrained update")
    _common(p)
    p.add_argument("--mdp", dest="mdp_path")
    p.add_argument("--policy", dest="policy_path")
    p.add_argument("--env")
    p.add_argument("--params")
    p.add_argument("--c", type=float)
    p.add_argument("--iters", type=int)

    p = sub.add_parser("deepspi", help="clipped-surrogate updates with per-step safety checks")
    _common(p)
    p.add_argument("--env")
    p.add_argument("--params")
    p.add_argument("--alpha-r", dest="alpha_r", type=float)
    p.add_argument("--alpha-p", dest="alpha_p", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--minibatches", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--steps", type=int)

    p = sub.add_parser("dream-eval", help="latent imagination returns vs exact latent values")
    _common(p)
    p.add_argument("--instances", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--rollouts", type=int)

    p = sub.add_parser("verify", help="randomized bound suite")
    _common(p)
    p.add_argument("--suite", default="random", choices=["random"])
    p.add_argument("--instances", type=int)
    p.add_argument("--epsilon", type=float, help="representation-check slack as a fraction of the value range")
    p.add_argument("--trials", type=int)
    p.add_argument("--verbose", action="store_true", default=None)

    p = sub.add_parser("pac", help="coverage of the sampled safe-improvement error estimate")
    _common(p)
    p.add_argument("--instances", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)

    p = sub.add_parser("demo", help="build a counterexample environment and narrate it")
    p.add_argument("name", choices=["fig1", "fig2"])
    p.add_argument("--params")
    p.add_argument("--out", help="environment JSON path")

    p = sub.add_parser("report", help="aggregate trace or bound CSVs")
    p.add_argument("traces", nargs="*")
    p.add_argument("--out", help="summary JSON path (default: stdout)")
    p.add_argument("--plot-csv", dest="plot_csv")
    return parser


def _solve(args) -> int:
    mdp = io.mdp_from_dict(io.read_json(args.mdp))
    policy = io.policy_from_dict(io.read_json(args.policy)) if args.policy else None
    summary = harness.solve_summary(mdp, policy)
    text = json.dumps(harness._plain(summary), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def _demo(args) -> int:
    spec, lines, ok = harness.demo(args.name, parse_params(args.params))
    if args.out:
        io.write_json(args.out, harness.env_to_dict(spec))
    print("\n".join(lines))
    print(f"  claims reproduced: {ok}")
    return EXIT_OK if ok else EXIT_VIOLATION


def _report(args) -> int:
    summary = harness.report(args.traces)
    text = json.dumps(harness._plain(summary), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    if args.plot_csv:
        harness.write_csv(args.plot_csv, ["trace", "iteration", "J", "L_R", "L_P"], harness.plot_rows(args.traces))
    return EXIT_VIOLATION if summary.get("violations") else EXIT_OK


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.command == "solve":
            return _solve(args)
        if args.command == "demo":
            return _demo(args)
        if args.command == "report":
            return _report(args)
        config = build_config(args.command, args)
        trace = harness.run(config)
        path = trace.write(config)
        print(f"wrote {path}")
        print(json.dumps(harness._plain({k: v for k, v in trace.summary.items() if k != "details"}),
                         sort_keys=True))
        if trace.exit_code == EXIT_VIOLATION:
            print("theorem violation detected", file=sys.stderr)
        return trace.exit_code
    except (ConfigError, PreconditionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
