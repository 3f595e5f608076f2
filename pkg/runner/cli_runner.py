"""
Command-line runner for the spillover solver.

Each command writes its artifacts under a run directory together with a
manifest.json, and prints a status envelope as JSON on stdout. Logs go to
stderr (and to LOG_FILE when configured) so stdout stays machine readable.

Usage:
    python -m runner solve --params data/base.toml --network data/single.json
    python -m runner sweep --vary sigma --values 0.5,1,2,4
    python -m runner networks --fixed-b 1.2
    python -m runner ensemble --runs 1000 --sectors 4 --seed 7
    python -m runner regress --from data/runs/ensemble
    python -m runner simulate --firms 1000 --horizon 50 --dt 0.001
    python -m runner kcurve --k-values 0,0.5,1,2,4
"""

import argparse
import importlib
import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from typing import Optional

import colorlog

from config import Config
from model.errors import NonConvergenceError, SingularJacobianError, SpilloverError
from tools.analysis_tools import RunTimer, build_manifest
from tools.data_tools import ensure_output_dir, save_json, to_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_SOLVER = 2

COMMAND_REGISTRY = {
    "solve": {
        "module": "runner.handlers",
        "handler": "handle_solve",
        "description": "Solve the stationary equilibrium for one network",
    },
    "sweep": {
        "module": "runner.handlers",
        "handler": "handle_sweep",
        "description": "Sweep one model parameter and record mean productivity",
    },
    "networks": {
        "module": "runner.handlers",
        "handler": "handle_networks",
        "description": "Compare the six canonical small networks",
    },
    "ensemble": {
        "module": "runner.handlers",
        "handler": "handle_ensemble",
        "description": "Solve an ensemble of random networks",
    },
    "regress": {
        "module": "runner.handlers",
        "handler": "handle_regress",
        "description": "Fit indirect and direct-only spillover regressions",
    },
    "simulate": {
        "module": "runner.handlers",
        "handler": "handle_simulate",
        "description": "Simulate finitely many firms and compare with the equilibrium",
    },
    "kcurve": {
        "module": "runner.handlers",
        "handler": "handle_kcurve",
        "description": "Mean productivity as a function of the spillover level k",
    },
}


def _configure_logging(level: Optional[str] = None):
    root = logging.getLogger()
    root.setLevel(getattr(logging, (level or Config.LOG_LEVEL).upper(), logging.INFO))
    for handler in list(root.handlers):
        root.removeHandler(handler)

    console = colorlog.StreamHandler(sys.stderr)
    console.setFormatter(
        colorlog.ColoredFormatter("%(log_color)s%(asctime)s [%(name)s] %(levelname)s:%(reset)s %(message)s")
    )
    root.addHandler(console)

    if Config.LOG_FILE:
        os.makedirs(os.path.dirname(os.path.abspath(Config.LOG_FILE)), exist_ok=True)
        file_handler = RotatingFileHandler(
            Config.LOG_FILE,
            maxBytes=10 * 1024 * 1024,
            backupCount=5,
            encoding="utf-8",
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter("[%(asctime)s] %(levelname)s in %(module)s: %(message)s"))
        root.addHandler(file_handler)


def exit_code_for(error: Exception) -> int:
    if isinstance(error, (NonConvergenceError, SingularJacobianError)):
        return EXIT_SOLVER
    return EXIT_INPUT


class RunnerArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with EXIT_INPUT so they never look like a solver failure."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _common_parser() -> argparse.ArgumentParser:
    common = RunnerArgumentParser(add_help=False)
    common.add_argument("--params", default=None, help="TOML parameter document")
    common.add_argument("--grid", type=int, default=None, help=f"grid points (default {Config.GRID_POINTS})")
    common.add_argument("--seed", type=int, default=Config.SEED, help="root random seed")
    common.add_argument("--threads", type=int, default=Config.THREADS, help="worker threads")
    common.add_argument("--out", default=None, help="run directory (default OUTPUT_DIR/<command>)")
    common.add_argument("--fixed-b", dest="fixed_b", type=float, default=None, help="hold the price factor B fixed")
    common.add_argument("--log-level", dest="log_level", default=None, help="override LOG_LEVEL")
    return common


def _network_args(parser: argparse.ArgumentParser):
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--network", default=None, help="JSON network document")
    group.add_argument("--generate", default=None, help="random network 'L,prob,weight_max'")


def _ensemble_args(parser: argparse.ArgumentParser):
    parser.add_argument("--runs", type=int, default=100, help="number of random networks")
    parser.add_argument("--sectors", type=int, default=4, help="sectors per network")
    parser.add_argument("--prob", type=float, default=None, help="connection probability (default: drawn per run)")
    parser.add_argument("--weight-max", dest="weight_max", type=float, default=3.0, help="largest kernel weight")
    parser.add_argument("--equal-weights", dest="equal_weights", action="store_true", help="use A = 1/L")


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = RunnerArgumentParser(
        prog="runner",
        description="Multi-sector knowledge spillover solver",
    )
    parser.add_argument("--list-commands", action="store_true", help="List all available commands and exit")
    sub = parser.add_subparsers(dest="command", parser_class=RunnerArgumentParser)

    solve = sub.add_parser("solve", parents=[common], help=COMMAND_REGISTRY["solve"]["description"])
    _network_args(solve)

    sweep = sub.add_parser("sweep", parents=[common], help=COMMAND_REGISTRY["sweep"]["description"])
    _network_args(sweep)
    sweep.add_argument("--vary", required=True, help="sigma, wage (w), discount (rho), gamma or alpha")
    sweep.add_argument("--values", required=True, help="comma-separated values")

    sub.add_parser("networks", parents=[common], help=COMMAND_REGISTRY["networks"]["description"])

    ensemble = sub.add_parser("ensemble", parents=[common], help=COMMAND_REGISTRY["ensemble"]["description"])
    _ensemble_args(ensemble)

    regress = sub.add_parser("regress", parents=[common], help=COMMAND_REGISTRY["regress"]["description"])
    regress.add_argument("--from", dest="source", default=None, help="directory of a previous ensemble run")
    _ensemble_args(regress)

    simulate = sub.add_parser("simulate", parents=[common], help=COMMAND_REGISTRY["simulate"]["description"])
    _network_args(simulate)
    simulate.add_argument("--firms", type=int, default=1000, help="firms per sector")
    simulate.add_argument("--horizon", type=float, default=50.0, help="simulated time")
    simulate.add_argument("--dt", type=float, default=1e-3, help="time step")
    simulate.add_argument("--burn-in", dest="burn_in", type=float, default=0.5, help="fraction of snapshots skipped")
    simulate.add_argument("--record-every", dest="record_every", type=int, default=10, help="steps between snapshots")

    kcurve = sub.add_parser("kcurve", parents=[common], help=COMMAND_REGISTRY["kcurve"]["description"])
    kcurve.add_argument("--k-values", dest="k_values", default=None, help="comma-separated k values")

    return parser


def _config_of(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("list_commands", "log_level")}


def run_command(args) -> dict:
    """Invoke a command by name and return its status envelope."""
    entry = COMMAND_REGISTRY[args.command]
    out_dir = args.out or os.path.join(Config.OUTPUT_DIR, args.command)
    logger.info("Invoking command=%s out=%s", args.command, out_dir)

    try:
        ensure_output_dir(out_dir)
        mod = importlib.import_module(entry["module"])
        handler = getattr(mod, entry["handler"])
        with RunTimer() as timer:
            result, written = handler(args, out_dir)
        manifest_path = os.path.join(out_dir, "manifest.json")
        files = [os.path.basename(p) for p in written] + ["manifest.json"]
        save_json(build_manifest(args.command, _config_of(args), args.seed, timer, files), manifest_path)
        return {"status": "success", "command": args.command, "out_dir": out_dir, "result": result}
    except SpilloverError as e:
        logger.error("Command %s failed: %s", args.command, e)
        envelope = {
            "status": "error",
            "command": args.command,
            "error_type": type(e).__name__,
            "error": str(e),
            "exit_code": exit_code_for(e),
        }
        if isinstance(e, NonConvergenceError):
            envelope["residual"] = e.residual
            envelope["sector"] = e.sector
            envelope["trace"] = list(e.trace or [])
        return envelope


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.list_commands:
        for name, info in COMMAND_REGISTRY.items():
            print(f"  {name:12s} {info['description']}")
        return EXIT_OK

    if not args.command:
        parser.error("a command is required (or use --list-commands)")

    _configure_logging(args.log_level)
    result = run_command(args)
    print(to_json(result))
    return EXIT_OK if result.get("status") == "success" else result.get("exit_code", EXIT_INPUT)


if __name__ == "__main__":
    sys.exit(main())
