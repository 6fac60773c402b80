import argparse
import json
import logging
from typing import List, Optional

from pydantic import ValidationError

from sdprune import __version__
from sdprune.commands import experiment_commands as commands
from sdprune.core.config import settings
from sdprune.core.errors import SdpruneError
from sdprune.core.logging_config import configure_logging
from sdprune.schemas.config_schemas import ExperimentConfig

logger = logging.getLogger("sdprune")


def _float_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got '{text}'") from e


def _resolution(text: str):
    try:
        nu, nv = (int(x) for x in text.lower().split("x"))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected NUxNV, got '{text}'") from e
    return nu, nv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=settings.app_name, description="Structured directional pruning experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, needs_config: bool = True) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=needs_config, help="experiment config (JSON)")
        p.add_argument("--out", help="output directory (defaults to outputs.dir)")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="config override, e.g. optimizer.c=0.5 (repeatable)")
        p.add_argument("--log-level", type=str.upper, choices=["DEBUG", "INFO", "WARNING", "ERROR"])
        return p

    add("train", "train with the configured optimizer")

    p = add("prune-exact", "exact directional pruning of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lambdas", type=_float_list, help="comma-separated lambda grid")

    p = add("prox-check", "group prox against the brute-force oracle", needs_config=False)
    p.add_argument("--cases", type=int, default=10_000)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--grid", type=int, default=200_001)

    p = add("connect", "quadratic Bezier curve between two checkpoints")
    p.add_argument("--checkpoint-a", required=True)
    p.add_argument("--checkpoint-b", required=True)

    p = add("contour", "loss contour on the plane through three checkpoints")
    p.add_argument("--w1", required=True)
    p.add_argument("--w2", required=True)
    p.add_argument("--w3", required=True)
    p.add_argument("--resolution", type=_resolution, help="grid size as NUxNV")

    p = add("theory", "asymptotic residual checks across a gamma sweep")
    p.add_argument("--which", choices=["thm2", "thm3"])
    p.add_argument("--gammas", type=_float_list, help="comma-separated step sizes")
    return parser


def run(args: argparse.Namespace) -> None:
    if args.command == "prox-check":
        commands.cmd_prox_check(args.cases, args.seed or 0, args.tol, args.grid, args.out or "outputs")
        return
    config = ExperimentConfig.from_file(args.config, args.overrides, args.seed)
    if args.command == "train":
        commands.cmd_train(config, args.out)
    elif args.command == "prune-exact":
        commands.cmd_prune_exact(config, args.checkpoint, args.lambdas, args.out)
    elif args.command == "connect":
        commands.cmd_connect(config, args.checkpoint_a, args.checkpoint_b, args.out)
    elif args.command == "contour":
        commands.cmd_contour(config, args.w1, args.w2, args.w3, args.resolution, args.out)
    elif args.command == "theory":
        commands.cmd_theory(config, args.which, args.gammas, args.out)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        run(args)
    except SdpruneError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except ValidationError as e:
        logger.error("invalid configuration:\n%s", e)
        return 2
    except (OSError, json.JSONDecodeError) as e:
        logger.error("input error: %s", e)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
