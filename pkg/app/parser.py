import argparse

from app.internal.config import COMMANDS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="inflab: numerical experiments on the inhomogeneous"
        " infinity-Laplace equation"
    )
    parser.add_argument(
        "command",
        nargs="?",
        choices=COMMANDS,
        help="Experiment to run (default: the 'command' key of the config)",
    )
    parser.add_argument(
        "--config",
        type=str,
        default=None,
        help="Path to a JSONC configuration file (default: built-in values)",
    )
    parser.add_argument(
        "--problem",
        type=str,
        default=None,
        help="Named problem from the registry (e.g. sharp-w, sharp-1d)",
    )
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--p", type=float, default=None)
    parser.add_argument("--kappa", type=float, default=None)
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Seed for the random polynomials of verify-identities",
    )
    parser.add_argument(
        "--out-dir",
        type=str,
        default=None,
        help="Output directory (overrides the config and INFLAB_OUT_DIR)",
    )
    parser.add_argument(
        "--n",
        type=int,
        default=None,
        help="Grid nodes per side (1-D nodes for solve1d)",
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="store_true",
        help="Log per-sweep solver diagnostics",
    )
    return parser
