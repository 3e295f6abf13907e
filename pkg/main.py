import logging
import os
import sys
from traceback import format_exc

from dotenv import load_dotenv

from app.experiments import ExperimentManager
from app.internal.config import ExperimentConfig
from app.internal.constants import (
    EXIT_CHECK_FAILED,
    EXIT_DIVERGENCE,
    EXIT_OK,
    EXIT_USAGE,
    OUT_DIR_ENV,
)
from app.internal.exceptions import DivergenceError, LabError
from app.parser import build_parser
from app.writers import ArtifactWriter

logger = logging.getLogger("inflab")


def load_config(args) -> ExperimentConfig:
    if args.config is not None:
        config = ExperimentConfig.from_json(args.config, args.command)
    else:
        config = ExperimentConfig.parse({}, args.command)
    env_out_dir = os.environ.get(OUT_DIR_ENV)
    if env_out_dir:
        config = config.with_overrides(out_dir=env_out_dir)
    return config.with_overrides(
        problem=args.problem,
        alpha=args.alpha,
        p=args.p,
        kappa=args.kappa,
        seed=args.seed,
        out_dir=args.out_dir,
        n=args.n,
    )


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    load_dotenv()

    try:
        config = load_config(args)
    except LabError as e:
        logger.error("Invalid configuration: %s", e)
        return EXIT_USAGE

    writer = None
    checks = []
    try:
        writer = ArtifactWriter(config.out_dir)
        checks = ExperimentManager(config, writer).run()
        failed = [check.name for check in checks if not check.passed]
        if failed:
            logger.error("Failed checks: %s", ", ".join(failed))
            status = EXIT_CHECK_FAILED
        else:
            logger.info("All %d checks passed", len(checks))
            status = EXIT_OK
    except DivergenceError as e:
        logger.error("Solver diverged: %s (%s)", e, e.diagnostics)
        status = EXIT_DIVERGENCE
    except (LabError, OSError) as e:
        logger.error("%s: %s", type(e).__name__, e)
        logger.debug(format_exc())
        status = EXIT_USAGE

    if writer is not None:
        writer.manifest(config.to_record(), checks, status)
    return status


if __name__ == "__main__":
    sys.exit(main())
