import logging
import logging.config
import argparse
import sys
from pathlib import Path
from library import experiment
from library.selftest import run_selftest
from library.utils.errors import GridTooCoarseError, NumericError, SpecError

log_config = Path(f"{__file__}/../../logs/log.ini").resolve().absolute().as_posix()
logger = logging.getLogger("app")

EXIT_OK = 0
EXIT_SPEC = 1
EXIT_PROPERTY = 2
EXIT_COARSE = 3


def run_command(args: argparse.Namespace) -> int:
    spec = experiment.load_experiment_spec(args.spec)
    logger.info(f"Running experiment {spec.name} with pipelines {spec.pipelines}")
    result = experiment.run(spec, timing=args.timing)
    print(result.csv_path)
    return EXIT_OK


def report_command(args: argparse.Namespace) -> int:
    print(experiment.report(args.csv, plot=args.plot))
    return EXIT_OK


def selftest_command(args: argparse.Namespace) -> int:
    result = run_selftest(seed=args.seed)
    for failure in result.failures:
        print(f"FAILED {failure}")
    print(f"{result.csv_path} sha256={result.digest}")
    return EXIT_PROPERTY if result.failures else EXIT_OK


def main(args: argparse.Namespace) -> int:
    """
    Runs the chosen subcommand and maps failures to exit codes
    :returns: 0 ok, 1 malformed input, 2 failed property or non-finite kernel values, 3 grid too coarse
    """
    try:
        return args.command(args)
    except SpecError as e:
        logger.error(f"Exception/Error {e.__class__.__name__} occured during {args.name}, "
                     f"check the input file | message: {str(e)}")
        return EXIT_SPEC
    except GridTooCoarseError as e:
        logger.error(f"Exception/Error {e.__class__.__name__} occured during {args.name}, "
                     f"refine the grid or raise epsilon | message: {str(e)}")
        return EXIT_COARSE
    except NumericError as e:
        logger.error(f"Exception/Error {e.__class__.__name__} occured during {args.name}, "
                     f"the kernel overflowed | message: {str(e)}")
        return EXIT_PROPERTY
    except AssertionError as e:
        logger.error(f"Exception/Error {e.__class__.__name__} occured during {args.name} | message: {str(e)}")
        return EXIT_PROPERTY
    except ValueError as e:
        logger.error(f"Exception/Error {e.__class__.__name__} occured during {args.name} | message: {str(e)}")
        return EXIT_SPEC


if __name__ == "__main__":
    # Parse arguments
    parser = argparse.ArgumentParser(description="Fragment algebra and narrow operator toolkit")
    subparsers = parser.add_subparsers(required=True)

    run_parser = subparsers.add_parser("run", help="Run the pipelines of an experiment spec")
    run_parser.add_argument("spec", help="Experiment spec JSON file")
    run_parser.add_argument("-t", "--timing", help="Record runtimes, reruns then differ in runtime_ms",
                            action="store_true")
    run_parser.set_defaults(command=run_command, name="run")

    report_parser = subparsers.add_parser("report", help="Summarize a results CSV")
    report_parser.add_argument("csv", help="Results CSV written by run")
    report_parser.add_argument("-p", "--plot", help="Also save a defect plot to this PNG file", default=None)
    report_parser.set_defaults(command=report_command, name="report")

    selftest_parser = subparsers.add_parser("selftest", help="Run the invariant suite")
    selftest_parser.add_argument("-s", "--seed", help="Master seed, defaults to DEFAULT_SEED", type=int, default=None)
    selftest_parser.set_defaults(command=selftest_command, name="selftest")

    args = parser.parse_args()

    # Set up logging
    Path("logs").mkdir(exist_ok=True)
    logging.config.fileConfig(log_config, disable_existing_loggers=False)

    sys.exit(main(args))
