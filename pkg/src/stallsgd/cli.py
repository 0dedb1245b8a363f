"""``stallsgd`` command line: ``stall``, ``restart``, ``montecarlo``, ``bounds``, ``neutrino``, ``selfcheck``.

Options can come from a ``key=value`` file given with ``--config``; flags on
the command line take precedence. Failures print one line of the form
``error: kind=<ExceptionName> command=<cmd> message="..."`` to stderr and exit
with a nonzero status.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import experiments
from .data import ChecksumMismatchError, DataFormatError
from .selfcheck import format_report, run_selfcheck

COMMANDS = ("stall", "restart", "montecarlo", "bounds", "neutrino", "selfcheck")

EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_DATA = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _csv_ints(text):
    return tuple(int(float(v)) for v in text.split(",") if v.strip())


def _int(text):
    return int(float(text)) if "e" in text.lower() else int(text)


def _add_common(p):
    p.add_argument("--config", help="key=value file; flags override its entries")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")


def _add_problem(p):
    p.add_argument("--d", type=int)
    p.add_argument("--noise-halfwidth", type=float)
    p.add_argument("--beta-norm", type=float)
    p.add_argument("--exponents", type=_csv_floats, help="comma separated, e.g. 1.0,0.7,0.5")
    p.add_argument("--delta", type=float)


def _add_restart(p):
    p.add_argument("--first-trigger", type=int)
    p.add_argument("--growth-factor", type=float)


def _add_simulation(p):
    p.add_argument("--observations", type=_int)
    p.add_argument("--runs", type=int)
    p.add_argument("--workers", type=int)


def build_parser():
    parser = _Parser(prog="stallsgd", description="SGD stalling and restart experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, helptext in (("stall", "standard SGD trajectories on a shared stream"),
                           ("restart", "restarted SGD trajectories on the same stream")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        _add_problem(p)
        _add_simulation(p)
        _add_restart(p)
        p.add_argument("--checkpoint-ratio", type=float)
        p.add_argument("--no-trajectories", dest="save_trajectories", action="store_false", default=None)

    p = sub.add_parser("montecarlo", help="error statistics over independent runs, with OLS")
    _add_common(p)
    _add_problem(p)
    _add_simulation(p)
    _add_restart(p)

    p = sub.add_parser("bounds", help="probability lower-bound table")
    _add_common(p)
    _add_problem(p)
    p.add_argument("--bound-observations", type=_csv_ints, help="comma separated observation counts")

    p = sub.add_parser("neutrino", help="block network trained by SGD, AdaGrad, restarts and BFGS")
    _add_common(p)
    _add_restart(p)
    p.add_argument("--dataset", help="path to MiniBooNE_PID.txt")
    p.add_argument("--synthetic", action="store_true", default=None, help="use a synthetic stand-in if no dataset")
    p.add_argument("--record-every", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--sgd-exponent", type=float)
    p.add_argument("--bfgs-iters", type=int)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--zscore", action="store_true", default=None)
    p.add_argument("--loss", choices=("squared", "cross_entropy"))
    p.add_argument("--no-trajectories", dest="save_trajectories", action="store_false", default=None)

    p = sub.add_parser("selfcheck", help="fast invariant suite")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _overrides(args):
    skip = {"command", "config", "verbose"}
    return {k: v for k, v in vars(args).items() if k not in skip and v is not None}


RUNNERS = {
    "stall": experiments.run_stall,
    "restart": experiments.run_restart,
    "montecarlo": experiments.run_montecarlo,
    "bounds": experiments.run_bounds,
    "neutrino": experiments.run_neutrino,
}


def _summary(command, result):
    lines = [f"wrote {path}" for path in result.get("files", [])]
    if command in ("stall", "restart"):
        lines += [f"final error p={p:g}: {e:.6g}" for p, e in result["final_error"].items()]
    elif command == "montecarlo":
        lines += [f"{name}: mean {s.mean:.6g} median {s.median:.6g}" for name, s in result["stats"].items()]
    elif command == "neutrino":
        if result["synthetic"]:
            lines.append("data source: synthetic stand-in (not MiniBooNE)")
        lines += [f"{name}: total gradient norm {g:.6g}" for name, g in result["final_gradient_norm"].items()]
    return "\n".join(lines)


def _error_line(kind, command, message):
    message = str(message).replace('"', "'").replace("\n", " ")
    return f'error: kind={kind} command={command or "-"} message="{message}"'


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    command = next((a for a in argv if a in COMMANDS), None)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        if args.command == "selfcheck":
            results = run_selfcheck(args.seed)
            sys.stdout.write(format_report(results, args.seed))
            return 0 if all(r.passed for r in results) else EXIT_FAILURE
        file_values = experiments.read_config_file(args.config) if args.config else {}
        config = experiments.build_config(args.command, file_values, _overrides(args))
        result = RUNNERS[args.command](config)
        print(_summary(args.command, result))
        return 0
    except (UsageError, experiments.ConfigError) as exc:
        print(_error_line(type(exc).__name__, command, exc), file=sys.stderr)
        return EXIT_USAGE
    except (experiments.DatasetMissingError, DataFormatError, ChecksumMismatchError) as exc:
        print(_error_line(type(exc).__name__, command, exc), file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError, ArithmeticError) as exc:
        print(_error_line(type(exc).__name__, command, exc), file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
