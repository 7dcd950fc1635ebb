"""Command line entry of the transition density experiments.

    python cco_transitions.py <subcommand> --config <path> [overrides]

Exit codes: 0 on success, 2 for configuration errors, 1 for any other failure
of a stage. The output directory can be redirected with CCO_OUTPUT_DIR.
"""
import sys
import argparse

from ruamel import yaml

from base import TransitionError
from utils import get_logger
from setting_loaders import ConfigError


logger = get_logger("CCO Transitions")


def _pairs(values):
    values = list(values)
    if len(values) % 2 != 0:
        raise ConfigError(f"--box needs lower and upper bounds for every coordinate, got {len(values)} values")
    return [values[idx:idx + 2] for idx in range(0, len(values), 2)]


# Argument dest -> (settings key, conversion of the parsed value)
OVERRIDES = {
    "tau": ("density.tau", None),
    "epsilon": ("density.epsilon", None),
    "hbar": ("density.hbar", None),
    "samples": ("density.samples", None),
    "E_range": ("density.e_range", list),
    "Ep_range": ("density.ep_range", list),
    "bins": ("density.bins", None),
    "seed": ("density.random_seed", None),
    "workers": ("density.workers", None),
    "basis": ("oracle.basis", None),
    "steps": ("oracle.steps", None),
    "box": ("seed.box", _pairs),
    "grid": ("seed.grid", None),
    "seed_tol": ("seed.tol", None),
    "seed_index": ("cco.seed_index", None),
    "path": ("cco.path", list),
    "t_max": ("cco.t_max", None),
    "tau_max": ("cco.tau_max", None),
    "step": ("cco.step", None),
    "cco_tol": ("cco.tol", None),
    "output": ("output.directory", None),
}


def _add_common(parser):
    parser.add_argument("-c", "--config", required=False, help="Path to the YAML configuration")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override any setting, the value is parsed as YAML")
    parser.add_argument("-o", "--output", required=False, help="Folder that will contain the artifacts")


def _add_grid(parser):
    parser.add_argument("--tau", type=float, help="Driving time")
    parser.add_argument("--epsilon", type=float, help="Lorentzian half width")
    parser.add_argument("--hbar", type=float, help="Semiclassical parameter")
    parser.add_argument("--E-range", dest="E_range", type=float, nargs=2, help="Initial energy range")
    parser.add_argument("--Ep-range", dest="Ep_range", type=float, nargs=2, help="Final energy range")
    parser.add_argument("--bins", type=int, help="Cells along each energy")


def build_parser():
    parser = argparse.ArgumentParser(prog="cco-transitions", description=__doc__.splitlines()[0])
    subparsers = parser.add_subparsers(dest="subcommand", required=True)

    sub = subparsers.add_parser("seed", help="Find the seeds of the compound orbit families")
    _add_common(sub)
    sub.add_argument("--box", type=float, nargs="+", metavar="BOUND",
                     help="Lower and upper bound of every coordinate, ordered (p.., q..)")
    sub.add_argument("--grid", type=int, help="Starting points along every axis of the box")
    sub.add_argument("--tol", dest="seed_tol", type=float, help="Newton tolerance")

    sub = subparsers.add_parser("cco", help="Grow the compound orbit families")
    _add_common(sub)
    sub.add_argument("--seed-index", dest="seed_index", type=int, help="Seed to grow the families from")
    sub.add_argument("--path", type=float, nargs=3, metavar=("T", "T_PRIME", "TAU"),
                     help="Parameter point the family is continued to")
    sub.add_argument("--t-max", dest="t_max", type=float, help="Largest inner time of the thin t-family")
    sub.add_argument("--tau-max", dest="tau_max", type=float, help="Largest driving time of the thin tau-family")
    sub.add_argument("--step", type=float, help="Initial continuation step")
    sub.add_argument("--tol", dest="cco_tol", type=float, help="Closure tolerance")

    sub = subparsers.add_parser("density-classical", help="Classical transition density")
    _add_common(sub)
    _add_grid(sub)
    sub.add_argument("--samples", type=int, help="Monte Carlo samples")
    sub.add_argument("--seed", type=int, help="Random seed")
    sub.add_argument("--workers", type=int, help="Worker processes")
    sub.add_argument("--section", action="store_true", help="Also evaluate the section formula (one dof)")

    sub = subparsers.add_parser("density-sc", help="Oscillatory semiclassical terms")
    _add_common(sub)
    _add_grid(sub)

    sub = subparsers.add_parser("density-total", help="Classical background plus oscillatory terms")
    _add_common(sub)
    _add_grid(sub)
    sub.add_argument("--samples", type=int, help="Monte Carlo samples")
    sub.add_argument("--seed", type=int, help="Random seed")
    sub.add_argument("--workers", type=int, help="Worker processes")
    sub.add_argument("--calibrate", action="store_true", help="Calibrate the phase offsets on the quantum oracle")

    sub = subparsers.add_parser("oracle", help="Quantum reference density")
    _add_common(sub)
    _add_grid(sub)
    sub.add_argument("--basis", type=int, help="Oscillator basis size")
    sub.add_argument("--steps", type=int, help="Propagation steps")

    sub = subparsers.add_parser("compare", help="Difference of two density matrices")
    _add_common(sub)
    sub.add_argument("first", help="First density CSV")
    sub.add_argument("second", help="Second density CSV")
    return parser


def apply_overrides(settings, args):
    for dest, (key, convert) in OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is not None:
            settings.override(key, value if convert is None else convert(value))
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"Override '{item}' must look like SECTION.KEY=VALUE")
        key, text = item.split("=", 1)
        settings.override(key.strip(), yaml.safe_load(text))
    return settings


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        from experiment.app import TransitionApp
        app = TransitionApp(args.config)
        settings = apply_overrides(app.settings, args)
        kwargs = {}
        if args.subcommand == "density-classical":
            kwargs["section"] = args.section
        elif args.subcommand == "density-total":
            kwargs["calibrate"] = args.calibrate
        elif args.subcommand == "compare":
            kwargs.update(first=args.first, second=args.second)
        app.run(args.subcommand, settings=settings, **kwargs)
    except ConfigError as err:
        logger.error("Configuration error: %s", err)
        return 2
    except TransitionError as err:
        logger.error("Stage '%s' failed: %s", err.stage or args.subcommand, err)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
