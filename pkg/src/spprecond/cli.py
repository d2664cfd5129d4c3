"""Command line entry point: ``spprecond {solve,sweep,check}``."""

import argparse
import logging
import sys

from .errors import ConfigError
from .harness import RunConfig, load_config, run_check, run_solve, run_sweep, write_table


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", help="results table (CSV); stdout when omitted")
    common.add_argument("--dump-fields", metavar="DIR", nargs="?", const="fields",
                        help="write solution/medium dumps into DIR (default ./fields)")
    common.add_argument("--seed", type=int, help="media seed (unsigned 64-bit)")
    common.add_argument("--tol", type=float)
    common.add_argument("--max-iter", type=int)
    common.add_argument("--equation", choices=("helmholtz", "schrodinger"))
    common.add_argument("--kind", help="media kind, e.g. helmholtz_gaussian")
    common.add_argument("-d", type=int, dest="d")
    common.add_argument("-n", type=int, dest="n")
    common.add_argument("-b", type=int, dest="b")
    common.add_argument("--omega-over-2pi", type=float)
    common.add_argument("--energy", type=float, help="Schrodinger energy E")
    common.add_argument("--sizes", help="sweep sizes as n:b pairs, e.g. 48:3,96:6")
    common.add_argument("--parallel", action="store_true", help="run sweep rows in parallel")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="spprecond", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve one configuration")
    sub.add_parser("sweep", parents=[common], help="solve a list of sizes")
    sub.add_parser("check", parents=[common], help="run the dense-oracle checks")
    return p


def resolve_config(args):
    data = {}
    if args.config:
        data = load_config(args.config).to_dict()
    media = dict(data.get("media") or {})
    if args.equation:
        data["equation"] = args.equation
        if not args.kind and "kind" not in media:
            media["kind"] = "helmholtz_gaussian" if args.equation == "helmholtz" else "schrodinger_random"
    for key, val in (("kind", args.kind), ("seed", args.seed),
                     ("omega_over_2pi", args.omega_over_2pi), ("E", args.energy)):
        if val is not None:
            media[key] = val
    if args.seed is not None and not 0 <= args.seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    for key in ("d", "n", "b", "tol", "max_iter"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    if args.sizes:
        try:
            data["sizes"] = [[int(x) for x in pair.split(":")] for pair in args.sizes.split(",") if pair]
        except ValueError as exc:
            raise ConfigError(f"bad --sizes {args.sizes!r}") from exc
    if args.parallel:
        data["parallel"] = True
    if args.out:
        data["table"] = args.out
    if args.dump_fields:
        data["fields"] = args.dump_fields
    data["mode"] = {"solve": "solve", "sweep": "bench-sweep", "check": "check"}[args.command]
    if "equation" not in data and media.get("kind", "").startswith("schrodinger"):
        data["equation"] = "schrodinger"
    data["media"] = media
    return RunConfig.from_dict(data)


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "check":
        try:
            results = run_check(config)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        failed = [r.name for r in results if not r.passed]
        print(f"{len(results) - len(failed)}/{len(results)} checks passed")
        return 1 if failed else 0

    try:
        if args.command == "solve":
            rows = [run_solve(config, dump_dir=config.fields)]
        else:
            if config.sizes is None:
                config.sizes = []
            rows = run_sweep(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    write_table(config.table if config.table else sys.stdout, rows, config)
    if args.command == "solve" and not rows[0].converged:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
