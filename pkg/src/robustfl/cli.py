"""Command-line entry point: ``robustfl {partition,train,bounds,oracle-check,compare}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import metrics as mio
from .bounds import RadiusGrid, bound_pair, disagreement_profile, estimate_moments
from .certify import certify
from .config import ConfigError, load_config
from .data import partition_with_noise
from .runner import load_datasets, run_experiment

log = logging.getLogger("robustfl")


def _config_overrides(args) -> list[str]:
    """Translate shortcut flags into ``section.key=value`` overrides (flags win over the file)."""
    out = list(args.set or [])
    for flag, target in (
        ("rounds", "experiment.rounds"),
        ("seed", "experiment.seed"),
        ("output_dir", "experiment.output_dir"),
        ("workers", "experiment.workers"),
        ("weighting", "federation.weighting"),
        ("strategy", "federation.strategy"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            out.append(f"{target}={value}")
    return out


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="experiment INI file")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config field (repeatable)")
    p.add_argument("--rounds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--workers", type=int)
    p.add_argument("--weighting", choices=("proportional", "robust_bound"))
    p.add_argument("--strategy", choices=("fedavg", "fedprox", "scaffold", "feddyn"))


def cmd_train(args) -> int:
    return run_experiment(args.config, _config_overrides(args))


def cmd_partition(args) -> int:
    try:
        config = load_config(args.config, _config_overrides(args))
    except (ConfigError, OSError) as exc:
        log.error("invalid config: %s", exc)
        return 2
    train, _ = load_datasets(config)
    shards, part = partition_with_noise(train, config.partition)
    rows = []
    for k, shard in enumerate(shards):
        rows.append(
            {
                "client": k,
                "n": len(shard),
                "noisy": int(part.noise_flags[part.assignments[k]].sum()),
                "class_counts": shard.class_counts().tolist(),
            }
        )
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        print("client       n  noisy  class_counts")
        for r in rows:
            print(f"{r['client']:>6} {r['n']:>7} {r['noisy']:>6}  {r['class_counts']}")
    if args.save:
        np.savez(args.save, **{f"client_{k}": idx for k, idx in enumerate(part.assignments)}, noise=part.noise_flags)
    return 0


def cmd_bounds(args) -> int:
    values = np.loadtxt(args.losses, dtype=float, ndmin=1)
    sq = values if args.squared else values**2
    try:
        m = estimate_moments(sq, args.bound_M, args.mode, args.delta)
        grid = RadiusGrid(args.epsilon_max, args.num_points)
    except ValueError as exc:
        log.error("%s", exc)
        return 2
    profile = disagreement_profile(m, grid, invalid=args.invalid)
    print(f"n={m.n} mean_sq={m.mean_sq!r} var_sq={m.var_sq!r} mode={m.mode}")
    print("radius,upper,lower,upper_valid,lower_valid")
    for r in grid.points:
        bp = bound_pair(m, r)
        print(f"{bp.radius!r},{bp.upper!r},{bp.lower!r},{int(bp.upper_valid)},{int(bp.lower_valid)}")
    print(f"eta={profile.eta!r}")
    return 0


def cmd_oracle_check(args) -> int:
    fractions = tuple(float(x) for x in args.radii.split(","))
    cases = certify(args.count, args.seed, fractions, args.max_support, args.candidates, args.tol)
    failed = [c for c in cases if not c.passed]
    for c in failed:
        print(
            f"FAIL instance={c.instance} radius={c.radius:.6g} "
            f"oracle=[{c.oracle_min:.9g}, {c.oracle_max:.9g}] bounds=[{c.lower:.9g}, {c.upper:.9g}]"
        )
    print(f"{len(cases) - len(failed)}/{len(cases)} cases inside the bounds")
    return 1 if failed else 0


def cmd_compare(args) -> int:
    try:
        report = mio.compare_bound_disagreements(args.iid_run, args.noniid_run)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2
    print(json.dumps(report, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustfl", description="Bound-disagreement weighting for federated learning.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one experiment and write its artifacts")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("partition", help="build and summarize the client partition of a config")
    _add_config_args(p)
    p.add_argument("--json", action="store_true", help="print JSON instead of a table")
    p.add_argument("--save", help="write client index arrays to this .npz file")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("bounds", help="evaluate the bounds on a file of loss samples")
    p.add_argument("losses", help="whitespace separated loss values, one sample per entry")
    p.add_argument("--squared", action="store_true", help="values are already squared losses")
    p.add_argument("--bound-M", dest="bound_M", type=float, default=1.0)
    p.add_argument("--epsilon-max", type=float, default=0.5)
    p.add_argument("--num-points", type=int, default=10)
    p.add_argument("--mode", choices=("plug_in", "high_probability"), default="plug_in")
    p.add_argument("--delta", type=float, default=0.05, help="confidence level for high_probability mode")
    p.add_argument("--invalid", choices=("drop", "trivial"), default="drop")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("oracle-check", help="certify the bounds against a brute-force search")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=100, help="number of random discrete distributions")
    p.add_argument("--radii", default="0.1,0.3,0.5,0.7,0.9", help="radii as fractions of the validity limit")
    p.add_argument("--max-support", type=int, default=8)
    p.add_argument("--candidates", type=int, default=100_000)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("compare", help="compare final bound disagreement of an IID and a Non-IID run")
    p.add_argument("iid_run")
    p.add_argument("noniid_run")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
