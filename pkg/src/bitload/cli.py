"""Command-line front end.

Exit codes: 0 on success, 1 on a configuration or usage error, 2 when the
requested allocation is infeasible.
"""

from __future__ import annotations

import argparse
import math
import sys
from typing import Sequence

import numpy as np

from .bitpower import Allocation, BerTargets, InfeasibleError, MoopWeights, solve_discrete
from .channel import ChannelRealization
from .config import ConfigError, load_config
from .ga import GaConfig, Op1Problem, evolve
from .harness import ExperimentConfig, default_workers, records_to_csv, run_experiment
from .oracle import SearchSpaceError, exhaustive_search
from .selftest import run_selftest

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _instance_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, default=8, help="number of subcarriers")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--avg-cnr", type=float, default=100.0, help="mean of the exponential CNR draw")
    p.add_argument("--cnr", type=str, default=None, help="comma-separated CNRs (overrides --n/--seed)")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--u-power", type=float, default=1.0)
    p.add_argument("--u-bits", type=float, default=1.0)
    p.add_argument("--ber", type=float, default=1e-4)
    p.add_argument("--b-max", type=int, default=6)
    p.add_argument("--p-cap", type=float, default=math.inf, help="total power cap in W")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bitload", description="Bit and power loading experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a Monte Carlo experiment from a config file")
    run.add_argument("config")
    run.add_argument("--seed", type=int, default=None, help="override experiment.seed")
    run.add_argument("--out", default=None, help="CSV path (default stdout)")
    run.add_argument("--workers", type=int, default=None, help="worker processes (default from BITLOAD_WORKERS or 1)")

    alloc = sub.add_parser("allocate", help="closed-form allocation of one instance")
    _instance_args(alloc)

    orc = sub.add_parser("oracle", help="exhaustive search on one instance, compared to the closed form")
    _instance_args(orc)

    ga = sub.add_parser("ga", help="genetic algorithm on one instance with a generation log")
    _instance_args(ga)
    ga.add_argument("--population", type=int, default=100)
    ga.add_argument("--generations", type=int, default=1500)
    ga.add_argument("--seed-closed-form", action="store_true")
    ga.add_argument("--log", default=None, help="write the generation log CSV here")

    st = sub.add_parser("selftest", help="quick randomized invariant checks")
    st.add_argument("--repeats", type=int, default=20)
    return parser


def _instance(args) -> tuple[ChannelRealization, MoopWeights, BerTargets]:
    if args.cnr:
        try:
            cnr = np.array([float(v) for v in args.cnr.split(",")])
        except ValueError:
            raise ConfigError(f"--cnr must be comma-separated numbers, got {args.cnr!r}") from None
    else:
        if args.n < 1:
            raise ConfigError("--n must be >= 1")
        cnr = np.random.default_rng(args.seed).exponential(args.avg_cnr, args.n)
    try:
        ch = ChannelRealization.from_cnr(cnr)
        w = MoopWeights(args.alpha, args.u_power, args.u_bits)
        t = BerTargets.uniform(args.ber, ch.n)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.b_max < 2:
        raise ConfigError("--b-max must be >= 2")
    if not args.p_cap > 0:
        raise ConfigError("--p-cap must be > 0")
    return ch, w, t


def _allocation_csv(a: Allocation, ch: ChannelRealization) -> str:
    rows = ["subcarrier,cnr,bits,power_w"]
    rows += [f"{i},{c:.12g},{int(b)},{p:.12g}" for i, (c, b, p) in enumerate(zip(ch.cnr, a.bits, a.power_w))]
    rows.append(f"# objective = {a.objective:.12g}")
    rows.append(f"# total_bits = {a.total_bits:.12g}")
    rows.append(f"# total_power_w = {a.total_power:.12g}")
    return "\n".join(rows) + "\n"


def _cmd_run(args, out) -> int:
    params = load_config(args.config)
    if args.seed is not None:
        params["experiment.seed"] = args.seed
    workers = args.workers if args.workers is not None else default_workers()
    if workers < 1:
        raise ConfigError("--workers must be >= 1")
    records = run_experiment(ExperimentConfig.from_params(params), workers=workers)
    text = records_to_csv(records, params)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        out.write(text)
    return EXIT_OK


def _cmd_allocate(args, out) -> int:
    ch, w, t = _instance(args)
    a = solve_discrete(ch, w, t, args.b_max, args.p_cap)
    out.write(_allocation_csv(a, ch))
    return EXIT_OK


def _cmd_oracle(args, out) -> int:
    ch, w, t = _instance(args)
    cons = [(np.ones(ch.n), args.p_cap)] if math.isfinite(args.p_cap) else []
    try:
        o = exhaustive_search(ch, w, t, args.b_max, cons)
    except SearchSpaceError as exc:
        raise ConfigError(str(exc)) from None
    a = solve_discrete(ch, w, t, args.b_max, args.p_cap)
    gap = (a.objective - o.objective) / abs(o.objective) if o.objective != 0 else 0.0
    out.write(_allocation_csv(o, ch))
    out.write(f"# closed_form_objective = {a.objective:.12g}\n")
    out.write(f"# objective_gap = {gap:.12g}\n")
    return EXIT_OK


def _cmd_ga(args, out) -> int:
    ch, w, t = _instance(args)
    if not math.isfinite(args.p_cap):
        raise ConfigError("ga needs a finite --p-cap")
    cfg = GaConfig(population=args.population, max_generations=args.generations, seed_closed_form=args.seed_closed_form)
    res = evolve(Op1Problem(ch, w, args.ber, args.p_cap, args.b_max), cfg, np.random.default_rng(args.seed))
    if args.log:
        with open(args.log, "w", encoding="utf-8", newline="") as fh:
            fh.write(res.log_csv())
    else:
        out.write(res.log_csv())
    best = res.best
    if not best.feasible:
        print("no feasible individual found", file=sys.stderr)
        return EXIT_INFEASIBLE
    a = Allocation(best.bits.astype(np.int64), best.power, best.objective)
    out.write(_allocation_csv(a, ch))
    out.write(f"# generations = {res.generations}\n")
    return EXIT_OK


def _cmd_selftest(args, out) -> int:
    ok = run_selftest(args.repeats, out=lambda s: out.write(s + "\n"))
    return EXIT_OK if ok else EXIT_CONFIG


COMMANDS = {
    "run": _cmd_run,
    "allocate": _cmd_allocate,
    "oracle": _cmd_oracle,
    "ga": _cmd_ga,
    "selftest": _cmd_selftest,
}


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = sys.stdout if out is None else out
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
