"""Command-line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical or infeasibility error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .core import (
    CapabilityError,
    ConfigError,
    DataError,
    DomainError,
    EstimatorConfig,
    InfeasibleAllocationError,
    StratifiedDataset,
    StratumData,
)
from .estimators import classical_mean_ci, stratppi_ci
from .io import concat_pools, load_csv, open_output, write_pool_csv, write_records
from .sampling import DEFAULT_N_GRID, SCENARIOS, SyntheticScenario, make_heterogeneous_binary_pool, \
    quantile_stratify, scenario
from .simulation import method_config, run_real_data_sweep, run_simulation

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
ALLOC_FLAGS = {"prop": "stratppi_prop", "opt": "stratppi_opt", "heur": "stratppi_heur"}

log = logging.getLogger("stratppi")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _lambda_policy(text: str):
    if text == "tuned":
        return None
    if text.startswith("fixed="):
        values = _floats(text[len("fixed="):])
        return values[0] if len(values) == 1 else values
    raise argparse.ArgumentTypeError(f"--lambda must be 'tuned' or 'fixed=<v>[,<v>...]', got {text!r}")


def _configs(args, defaults):
    names = args.method or list(defaults)
    out = []
    for name in names:
        if name == "stratppi":
            name = ALLOC_FLAGS[args.alloc]
        cfg = method_config(name, args.alpha, lambdas=args.lambda_policy)
        out.append(cfg)
    return out


def _add_common(p, alpha_default):
    p.add_argument("--method", action="append",
                   help="classical, ppi_pp, stratppi (uses --alloc), stratppi_prop, stratppi_opt, "
                        "stratppi_heur; repeatable")
    p.add_argument("--alloc", choices=sorted(ALLOC_FLAGS), default="prop",
                   help="allocation for a bare 'stratppi' method")
    p.add_argument("--lambda", dest="lambda_policy", type=_lambda_policy, default=None,
                   metavar="{tuned|fixed=<v>}", help="weighting parameter policy (default tuned)")
    p.add_argument("--alpha", type=float, default=alpha_default)
    p.add_argument("--out", default="-", help="output path ('-' for stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stratppi", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="coverage/width study on a synthetic scenario")
    sim.add_argument("--scenario", required=True, choices=sorted(SCENARIOS) + ["custom"])
    sim.add_argument("--weights", type=_floats, help="custom scenario stratum weights")
    sim.add_argument("--mu", type=_floats, help="custom scenario autorater biases")
    sim.add_argument("--sigma", type=_floats, help="custom scenario autorater noise levels")
    sim.add_argument("--trials", type=int, default=1000)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--n", type=int, action="append", help="labeled budget; repeatable")
    sim.add_argument("--N", type=int, default=10_000, help="unlabeled budget")
    sim.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    _add_common(sim, 0.1)

    est = sub.add_parser("estimate", help="one interval from labeled (+ unlabeled) CSV data")
    est.add_argument("--labeled", required=True)
    est.add_argument("--unlabeled")
    est.add_argument("--K", type=int, default=10)
    est.add_argument("--binary", action="store_true")
    _add_common(est, 0.05)

    sw = sub.add_parser("sweep", help="resampling study on a fully labeled pool")
    sw.add_argument("--pool", required=True)
    sw.add_argument("--K", type=int, default=10)
    sw.add_argument("--binary", action="store_true")
    sw.add_argument("--trials", type=int, default=1000)
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--n", type=int, action="append")
    sw.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    _add_common(sw, 0.05)

    fx = sub.add_parser("make-fixture", help="write the heterogeneous binary test pool")
    fx.add_argument("--size", type=int, default=20_000)
    fx.add_argument("--seed", type=int, default=0)
    fx.add_argument("--out", required=True)
    return parser


def cmd_simulate(args) -> int:
    if args.scenario == "custom":
        if not (args.weights and args.mu and args.sigma):
            raise ConfigError("custom scenario needs --weights, --mu and --sigma")
        sc = SyntheticScenario(weights=args.weights, mu=args.mu, sigma=args.sigma, N=args.N,
                               alpha=args.alpha, trials=args.trials, seed=args.seed)
    else:
        for flag in ("weights", "mu", "sigma"):
            if getattr(args, flag) is not None:
                raise ConfigError(f"--{flag} is only valid with --scenario custom")
        sc = scenario(args.scenario, N=args.N, alpha=args.alpha, trials=args.trials, seed=args.seed)
    configs = _configs(args, ("classical", "ppi_pp", "stratppi_prop", "stratppi_opt"))
    reports = run_simulation(sc, configs, n_grid=args.n or DEFAULT_N_GRID)
    with open_output(args.out) as out:
        write_records((r.to_record() for r in reports), out, args.format)
    return EXIT_OK


def cmd_sweep(args) -> int:
    pool = load_csv(args.pool, binary=args.binary)
    if np.any(~pool.labeled_mask):
        log.info("%d unlabeled rows join every unlabeled sample", int((~pool.labeled_mask).sum()))
    configs = _configs(args, ("classical", "ppi_pp", "stratppi_prop", "stratppi_heur"))
    reports = run_real_data_sweep(pool, K=args.K, methods=configs, n_grid=args.n or DEFAULT_N_GRID,
                                  trials=args.trials, alpha=args.alpha, seed=args.seed)
    with open_output(args.out) as out:
        write_records((r.to_record() for r in reports), out, args.format)
    return EXIT_OK


def estimate_from_pool(pool, K: int, config: EstimatorConfig):
    """Interval for one labeled/unlabeled pool, stratified by column or quantiles.

    Stratum weights are the prediction masses over all rows, labeled and
    unlabeled, which assumes the labeled rows are a random subset.
    """
    lab = pool.labeled_mask
    if config.method == "classical":
        return classical_mean_ci(pool.label[lab], config.alpha), 1
    if config.method == "ppi_pp":
        data = StratifiedDataset.single(pool.label[lab], pool.prediction[lab],
                                        pool.prediction[~lab], binary=pool.binary)
        return stratppi_ci(data, config), 1
    if pool.stratum is not None:
        _, idx = np.unique(pool.stratum, return_inverse=True)
        weights = np.bincount(idx) / idx.size
    else:
        strat = quantile_stratify(pool.prediction, K)
        idx, weights = strat.assign(pool.prediction), np.asarray(strat.weights)
    strata = []
    for k in range(weights.size):
        m = idx == k
        strata.append(StratumData(pool.label[m & lab], pool.prediction[m & lab],
                                  pool.prediction[m & ~lab], weights[k]))
    data = StratifiedDataset(tuple(strata), binary=pool.binary)
    return stratppi_ci(data, config), data.K


def cmd_estimate(args) -> int:
    pool = load_csv(args.labeled, binary=args.binary)
    if args.unlabeled:
        extra = load_csv(args.unlabeled, binary=args.binary)
        extra = type(extra)(label=np.full(len(extra), np.nan), prediction=extra.prediction,
                            confidence=extra.confidence, stratum=extra.stratum, binary=args.binary)
        pool = concat_pools(pool, extra)
    names = args.method or ["stratppi"]
    if len(names) != 1:
        raise ConfigError("estimate takes exactly one --method")
    name = ALLOC_FLAGS[args.alloc] if names[0] == "stratppi" else names[0]
    config = method_config(name, args.alpha, lambdas=args.lambda_policy)
    if config.allocation != "proportional":
        log.info("allocation %s only matters when sampling labels; ignored here", config.allocation)
    result, K = estimate_from_pool(pool, args.K, config)
    record = {"method": config.name, "K": K, "n": int(pool.labeled_mask.sum()),
              "N": int((~pool.labeled_mask).sum()), **result.to_dict()}
    with open_output(args.out) as out:
        out.write(json.dumps(record) + "\n")
    return EXIT_OK


def cmd_make_fixture(args) -> int:
    fixture = make_heterogeneous_binary_pool(size=args.size, seed=args.seed)
    write_pool_csv(fixture.pool, args.out)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "estimate": cmd_estimate,
            "make-fixture": cmd_make_fixture}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"stratppi: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"stratppi: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InfeasibleAllocationError, DomainError, CapabilityError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"stratppi: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
