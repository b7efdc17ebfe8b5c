"""Command line: draw samples, check them against oracles, run the benchmarks."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..distributions import Exponential, model_from_config
from .experiment import ALGORITHMS, ExperimentConfig, run_experiment, tune_drift_constant, write_plot_csv, write_summary_csv
from .oracles import chi_square_pmf, erlang_pmf, forward_fifo_q, intervals_overlap, mean_ci

log = logging.getLogger("exactqueue")

TABLE1_LAMBDAS = (5.0, 6.0, 7.0, 8.0)
TABLE1_MU = 5.0


def load_model(path) -> dict:
    with open(path) as fh:
        cfg = json.load(fh)
    model_from_config(cfg)  # validate early
    return cfg


def mmc(lam: float, mu: float, c: int) -> dict:
    return {"arrival": {"family": "exponential", "params": [lam]},
            "service": {"family": "exponential", "params": [mu]}, "servers": c}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--algorithm", choices=ALGORITHMS, default="empty-ra")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--kappa0", type=int, default=16)
    p.add_argument("--budget", type=int, default=None, help="step budget per sample")
    p.add_argument("--mode", choices=("envelope", "records"), default="envelope")
    p.add_argument("--a", type=float, default=None, help="drift constant (default: midpoint)")
    p.add_argument("--truncate", default=None, help="interarrival cap for the dominating walk, or 'auto'")
    p.add_argument("--eps", type=float, default=None, help="regeneration threshold for --algorithm harris")


def _config(args, model: dict, out=None) -> ExperimentConfig:
    trunc = args.truncate
    if trunc not in (None, "auto"):
        trunc = float(trunc)
    return ExperimentConfig(model, args.algorithm, args.n, args.seed, args.workers, out, args.kappa0,
                            args.budget, args.mode, args.a, trunc, args.eps,
                            timing=getattr(args, "timing", False))


def cmd_sample(args) -> int:
    cfg = _config(args, load_model(args.model), args.out)
    rep = run_experiment(cfg)
    print(json.dumps(rep.summary, indent=1))
    return 0 if rep.summary["errors"] == 0 else 1


def cmd_validate(args) -> int:
    model_cfg = load_model(args.model)
    model = model_from_config(model_cfg)
    rep = run_experiment(_config(args, model_cfg))
    q = rep.column("Q0").astype(np.int64)
    if args.oracle == "erlang":
        if not (isinstance(model.arrival, Exponential) and isinstance(model.service, Exponential)):
            print("erlang oracle needs exponential interarrival and service times", file=sys.stderr)
            return 2
        pmf, tail = erlang_pmf(model.arrival_rate, model.service_rate, model.servers)
    else:
        rng = np.random.default_rng([args.seed, 7])
        ref = forward_fifo_q(model.arrival, model.service, model.servers, args.oracle_arrivals, rng)
        pmf = np.bincount(ref) / ref.size
        tail = 0.0
    stat, p = chi_square_pmf(q, pmf, tail)
    verdict = "PASS" if p >= args.alpha else "FAIL"
    print(f"chi-square {stat:.4g}  p={p:.4g}  alpha={args.alpha}  {verdict}")
    if args.plot_csv:
        write_plot_csv(q, pmf, args.plot_csv)
    return 0 if verdict == "PASS" else 1


def table1(n: int, seed: int, lambdas=TABLE1_LAMBDAS, workers: int = 1, pilot: int = 100,
           tune: bool = True) -> list:
    """Mean backward arrivals of the sandwich sampler for M/M/2 with mu = 5."""
    rows = []
    for lam in lambdas:
        cfg = ExperimentConfig(mmc(lam, TABLE1_MU, 2), "sandwich", n, seed, workers)
        if tune:
            cfg.a, costs = tune_drift_constant(cfg, pilot=pilot)
            log.info("lambda=%g pilot costs %s", lam, costs)
        row = run_experiment(cfg).table_row()
        row["a"] = cfg.a
        rows.append(row)
    return rows


def fig3(n: int, seed: int, workers: int = 1, metric: str = "backward_arrivals") -> list:
    """Paired empty-RA and sandwich runs on M/M/10 with lambda = 10, mu = 2."""
    rows = []
    for alg in ("empty-ra", "sandwich"):
        rep = run_experiment(ExperimentConfig(mmc(10.0, 2.0, 10), alg, n, seed, workers))
        row = rep.table_row(metric)
        row["mean_detection_depth"], row["detection_ci_halfwidth"] = mean_ci(rep.column("N"))
        rows.append(row)
    return rows


def cmd_bench(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.table1:
        lams = TABLE1_LAMBDAS + ((9.0,) if args.with_rho09 else ())
        rows = table1(args.n, args.seed, lams, args.workers, tune=not args.midpoint)
        write_summary_csv(rows, out / "table1.csv")
    else:
        rows = fig3(args.n, args.seed, args.workers)
        write_summary_csv(rows, out / "fig3.csv")
        a, b = rows
        faster = (b["mean_backward_arrivals"] < a["mean_backward_arrivals"]
                  and not intervals_overlap((a["mean_backward_arrivals"], a["ci_halfwidth"]),
                                            (b["mean_backward_arrivals"], b["ci_halfwidth"])))
        print(f"sandwich faster with separated 95% CIs: {faster}")
    for r in rows:
        print(json.dumps(r))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="exactqueue", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw exact stationary samples")
    p.add_argument("--model", required=True, help="JSON model file")
    p.add_argument("--out", required=True, help="JSON-lines output path")
    p.add_argument("--timing", action="store_true", help="record wall-clock runtime per sample")
    _common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("validate", help="compare number-in-system samples with an oracle")
    p.add_argument("--model", required=True)
    p.add_argument("--oracle", choices=("erlang", "brute-force"), default="erlang")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--oracle-arrivals", type=int, default=10**7)
    p.add_argument("--plot-csv", default=None)
    _common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bench", help="backward-arrival benchmarks")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--table1", action="store_true")
    g.add_argument("--fig3", action="store_true")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", default="bench_out")
    p.add_argument("--with-rho09", action="store_true", help="add the lambda = 9 row")
    p.add_argument("--midpoint", action="store_true", help="skip pilot tuning of the drift constant")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
