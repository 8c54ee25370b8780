"""Command-line interface.

    activeu estimate --data FILE.csv --kernel gini --budget 200 --policy active --seed 1
    activeu simulate --dgp appendix-c1 --kernel gini --budgets 100,200,400 --seed 1
    activeu uestimate --dgp linear-ranking --budget 300 --pilot-budget 100 --seed 1
    activeu bench-kernels --kernel gini --sizes 100,1000,10000 --seed 1

Exit codes: 0 success, 2 argument error, 3 data/parse error, 4 estimation error.
"""

from __future__ import annotations

import argparse
import math
import sys
import time

import numpy as np

from . import harness, uerm
from .dgp import DGP_KINDS, DGPSpec, generate_dgp, kernel_values
from .errors import ActiveUError, ArgumentError, ParseError
from .estimators import ActiveSample
from .inference import estimate_with_ci
from .io import read_csv, write_json
from .kernels import KERNEL_NAMES, builtin_kernel, naive_tuple_sum, tuple_sum
from .learners import LEARNERS, learner_factory
from .policy import DEFAULT_TAU, learn_uncertainty, policy_from_scores, scores_from_model

ESTIMATE_POLICIES = ("classical", "uniform", "active", "plugin-act-y")


def _int_list(text):
    try:
        out = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _str_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


class _GivenPredictions:
    """Stands in for mu when predictions come from the data file."""

    def predict(self, X):
        raise ArgumentError("predictions are taken from the yhat column")


def _pilot_count(frac, n_b, r):
    return max(math.ceil(frac * n_b), 2 * (r - 1) + 4)


def run_estimate(args) -> dict:
    data = read_csv(args.data)
    if data.y is None:
        raise ParseError("labels required", str(args.data))
    kernel = builtin_kernel(args.kernel)
    n = data.n
    if not 0 < args.budget <= n:
        raise ArgumentError(f"budget {args.budget} outside (0, n={n}]")
    if not 0 <= args.tau <= 1 or not 0 < args.alpha < 1:
        raise ArgumentError("tau must lie in [0, 1] and alpha in (0, 1)")
    if not 0 < args.pilot_frac <= 1:
        raise ArgumentError("pilot-frac must lie in (0, 1]")
    rng = np.random.default_rng(args.seed)
    m = _pilot_count(args.pilot_frac, args.budget, kernel.degree)
    if m >= args.budget:
        raise ArgumentError(f"budget {args.budget} leaves nothing after a pilot of {m}")
    pilot = np.sort(rng.choice(n, m, replace=False))
    rest = np.setdiff1d(np.arange(n), pilot)
    vf = lambda X, y: kernel_values(kernel, X, y)

    # the pilot is labeled up front (pi = 1); the remaining budget is spread
    # over the other units by the chosen rule
    vfac = learner_factory(args.v_learner)
    mu_fac = learner_factory(args.mu_learner)
    if data.yhat is not None:
        yhat = data.yhat
        mu = _GivenPredictions()
        pilot_pred = yhat[pilot]
    else:
        mu, pilot_pred = None, None
    fit = learn_uncertainty(data.X[pilot], data.y[pilot], kernel,
                            vfac if mu is not None else mu_fac, mu=mu, seed=args.seed,
                            pilot_pred=pilot_pred, value_fn=vf)
    if data.yhat is None:
        yhat = fit.mu.predict(data.X)
        if args.v_learner != args.mu_learner:
            fit = learn_uncertainty(data.X[pilot], data.y[pilot], kernel, vfac, mu=fit.mu,
                                    seed=args.seed, value_fn=vf)
    rest_budget = args.budget - m
    if args.policy in ("classical", "uniform"):
        rest_probs = np.full(rest.size, rest_budget / rest.size)
    elif args.policy == "active":
        rest_probs = policy_from_scores(scores_from_model(fit.model, data.X[rest]),
                                        rest_budget, args.tau).probs
    else:
        res = learn_uncertainty(data.X[pilot], data.y[pilot], kernel, vfac,
                                mu=_GivenPredictions(), seed=args.seed,
                                pilot_pred=yhat[pilot], target="residual", value_fn=vf)
        rest_probs = policy_from_scores(scores_from_model(res.model, data.X[rest]),
                                        rest_budget, args.tau, kind="plugin-act-y").probs
    probs = np.ones(n)
    probs[rest] = rest_probs
    uniforms = rng.random(n)
    values = vf(data.X, data.y)
    sample = ActiveSample.draw(values, probs, uniforms, predictions=vf(data.X, yhat),
                               budget=args.budget)
    if args.policy == "classical":
        kind = "classical"
    else:
        kind = "aipw-normalized" if args.normalized else "aipw"
    rep = estimate_with_ci(sample, kernel, kind, fit.h1, fit.h1_mu, alpha=args.alpha,
                           policy_kind=args.policy)
    out = {"config": {"command": "estimate", "data": str(args.data), "kernel": args.kernel,
                      "budget": args.budget, "policy": args.policy, "tau": args.tau,
                      "alpha": args.alpha, "seed": args.seed, "pilot_frac": args.pilot_frac,
                      "normalized": args.normalized, "mu_learner": args.mu_learner,
                      "v_learner": args.v_learner},
           "n": n, "pilot_size": m,
           "predictions": "yhat column" if data.yhat is not None else "learned on pilot",
           "policy_summary": {"min_prob": float(probs.min()), "max_prob": float(probs.max()),
                              "expected_labels": float(probs.sum())}}
    out.update(rep.as_dict())
    return out


def run_simulate(args) -> dict:
    spec = DGPSpec(kind=args.dgp, p=args.p, n=args.n, noise_sigma=args.noise_sigma,
                   seed=args.seed)
    cfg = harness.EstimationConfig(
        kernel=args.kernel, dgp=spec, budgets=tuple(args.budgets), trials=args.trials,
        methods=tuple(args.methods), tau=args.tau, alpha=args.alpha, seed=args.seed,
        protocol=args.protocol, mu_learner=args.mu_learner, v_learner=args.v_learner,
        mu_train_size=args.mu_train_size, pilot_size=args.pilot_size,
        pilot_frac=args.pilot_frac, workers=args.workers)
    records, setup = harness.run_estimation_trials(cfg)
    return harness.simulation_report(cfg, records, setup, include_records=args.records)


def run_uestimate(args) -> dict:
    data = None
    if args.data is not None:
        data = read_csv(args.data)
        if data.y is None:
            raise ParseError("labels required", str(args.data))
        spec = DGPSpec(kind="linear-ranking", p=data.p, n=data.n, seed=args.seed)
    else:
        spec = DGPSpec(kind=args.dgp, p=args.p, n=args.n, noise_sigma=args.noise_sigma,
                       seed=args.seed)
    cfg = harness.UEstimationConfig(
        dgp=spec, budgets=tuple(args.budget), pilot_budget=args.pilot_budget,
        trials=args.trials, methods=tuple(args.methods), tau=args.tau, seed=args.seed,
        mu_learner=args.mu_learner, count_pilot=args.count_pilot, sandwich=args.sandwich,
        workers=args.workers)
    records, setup = harness.run_uestimation_trials(cfg, data=data)
    out = harness.uestimation_report(cfg, records, setup, include_records=args.records)
    if args.data is not None:
        out["config"]["data"] = str(args.data)
    return out


def run_bench(args) -> dict:
    kernel = builtin_kernel(args.kernel)
    if args.kernel not in ("gini", "kendall"):
        raise ArgumentError("bench-kernels supports gini and kendall")
    rng = np.random.default_rng(args.seed)
    rows = []
    for n in args.sizes:
        if n < 2:
            raise ArgumentError("sizes must be >= 2")
        values = rng.standard_normal((n, 2)) if kernel.value_dim == 2 else rng.standard_normal(n)
        t0 = time.perf_counter()
        fast = tuple_sum(values, kernel)
        t_fast = time.perf_counter() - t0
        row = {"n": n, "fast_sum": fast, "fast_seconds": t_fast}
        if n <= args.naive_max:
            t0 = time.perf_counter()
            naive = naive_tuple_sum(values, kernel)
            t_naive = time.perf_counter() - t0
            rel = abs(fast - naive) / max(abs(naive), 1e-300)
            row.update(naive_sum=naive, naive_seconds=t_naive, rel_diff=rel,
                       equal=bool(rel <= 1e-9), speedup=t_naive / max(t_fast, 1e-12))
        rows.append(row)
    return {"config": {"command": "bench-kernels", "kernel": args.kernel,
                       "sizes": list(args.sizes), "seed": args.seed,
                       "naive_max": args.naive_max},
            "results": rows}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="activeu",
                                description="Active inference for U-statistics.")
    sub = p.add_subparsers(dest="command", required=True)
    learners = sorted(LEARNERS)

    e = sub.add_parser("estimate", help="active estimate and CI on a CSV dataset")
    e.add_argument("--data", required=True)
    e.add_argument("--kernel", required=True, choices=KERNEL_NAMES)
    e.add_argument("--budget", required=True, type=int)
    e.add_argument("--policy", default="active", choices=ESTIMATE_POLICIES)
    e.add_argument("--tau", type=float, default=DEFAULT_TAU)
    e.add_argument("--alpha", type=float, default=0.1)
    e.add_argument("--seed", type=int, required=True)
    e.add_argument("--pilot-frac", type=float, default=0.25)
    e.add_argument("--normalized", type=_bool, default=True)
    e.add_argument("--mu-learner", default="knn", choices=learners)
    e.add_argument("--v-learner", default="knn", choices=learners)
    e.add_argument("--out", default="-")
    e.set_defaults(run=run_estimate)

    s = sub.add_parser("simulate", help="Monte Carlo study on a synthetic DGP")
    s.add_argument("--dgp", default="appendix-c1", choices=DGP_KINDS)
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--p", type=int, default=4)
    s.add_argument("--noise-sigma", type=float, default=None)
    s.add_argument("--kernel", required=True, choices=KERNEL_NAMES)
    s.add_argument("--budgets", type=_int_list, default=[200])
    s.add_argument("--trials", type=int, default=3000)
    s.add_argument("--methods", type=_str_list, default=["classical", "uniform", "active"])
    s.add_argument("--tau", type=float, default=DEFAULT_TAU)
    s.add_argument("--alpha", type=float, default=0.1)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--protocol", default="fixed", choices=harness.PROTOCOLS)
    s.add_argument("--pilot-size", type=int, default=None)
    s.add_argument("--pilot-frac", type=float, default=0.25)
    s.add_argument("--mu-train-size", type=int, default=2000)
    s.add_argument("--mu-learner", default="knn", choices=learners)
    s.add_argument("--v-learner", default="knn", choices=learners)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--records", action="store_true", help="include per-trial records")
    s.add_argument("--out", default="-")
    s.set_defaults(run=run_simulate)

    u = sub.add_parser("uestimate", help="active U-estimation (pairwise ranking)")
    src = u.add_mutually_exclusive_group(required=True)
    src.add_argument("--data")
    src.add_argument("--dgp", choices=("linear-ranking",))
    u.add_argument("--n", type=int, default=1500)
    u.add_argument("--p", type=int, default=5)
    u.add_argument("--noise-sigma", type=float, default=None)
    u.add_argument("--budget", type=_int_list, required=True,
                   help="one budget or a comma-separated grid")
    u.add_argument("--pilot-budget", type=int, default=100)
    u.add_argument("--trials", type=int, default=500)
    u.add_argument("--methods", type=_str_list, default=list(harness.U_METHODS))
    u.add_argument("--tau", type=float, default=DEFAULT_TAU)
    u.add_argument("--seed", type=int, required=True)
    u.add_argument("--mu-learner", default="ridge", choices=learners)
    u.add_argument("--count-pilot", type=_bool, default=True,
                   help="deduct the pilot labels from the budget")
    u.add_argument("--sandwich", action="store_true", help="compute sandwich covariances")
    u.add_argument("--workers", type=int, default=1)
    u.add_argument("--records", action="store_true")
    u.add_argument("--out", default="-")
    u.set_defaults(run=run_uestimate)

    b = sub.add_parser("bench-kernels", help="fast vs naive kernel sums")
    b.add_argument("--kernel", required=True, choices=("gini", "kendall"))
    b.add_argument("--sizes", type=_int_list, default=[100, 1000, 10000])
    b.add_argument("--seed", type=int, required=True)
    b.add_argument("--naive-max", type=int, default=10000,
                   help="skip the naive sum above this size")
    b.add_argument("--out", default="-")
    b.set_defaults(run=run_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        report = args.run(args)
        write_json(args.out, report)
    except ActiveUError as exc:
        print(f"activeu {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"activeu {args.command}: error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
