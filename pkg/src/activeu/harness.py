"""Monte Carlo experiments for active U-statistics and active U-estimation.

Two protocols are supported:

``fixed``
    One dataset per configuration; every trial redraws only the labeling
    uniforms. The target is the full-data U-statistic (or full-label
    minimizer) on that dataset, so the Monte Carlo spread is the design
    variance given the data.

``resample``
    Every trial draws a fresh dataset as well as fresh uniforms, and the
    target is the reference value on a 200,000-point sample. Use it for
    statements about the unconditional sampling distribution (coverage,
    variance-estimator calibration).

Within a trial one uniform vector is shared by every method and budget
(common random numbers), so differences between methods are paired.
Per-trial streams come from ``SeedSequence([seed, 1, trial])``; results do not
depend on the number of workers or on completion order.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from typing import Optional

import numpy as np

from .dgp import DGPSpec, Dataset, generate_dgp, kernel_values, reference_theta, REFERENCE_SIZE
from .errors import ArgumentError, EstimationError
from .estimators import ActiveSample, u_statistic
from .hoeffding import estimate_h1
from .inference import estimate_with_ci
from .kernels import builtin_kernel
from .learners import learner_factory
from .policy import (DEFAULT_TAU, learn_uncertainty, oracle_policy, policy_from_scores,
                     scores_from_model, uniform_policy)
from . import uerm

# method -> (policy, estimator)
METHODS = {
    "classical": ("uniform", "classical"),
    "uniform": ("uniform", "aipw-normalized"),
    "active": ("active", "aipw-normalized"),
    "plugin-act-Y": ("plugin-act-y", "aipw-normalized"),
    "oracle": ("oracle", "aipw-normalized"),
    "active-unnormalized": ("active", "aipw"),
    "uniform-unnormalized": ("uniform", "aipw"),
}
U_METHODS = ("noml", "semi", "act")
PROTOCOLS = ("fixed", "resample")


def canonical_method(name: str) -> str:
    for m in METHODS:
        if m.lower() == name.strip().lower():
            return m
    raise ArgumentError(f"unknown method {name!r}; expected one of {', '.join(METHODS)}")


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 1, trial]))


def _stream(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def _check_budgets(budgets, n):
    if not budgets:
        raise ArgumentError("at least one budget is required")
    for b in budgets:
        if not 0 < b <= n:
            raise ArgumentError(f"budget {b} outside (0, n={n}]")


# ------------------------------------------------------------ estimation

@dataclass(frozen=True)
class EstimationConfig:
    kernel: str
    dgp: DGPSpec = field(default_factory=DGPSpec)
    budgets: tuple = (200,)
    trials: int = 3000
    methods: tuple = ("classical", "uniform", "active")
    tau: float = DEFAULT_TAU
    alpha: float = 0.1
    seed: int = 0
    protocol: str = "fixed"
    mu_learner: str = "knn"
    v_learner: str = "knn"
    # size of an independent historical sample that trains mu; 0 trains mu
    # on the first fold of the pilot instead
    mu_train_size: int = 2000
    # size of the auxiliary labeled pilot; None means pilot_frac * budget
    pilot_size: Optional[int] = None
    pilot_frac: float = 0.25
    oracle_draws: int = 200
    workers: int = 1
    n_ref: int = REFERENCE_SIZE

    def __post_init__(self):
        builtin_kernel(self.kernel)
        object.__setattr__(self, "methods", tuple(canonical_method(m) for m in self.methods))
        object.__setattr__(self, "budgets", tuple(int(b) for b in self.budgets))
        _check_budgets(self.budgets, self.dgp.n)
        if self.trials < 1:
            raise ArgumentError("trials must be positive")
        if self.protocol not in PROTOCOLS:
            raise ArgumentError(f"protocol must be one of {PROTOCOLS}")
        if not 0 <= self.tau <= 1:
            raise ArgumentError("tau must lie in [0, 1]")
        if not 0 < self.alpha < 1:
            raise ArgumentError("alpha must lie in (0, 1)")
        if not 0 < self.pilot_frac <= 1:
            raise ArgumentError("pilot_frac must lie in (0, 1]")
        if self.workers < 1:
            raise ArgumentError("workers must be positive")

    def as_dict(self):
        d = asdict(self)
        d["dgp"] = asdict(self.dgp)
        d["budgets"] = list(self.budgets)
        d["methods"] = list(self.methods)
        return d


@dataclass
class TrialRecord:
    trial: int
    method: str
    budget: int
    estimate: float = float("nan")
    ci_low: float = float("nan")
    ci_high: float = float("nan")
    covered: bool = False
    n_lab: int = 0
    sigma2_hat: float = float("nan")
    wall_time: float = 0.0
    flag: Optional[str] = None

    def as_dict(self):
        return asdict(self)


@dataclass
class BudgetFit:
    """Everything learned from the pilot for one pilot size."""

    mu: object
    v_fit: object
    residual_fit: object
    h1: object
    h1_mu: object
    true_h1: object = None
    true_h1_mu: object = None


@dataclass
class EstimationSetup:
    config: EstimationConfig
    kernel: object
    fits: dict                 # budget -> BudgetFit
    data: Optional[Dataset]    # fixed protocol only
    truth: float
    truth_kind: str
    policies: dict = field(default_factory=dict)    # (budget, policy) -> probs
    values: Optional[np.ndarray] = None
    pred_values: dict = field(default_factory=dict)  # budget -> prediction values


def _pilot_size(config: EstimationConfig, budget: int, r: int) -> int:
    m = config.pilot_size if config.pilot_size is not None else math.ceil(config.pilot_frac * budget)
    return max(int(m), 2 * (r - 1) + 4)


def _values_fn(kernel):
    return partial(kernel_values, kernel)


def _true_projections(config, kernel, mu, key):
    """Projections from a large independent sample, standing in for the
    population h1 and h1_mu when building the oracle policy."""
    ref = generate_dgp(config.dgp, n=2000, rng=_stream(config.seed, 3, key))
    vf = _values_fn(kernel)
    h1 = estimate_h1(vf(ref.X, ref.y), kernel, "true-label")
    h1mu = estimate_h1(vf(ref.X, mu.predict(ref.X)), kernel, "prediction")
    return h1, h1mu


def oracle_scores(config: EstimationConfig, kernel, fit: BudgetFit, X, yhat_values, rng):
    """s(X_i) = E[(h1(Y) - h1_mu(Yhat_i))^2 | X_i] by simulating labels at
    the fixed covariates."""
    from .dgp import sample_outcomes
    vf = _values_fn(kernel)
    hm = fit.true_h1_mu(yhat_values)
    s = np.zeros(X.shape[0])
    for _ in range(config.oracle_draws):
        y = sample_outcomes(config.dgp, X, rng)
        s += (fit.true_h1(vf(X, y)) - hm) ** 2
    return s / config.oracle_draws


def _fit_budgets(config: EstimationConfig, kernel):
    vf = _values_fn(kernel)
    mu0 = None
    if config.mu_train_size > 0:
        hist = generate_dgp(config.dgp, n=config.mu_train_size, rng=_stream(config.seed, 4))
        mu0 = learner_factory(config.mu_learner)().fit(hist.X, hist.y)
    need_oracle = any(METHODS[m][0] == "oracle" for m in config.methods)
    by_size, fits = {}, {}
    for b in config.budgets:
        m = _pilot_size(config, b, kernel.degree)
        if m not in by_size:
            pilot = generate_dgp(config.dgp, n=m, rng=_stream(config.seed, 2, m))
            vfac = learner_factory(config.v_learner)
            fit = learn_uncertainty(pilot.X, pilot.y, kernel, vfac, mu=mu0,
                                    seed=config.seed, value_fn=vf)
            if mu0 is None:
                # mu came from the first pilot fold; refit V for the residual
                # rule with that same mu
                pass
            mu = fit.mu
            res = learn_uncertainty(pilot.X, pilot.y, kernel, vfac, mu=mu,
                                    seed=config.seed, target="residual", value_fn=vf)
            bf = BudgetFit(mu=mu, v_fit=fit, residual_fit=res, h1=fit.h1, h1_mu=fit.h1_mu)
            if mu0 is not None:
                # with a pre-trained mu the projections use the whole pilot
                pv = vf(pilot.X, pilot.y)
                bf.h1 = estimate_h1(pv, kernel, "true-label", seed=config.seed)
                bf.h1_mu = estimate_h1(vf(pilot.X, mu.predict(pilot.X)), kernel,
                                       "prediction", seed=config.seed)
            if need_oracle:
                bf.true_h1, bf.true_h1_mu = _true_projections(config, kernel, mu, m)
            by_size[m] = bf
        fits[b] = by_size[m]
    return fits


def _policy_probs(config, kernel, fit: BudgetFit, policy: str, X, yhat_values, budget, rng):
    n = X.shape[0]
    if policy == "uniform":
        return uniform_policy(n, budget).probs
    if policy == "active":
        return policy_from_scores(scores_from_model(fit.v_fit.model, X), budget,
                                  config.tau).probs
    if policy == "plugin-act-y":
        return policy_from_scores(scores_from_model(fit.residual_fit.model, X), budget,
                                  config.tau, kind="plugin-act-y").probs
    if policy == "oracle":
        s = oracle_scores(config, kernel, fit, X, yhat_values, rng)
        return oracle_policy(s, budget, config.tau).probs
    raise ArgumentError(f"unknown policy {policy!r}")


def prepare_estimation(config: EstimationConfig) -> EstimationSetup:
    """Fit mu, the uncertainty models and projections; for the fixed
    protocol also draw the dataset, its policies and its full-data target."""
    kernel = builtin_kernel(config.kernel)
    if kernel.degree > 1 and kernel.fast_path == "none":
        raise ArgumentError(f"kernel {config.kernel!r} has no fast exact path for simulations")
    fits = _fit_budgets(config, kernel)
    vf = _values_fn(kernel)
    if config.protocol == "resample":
        truth = reference_theta(config.dgp, config.kernel, n_ref=config.n_ref)
        return EstimationSetup(config, kernel, fits, None, truth, "reference-sample")
    data = generate_dgp(config.dgp, rng=_stream(config.seed, 5))
    values = vf(data.X, data.y)
    setup = EstimationSetup(config, kernel, fits, data, u_statistic(values, kernel),
                            "full-data", values=values)
    orng = _stream(config.seed, 6)
    for b in config.budgets:
        fit = fits[b]
        yhat = fit.mu.predict(data.X)
        setup.pred_values[b] = vf(data.X, yhat)
        for m in config.methods:
            pol = METHODS[m][0]
            if (b, pol) not in setup.policies:
                setup.policies[(b, pol)] = _policy_probs(config, kernel, fit, pol, data.X,
                                                         setup.pred_values[b], b, orng)
    return setup


def run_trial(setup: EstimationSetup, trial: int) -> list:
    """All methods and budgets of one trial on one shared uniform vector."""
    config, kernel = setup.config, setup.kernel
    rng = trial_rng(config.seed, trial)
    if config.protocol == "resample":
        data = generate_dgp(config.dgp, rng=rng)
        values = kernel_values(kernel, data.X, data.y)
        cache = {}
        preds, policies = {}, {}
        for b in config.budgets:
            fit = setup.fits[b]
            key = id(fit.mu)
            if key not in cache:
                cache[key] = kernel_values(kernel, data.X, fit.mu.predict(data.X))
            preds[b] = cache[key]
            for m in config.methods:
                pol = METHODS[m][0]
                if (b, pol) not in policies:
                    policies[(b, pol)] = _policy_probs(config, kernel, fit, pol, data.X,
                                                       preds[b], b, rng)
    else:
        values, preds, policies = setup.values, setup.pred_values, setup.policies
    n = values.shape[0]
    uniforms = rng.random(n)
    out = []
    for b in config.budgets:
        fit = setup.fits[b]
        for m in config.methods:
            pol, kind = METHODS[m]
            t0 = time.perf_counter()
            rec = TrialRecord(trial=trial, method=m, budget=b)
            sample = ActiveSample.draw(values, policies[(b, pol)], uniforms,
                                       predictions=preds[b], budget=b)
            rec.n_lab = sample.n_lab
            try:
                rep = estimate_with_ci(sample, kernel, kind, fit.h1, fit.h1_mu,
                                       alpha=config.alpha, policy_kind=pol)
            except EstimationError as exc:
                rec.flag = str(exc)
            else:
                rec.estimate, rec.sigma2_hat = rep.estimate, rep.sigma2_hat
                rec.ci_low, rec.ci_high = rep.ci_low, rep.ci_high
                rec.covered = bool(rep.ci_low <= setup.truth <= rep.ci_high)
                if rep.flags:
                    rec.flag = ",".join(rep.flags)
            rec.wall_time = time.perf_counter() - t0
            out.append(rec)
    return out


_WORKER_SETUP = None


def _init_worker(setup):
    global _WORKER_SETUP
    _WORKER_SETUP = setup


def _worker_trial(trial):
    return run_trial(_WORKER_SETUP, trial)


def _map_trials(fn, init, setup, trials, workers):
    if workers <= 1:
        return [r for t in range(trials) for r in fn(setup, t)]
    with ProcessPoolExecutor(max_workers=workers, initializer=init,
                             initargs=(setup,)) as ex:
        chunks = ex.map(_worker_trial if fn is run_trial else _worker_utrial, range(trials),
                        chunksize=max(1, trials // (4 * workers)))
        return [r for recs in chunks for r in recs]


def run_estimation_trials(config: EstimationConfig, setup: Optional[EstimationSetup] = None):
    """Run every trial; returns ``(records, setup)`` with records sorted by
    trial, budget and method order."""
    setup = setup or prepare_estimation(config)
    records = _map_trials(run_trial, _init_worker, setup, config.trials, config.workers)
    return records, setup


# -------------------------------------------------------------- summaries

def _valid(rec):
    return rec.flag is None or rec.flag == "variance-clamped"


def summarize(records, truth: float, methods, budgets) -> list:
    """One row per (method, budget): mean estimate, Monte Carlo variance,
    MSE against ``truth``, coverage, mean CI width and label counts.
    Flagged trials are excluded and counted."""
    rows = []
    for m in methods:
        for b in budgets:
            recs = [r for r in records if r.method == m and r.budget == b]
            ok = [r for r in recs if _valid(r)]
            est = np.array([r.estimate for r in ok])
            row = {"method": m, "budget": b, "trials": len(recs), "valid": len(ok),
                   "flagged": len(recs) - len(ok)}
            if len(ok) >= 2:
                row.update(
                    mean_estimate=float(est.mean()),
                    mc_variance=float(est.var(ddof=1)),
                    mc_se=float(est.std(ddof=1) / math.sqrt(len(ok))),
                    mse=float(np.mean((est - truth) ** 2)),
                    coverage=float(np.mean([r.covered for r in ok])),
                    mean_ci_width=float(np.mean([r.ci_high - r.ci_low for r in ok])),
                    mean_sigma2_hat=float(np.mean([r.sigma2_hat for r in ok])),
                    mean_n_lab=float(np.mean([r.n_lab for r in ok])),
                )
            rows.append(row)
    return rows


def estimate_matrix(records, cells):
    """Trials x cells matrix of estimates, keeping trials valid in every
    cell (paired comparisons need the same trials)."""
    by = {}
    for r in records:
        by.setdefault(r.trial, {})[(r.method, r.budget)] = r
    trials = sorted(t for t, d in by.items()
                    if all(c in d and _valid(d[c]) for c in cells))
    return np.array([[by[t][c].estimate for c in cells] for t in trials]).reshape(len(trials),
                                                                              len(cells))


def variance_covariance(E):
    """Monte Carlo variances of the columns of E and the covariance of those
    variance estimates, from the per-trial squared deviations."""
    T = E.shape[0]
    if T < 3:
        raise EstimationError("need at least 3 paired trials")
    V = E.var(axis=0, ddof=1)
    D = (E - E.mean(axis=0)) ** 2
    cov = np.atleast_2d(np.cov(D, rowvar=False)) / T
    return V, cov


def fit_classical_curve(budgets, variances):
    """Least-squares fit of Var(n_b) = a + c / n_b; returns (a, c)."""
    b = np.asarray(budgets, dtype=float)
    v = np.asarray(variances, dtype=float)
    if b.shape[0] < 3:
        raise ArgumentError("the classical curve needs at least 3 budgets")
    A = np.column_stack([np.ones_like(b), 1.0 / b])
    (a, c), *_ = np.linalg.lstsq(A, v, rcond=None)
    return float(a), float(c)


def effective_sample_size(variance: float, budgets, classical_variances) -> float:
    """Budget at which the fitted classical curve a + c / n_b reaches
    ``variance``; clipped to (0, 10 * max budget]."""
    a, c = fit_classical_curve(budgets, classical_variances)
    if c <= 0:
        raise EstimationError("classical variance does not decrease with the budget",
                              a=a, c=c)
    cap = 10.0 * max(budgets)
    gap = variance - a
    if gap <= c / cap:
        return cap
    return float(c / gap)


def _grad(f, x, rel=1e-6):
    g = np.zeros_like(x)
    for k in range(x.shape[0]):
        h = rel * max(abs(x[k]), 1e-12)
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        g[k] = (f(xp) - f(xm)) / (2 * h)
    return g


class NeffAnalysis:
    """n_eff for every (method, budget) cell with delta-method standard
    deviations, built on paired trials so that differences between cells
    get their correlated uncertainty."""

    def __init__(self, records, methods, budgets):
        if "classical" not in methods:
            raise ArgumentError("n_eff needs the classical method")
        self.budgets = list(budgets)
        self.cells = [(m, b) for m in methods for b in budgets]
        self.E = estimate_matrix(records, self.cells)
        self.V, self.cov = variance_covariance(self.E)
        self._cls = [self.cells.index(("classical", b)) for b in self.budgets]

    def _neff(self, V, cell):
        return effective_sample_size(V[self.cells.index(cell)], self.budgets,
                                     V[self._cls])

    def neff(self, method, budget):
        """(n_eff, standard deviation)."""
        cell = (method, budget)
        val = self._neff(self.V, cell)
        g = _grad(lambda V: self._neff(V, cell), self.V)
        return val, float(math.sqrt(max(g @ self.cov @ g, 0.0)))

    def gap(self, cell1, cell2):
        """n_eff(cell1) - n_eff(cell2) and its paired standard error."""
        f = lambda V: self._neff(V, cell1) - self._neff(V, cell2)
        g = _grad(f, self.V)
        return f(self.V), float(math.sqrt(max(g @ self.cov @ g, 0.0)))

    def variance(self, method, budget):
        return float(self.V[self.cells.index((method, budget))])

    def variance_gap(self, cell1, cell2):
        """Var(cell1) - Var(cell2) and its paired standard error."""
        i, j = self.cells.index(cell1), self.cells.index(cell2)
        d = self.V[i] - self.V[j]
        se = math.sqrt(max(self.cov[i, i] + self.cov[j, j] - 2 * self.cov[i, j], 0.0))
        return float(d), se

    def table(self):
        rows = []
        for m, b in self.cells:
            try:
                ne, sd = self.neff(m, b)
            except EstimationError:
                ne, sd = float("nan"), float("nan")
            rows.append({"method": m, "budget": b, "n_eff": ne, "n_eff_sd": sd})
        return rows


def paired_mse_gap(records, truth, cell1, cell2, value=lambda r: r.estimate):
    """MSE(cell1) - MSE(cell2) over paired trials with its standard error."""
    by = {}
    for r in records:
        by.setdefault(r.trial, {})[(r.method, r.budget)] = r
    d = []
    for t in sorted(by):
        a, b = by[t].get(cell1), by[t].get(cell2)
        if a is None or b is None or not (_valid(a) and _valid(b)):
            continue
        d.append(_sq_err(a, truth) - _sq_err(b, truth))
    d = np.asarray(d)
    if d.shape[0] < 2:
        raise EstimationError("not enough paired trials")
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.shape[0]))


def _sq_err(rec, truth):
    if hasattr(rec, "sq_error"):
        return rec.sq_error
    return (rec.estimate - truth) ** 2


def simulation_report(config: EstimationConfig, records, setup, include_records=False):
    rows = summarize(records, setup.truth, config.methods, config.budgets)
    out = {"config": config.as_dict(), "truth": setup.truth, "truth_kind": setup.truth_kind,
           "summary": rows}
    if "classical" in config.methods and len(config.budgets) >= 3:
        try:
            out["n_eff"] = NeffAnalysis(records, config.methods, config.budgets).table()
        except (EstimationError, ArgumentError) as exc:
            out["n_eff_error"] = str(exc)
    if include_records:
        out["records"] = [r.as_dict() for r in records]
    return out


# ------------------------------------------------------------ U-estimation

@dataclass(frozen=True)
class UEstimationConfig:
    dgp: DGPSpec = field(default_factory=lambda: DGPSpec(kind="linear-ranking", p=5, n=1500))
    budgets: tuple = (300,)
    pilot_budget: int = 100
    trials: int = 500
    methods: tuple = U_METHODS
    tau: float = DEFAULT_TAU
    seed: int = 0
    mu_learner: str = "ridge"
    s_learner: str = "knn"
    # historical labeled sample that trains mu (DGP runs only)
    hist_size: Optional[int] = None
    count_pilot: bool = True
    sandwich: bool = False
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(m.strip().lower() for m in self.methods))
        for m in self.methods:
            if m not in U_METHODS:
                raise ArgumentError(f"unknown method {m!r}; expected one of {U_METHODS}")
        object.__setattr__(self, "budgets", tuple(int(b) for b in self.budgets))
        _check_budgets(self.budgets, self.dgp.n)
        if self.trials < 1:
            raise ArgumentError("trials must be positive")
        if "act" in self.methods and self.count_pilot and min(self.budgets) <= self.pilot_budget:
            raise ArgumentError("every budget must exceed the pilot budget")

    def as_dict(self):
        d = asdict(self)
        d["dgp"] = asdict(self.dgp)
        d["budgets"] = list(self.budgets)
        d["methods"] = list(self.methods)
        return d


@dataclass
class UTrialRecord:
    trial: int
    method: str
    budget: int
    theta_hat: list = field(default_factory=list)
    sq_error: float = float("nan")
    angle_deg: float = float("nan")
    n_lab: int = 0
    iterations: int = 0
    sandwich_cov: Optional[list] = None
    wall_time: float = 0.0
    flag: Optional[str] = None

    def as_dict(self):
        return asdict(self)


@dataclass
class UEstimationSetup:
    config: UEstimationConfig
    data: Dataset
    yhat: np.ndarray
    truth: np.ndarray
    pilots: dict = field(default_factory=dict)   # budget -> (theta_pilot, pilot_idx, probs)
    meta: dict = field(default_factory=dict)


def prepare_uestimation(config: UEstimationConfig, data: Optional[Dataset] = None):
    """Fix the dataset, predictions, full-label target, and per-budget
    pilot estimate and A-optimal policy."""
    if data is None:
        data = generate_dgp(config.dgp, rng=_stream(config.seed, 5))
    if data.y is None:
        raise ArgumentError("labels required")
    n = data.n
    if data.yhat is not None:
        yhat = np.asarray(data.yhat, dtype=float)
    elif data.meta.get("source") == "csv":
        # train mu on a uniform pilot-sized subset of the data
        idx = np.sort(_stream(config.seed, 4).choice(n, config.pilot_budget, replace=False))
        yhat = learner_factory(config.mu_learner)().fit(data.X[idx], data.y[idx]).predict(data.X)
    else:
        hist = generate_dgp(config.dgp, n=config.hist_size or n, rng=_stream(config.seed, 4))
        yhat = learner_factory(config.mu_learner)().fit(hist.X, hist.y).predict(data.X)
    truth = uerm.minimize_empirical_urisk(data.X, data.y).theta
    setup = UEstimationSetup(config, data, yhat, truth)
    if "act" in config.methods:
        for b in config.budgets:
            th_p, pidx = uerm.pilot_stage(data.X, data.y, config.pilot_budget,
                                          seed=int(_stream(config.seed, 7, b).integers(2**31)))
            fit = uerm.a_optimal_scores(data.X, yhat, th_p, pidx, data.y[pidx],
                                        learner_factory(config.s_learner))
            pol = uerm.active_policy_with_pilot(fit.scores, pidx, b, config.tau,
                                                count_pilot=config.count_pilot)
            setup.pilots[b] = (th_p, pidx, pol.probs)
    return setup


def run_utrial(setup: UEstimationSetup, trial: int) -> list:
    config, data = setup.config, setup.data
    rng = trial_rng(config.seed, trial)
    n = data.n
    uniforms = rng.random(n)
    out = []
    ref = data.meta.get("theta_star")
    for b in config.budgets:
        unif = uniform_policy(n, b).probs
        for m in config.methods:
            t0 = time.perf_counter()
            rec = UTrialRecord(trial=trial, method=m, budget=b)
            try:
                if m == "act":
                    th_p, _, probs = setup.pilots[b]
                    s = ActiveSample.draw(data.y, probs, uniforms, predictions=setup.yhat,
                                          budget=b, covariates=data.X)
                    res = uerm.minimize_active_risk(s, th_p, sandwich=config.sandwich)
                else:
                    s = ActiveSample.draw(data.y, unif, uniforms, predictions=setup.yhat,
                                          budget=b, covariates=data.X)
                    res = (uerm.noml_estimate if m == "noml" else uerm.semi_estimate)(s)
            except EstimationError as exc:
                rec.flag = str(exc)
            else:
                rec.n_lab = s.n_lab
                rec.theta_hat = res.theta_hat.tolist()
                rec.sq_error = float(np.sum((res.theta_hat - setup.truth) ** 2))
                rec.angle_deg = uerm.angle_degrees(res.theta_hat,
                                                   setup.truth if ref is None else ref)
                rec.iterations = res.iterations
                if res.sandwich_cov is not None:
                    rec.sandwich_cov = np.asarray(res.sandwich_cov).tolist()
            rec.wall_time = time.perf_counter() - t0
            out.append(rec)
    return out


def _init_uworker(setup):
    _init_worker(setup)


def _worker_utrial(trial):
    return run_utrial(_WORKER_SETUP, trial)


def run_uestimation_trials(config: UEstimationConfig, setup: Optional[UEstimationSetup] = None,
                           data: Optional[Dataset] = None):
    setup = setup or prepare_uestimation(config, data)
    records = _map_trials(run_utrial, _init_uworker, setup, config.trials, config.workers)
    return records, setup


def summarize_u(records, methods, budgets) -> list:
    rows = []
    for m in methods:
        for b in budgets:
            recs = [r for r in records if r.method == m and r.budget == b]
            ok = [r for r in recs if r.flag is None]
            row = {"method": m, "budget": b, "trials": len(recs), "valid": len(ok),
                   "flagged": len(recs) - len(ok)}
            if len(ok) >= 2:
                se = np.array([r.sq_error for r in ok])
                row.update(mse=float(se.mean()),
                           mse_se=float(se.std(ddof=1) / math.sqrt(len(ok))),
                           mean_angle_deg=float(np.mean([r.angle_deg for r in ok])),
                           mean_n_lab=float(np.mean([r.n_lab for r in ok])))
            rows.append(row)
    return rows


def uestimation_report(config, records, setup, include_records=False):
    out = {"config": config.as_dict(), "truth": setup.truth.tolist(),
           "truth_kind": "full-label-minimizer",
           "summary": summarize_u(records, config.methods, config.budgets),
           "stabilizer": uerm.STABILIZER}
    if include_records:
        out["records"] = [r.as_dict() for r in records]
    return out
