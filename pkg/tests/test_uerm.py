import itertools
import math

import numpy as np
import pytest
from scipy.special import expit

from activeu import uerm
from activeu.dgp import DGPSpec, generate_dgp, ranking_theta
from activeu.errors import ArgumentError, EstimationError
from activeu.estimators import ActiveSample
from activeu.learners import learner_factory

C5 = DGPSpec(kind="linear-ranking", p=5, n=1500)


def loss_value(theta, x1, y1, x2, y2):
    s = np.sign(y1 - y2)
    return math.log1p(math.exp(-s * float(theta @ (x1 - x2))))


def brute_risk(theta, X, y, w=None):
    n = X.shape[0]
    w = np.ones(n) if w is None else w
    return sum(w[i] * w[j] * loss_value(theta, X[i], y[i], X[j], y[j])
               for i, j in itertools.combinations(range(n), 2))


def test_loss_examples():
    d = np.array([1.0, -2.0])
    v, g, H = uerm.pairwise_logistic_loss(np.zeros(2), (d, 1.0), (np.zeros(2), 0.0))
    assert v == pytest.approx(math.log(2))
    assert np.allclose(g, -0.5 * d)
    v, g, H = uerm.pairwise_logistic_loss(np.ones(2), (d, 3.0), (np.zeros(2), 3.0))
    assert v == pytest.approx(math.log(2))
    assert np.all(g == 0) and np.all(H == 0)
    # large margins stay finite
    v, g, H = uerm.pairwise_logistic_loss(np.array([100.0]), ([1.0], 0.0), ([0.0], 1.0))
    assert v == pytest.approx(100.0)
    with pytest.raises(ArgumentError):
        uerm.pairwise_logistic_loss(np.zeros(3), (d, 1.0), (d, 0.0))


def test_loss_finite_differences():
    rng = np.random.default_rng(1)
    h = 1e-6
    for _ in range(100):
        p = 3
        theta = rng.normal(size=p)
        z1 = (rng.normal(size=p), rng.normal())
        z2 = (rng.normal(size=p), rng.normal())
        v, g, H = uerm.pairwise_logistic_loss(theta, z1, z2)
        for k in range(p):
            e = np.zeros(p)
            e[k] = h
            vp, gp, _ = uerm.pairwise_logistic_loss(theta + e, z1, z2)
            vm, gm, _ = uerm.pairwise_logistic_loss(theta - e, z1, z2)
            assert (vp - vm) / (2 * h) == pytest.approx(g[k], rel=1e-5, abs=1e-8)
            assert np.allclose((gp - gm) / (2 * h), H[:, k], rtol=1e-5, atol=1e-8)


def test_empirical_risk_matches_brute_force():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(12, 3))
    y = np.round(rng.normal(size=12), 1)
    theta = rng.normal(size=3)
    v, g, H = uerm.empirical_urisk(theta, X, y)
    ref = brute_risk(theta, X, y) / math.comb(12, 2) + uerm.STABILIZER * theta @ theta
    assert v == pytest.approx(ref, rel=1e-12)
    h = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fd = (uerm.empirical_urisk(theta + e, X, y, 0)[0]
              - uerm.empirical_urisk(theta - e, X, y, 0)[0]) / (2 * h)
        assert fd == pytest.approx(g[k], rel=1e-5, abs=1e-9)
        gfd = (uerm.empirical_urisk(theta + e, X, y, 1)[1]
               - uerm.empirical_urisk(theta - e, X, y, 1)[1]) / (2 * h)
        assert np.allclose(gfd, H[:, k], rtol=1e-5, atol=1e-8)


def test_separable_direction_is_finite():
    x = np.linspace(-1, 1, 20)
    res = uerm.minimize_empirical_urisk(x, x)
    assert res.theta[0] > 5 and np.isfinite(res.theta[0])
    assert res.grad_norm <= uerm.DEFAULT_TOL


def test_warm_start_and_monotone_objective():
    d = generate_dgp(DGPSpec(kind="linear-ranking", p=3, n=300, seed=3))
    res = uerm.minimize_empirical_urisk(d.X, d.y)
    assert all(b <= a + 1e-12 * abs(a) for a, b in zip(res.values, res.values[1:]))
    again = uerm.minimize_empirical_urisk(d.X, d.y, theta0=res.theta)
    assert again.iterations <= 2


def test_nonconvergence_carries_diagnostics():
    d = generate_dgp(DGPSpec(kind="linear-ranking", p=3, n=100, seed=4))
    with pytest.raises(EstimationError) as err:
        uerm.minimize_empirical_urisk(d.X, d.y, max_iter=1, tol=1e-14)
    assert "grad_norm" in err.value.diagnostics and "theta" in err.value.diagnostics


@pytest.mark.slow
def test_full_label_direction_recovery():
    angles = []
    for rep in range(50):
        d = generate_dgp(C5, rng=np.random.default_rng([5, rep]))
        th = uerm.minimize_empirical_urisk(d.X, d.y).theta
        angles.append(uerm.angle_degrees(th, ranking_theta(5)))
    assert np.mean(angles) < 5


def test_pilot_full_equals_full_minimizer():
    d = generate_dgp(DGPSpec(kind="linear-ranking", p=3, n=80, seed=6))
    th, idx = uerm.pilot_stage(d.X, d.y, 80)
    assert np.array_equal(idx, np.arange(80))
    assert np.allclose(th, uerm.minimize_empirical_urisk(d.X, d.y).theta, atol=1e-12)
    with pytest.raises(ArgumentError):
        uerm.pilot_stage(d.X, d.y, 3)


def test_larger_pilot_is_more_accurate():
    med = {}
    for m in (100, 400):
        angles = []
        for rep in range(200):
            d = generate_dgp(C5, rng=np.random.default_rng([7, rep]))
            th, _ = uerm.pilot_stage(d.X, d.y, m, seed=rep)
            angles.append(uerm.angle_degrees(th, ranking_theta(5)))
        med[m] = np.median(angles)
    assert med[400] < med[100]


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_scalar_pilot_sign_matches_grid_scan(sign):
    rng = np.random.default_rng(8)
    x = rng.normal(size=(200, 1))
    y = sign * x[:, 0] + rng.normal(size=200)
    th, idx = uerm.pilot_stage(x, y, 60, seed=1)
    grid = np.linspace(-5, 5, 201)
    risks = [brute_risk(np.array([t]), x[idx], y[idx]) for t in grid]
    assert np.sign(th[0]) == np.sign(grid[int(np.argmin(risks))]) == sign


def test_perfect_predictions_give_uniform_fallback():
    d = generate_dgp(DGPSpec(kind="linear-ranking", p=2, n=200, seed=9))
    th, pidx = uerm.pilot_stage(d.X, d.y, 30, seed=2)
    fit = uerm.a_optimal_scores(d.X, d.y, th, pidx, d.y[pidx], learner_factory("knn"))
    assert np.all(fit.targets == 0) and np.all(fit.scores == 0)
    with pytest.warns(RuntimeWarning):
        pol = uerm.active_policy_with_pilot(fit.scores, pidx, 80)
    rest = np.setdiff1d(np.arange(200), pidx)
    assert np.allclose(pol.probs[rest], 50 / 170)
    assert np.all(pol.probs[pidx] == 1)


def test_scalar_a_optimal_targets():
    rng = np.random.default_rng(10)
    n = 40
    x = rng.normal(size=(n, 1))
    y = x[:, 0] + rng.normal(size=n)
    yhat = x[:, 0] + 0.5 * rng.normal(size=n)
    pidx = np.arange(12)
    theta = np.array([0.8])
    fit = uerm.a_optimal_scores(x, yhat, theta, pidx, y[pidx], learner_factory("knn"))

    def grad(lab, i, j):
        s = np.sign(lab[i] - lab[j])
        d = x[i, 0] - x[j, 0]
        return -s * d * expit(-s * theta[0] * d)

    H = 0.0
    for i, j in itertools.combinations(range(n), 2):
        d = x[i, 0] - x[j, 0]
        u = np.sign(yhat[i] - yhat[j]) * theta[0] * d
        H += abs(np.sign(yhat[i] - yhat[j])) * d * d * expit(u) * expit(-u)
    H = H / math.comb(n, 2) + 2 * uerm.STABILIZER
    for a, i in enumerate(pidx):
        g = np.mean([grad(y, i, j) for j in pidx if j != i])
        gm = np.mean([grad(yhat, i, j) for j in pidx if j != i])
        assert fit.targets[a] == pytest.approx((g - gm) ** 2 / H ** 2, rel=1e-9)


def _mixed_sample(n, seed, p=2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = X[:, 0] + rng.normal(size=n)
    yhat = X[:, 0] + 0.3 * rng.normal(size=n)
    probs = rng.uniform(0.3, 1.0, n)
    return ActiveSample.draw(y, probs, rng.random(n), predictions=yhat, covariates=X), y


def test_active_risk_matches_pair_enumeration():
    s, y = _mixed_sample(6, 11)
    X, yhat, xi = s.covariates, s.predictions, s.labeled
    theta = np.array([0.4, -0.7])
    total = 0.0
    for i, j in itertools.combinations(range(6), 2):
        total += loss_value(theta, X[i], yhat[i], X[j], yhat[j])
        if xi[i] and xi[j]:
            w = 1 / (s.probs[i] * s.probs[j])
            total += w * (loss_value(theta, X[i], y[i], X[j], y[j])
                          - loss_value(theta, X[i], yhat[i], X[j], yhat[j]))
    ref = total / math.comb(6, 2) + uerm.STABILIZER * theta @ theta
    assert uerm.active_u_risk(theta, s)[0] == pytest.approx(ref, rel=1e-12)


def test_active_risk_reductions():
    rng = np.random.default_rng(12)
    n = 40
    X = rng.normal(size=(n, 2))
    y = X @ [1.0, 0.5] + rng.normal(size=n)
    yhat = X @ [1.0, 0.5]
    full = ActiveSample.draw(y, np.ones(n), rng.random(n), predictions=yhat, covariates=X)
    perfect = ActiveSample.draw(y, rng.uniform(0.2, 1, n), rng.random(n), predictions=y,
                                covariates=X)
    for t in np.linspace(-2, 2, 10):
        theta = np.array([t, 0.5 - t])
        ref = uerm.empirical_urisk(theta, X, y, 0)[0]
        assert uerm.active_u_risk(theta, full, 0)[0] == pytest.approx(ref, rel=0, abs=1e-12)
        assert uerm.active_u_risk(theta, perfect, 0)[0] == pytest.approx(ref, abs=1e-12)
    th_full = uerm.minimize_empirical_urisk(X, y).theta
    res = uerm.minimize_active_risk(full, np.zeros(2))
    assert np.allclose(res.theta_hat, th_full, atol=1e-6)
    res = uerm.minimize_active_risk(perfect, np.zeros(2))
    assert np.allclose(res.theta_hat, th_full, atol=1e-6)
    assert res.grad_norm <= uerm.DEFAULT_TOL
    ev = np.linalg.eigvalsh(res.sandwich_cov)
    assert np.allclose(res.sandwich_cov, res.sandwich_cov.T) and ev.min() >= -1e-8
    none = ActiveSample.draw(y, np.full(n, 0.01), np.full(n, 0.5), predictions=yhat,
                             covariates=X)
    with pytest.raises(EstimationError):
        uerm.active_u_risk(np.zeros(2), none)


def test_sandwich_reduces_to_classical():
    rng = np.random.default_rng(13)
    n = 30
    x = rng.normal(size=(n, 1))
    y = x[:, 0] + rng.normal(size=n)
    s = ActiveSample.draw(y, np.ones(n), rng.random(n), predictions=y, covariates=x)
    theta = uerm.minimize_empirical_urisk(x, y).theta
    cov = uerm.sandwich_covariance(s, theta)

    def parts(i, j):
        sg = np.sign(y[i] - y[j])
        d = x[i, 0] - x[j, 0]
        u = sg * theta[0] * d
        return -sg * d * expit(-u), abs(sg) * d * d * expit(u) * expit(-u)

    g = np.array([np.mean([parts(i, j)[0] for j in range(n) if j != i]) for i in range(n)])
    H = np.mean([parts(i, j)[1] for i in range(n) for j in range(n) if j != i])
    assert cov[0, 0] == pytest.approx(4 * np.var(g) / H ** 2, rel=1e-9)


def test_sandwich_scalar_mixed_labeling():
    s, y = _mixed_sample(25, 14, p=1)
    x, yhat, idx = s.covariates, s.predictions, s.labeled_index
    theta = np.array([0.9])
    w = 1 / s.probs

    def grad(lab, i, j):
        sg = np.sign(lab[i] - lab[j])
        d = x[i, 0] - x[j, 0]
        return -sg * d * expit(-sg * theta[0] * d)

    def hess(lab, i, j):
        sg = np.sign(lab[i] - lab[j])
        d = x[i, 0] - x[j, 0]
        u = sg * theta[0] * d
        return abs(sg) * d * d * expit(u) * expit(-u)

    n = 25
    gmu = np.array([np.mean([grad(yhat, i, j) for j in range(n) if j != i]) for i in range(n)])
    phi = gmu.copy()
    for i in idx:
        part = [j for j in idx if j != i]
        gi = sum(w[j] * grad(y, i, j) for j in part) / sum(w[j] for j in part)
        phi[i] += (gi - gmu[i]) * w[i]
    num = sum(w[i] * w[j] * hess(y, i, j) for i in idx for j in idx if i != j)
    den = sum(w[i] * w[j] for i in idx for j in idx if i != j)
    H = num / den
    assert uerm.sandwich_covariance(s, theta)[0, 0] == pytest.approx(4 * np.var(phi) / H ** 2,
                                                                     rel=1e-9)


def test_semi_risk_matches_formula():
    rng = np.random.default_rng(15)
    m = 8
    X = rng.normal(size=(m, 2))
    y, yh = rng.normal(size=m), rng.normal(size=m)
    theta = rng.normal(size=2)
    ref = sum(loss_value(theta, X[i], y[i], X[j], yh[j])
              for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    assert uerm.semi_risk(theta, X, y, yh, 0)[0] == pytest.approx(
        ref + uerm.STABILIZER * theta @ theta, rel=1e-12)


@pytest.mark.slow
def test_a_optimal_beats_uniform_with_noisy_pseudo_labels():
    """Same active risk and pseudo-labels; A-optimal vs uniform sampling of the
    non-pilot units, on 500 paired trials."""
    d = generate_dgp(C5, rng=np.random.default_rng(16))
    yhat = d.y + 0.7 * np.random.default_rng(17).normal(size=d.n)
    truth = uerm.minimize_empirical_urisk(d.X, d.y).theta
    n_b = 400
    th_p, pidx = uerm.pilot_stage(d.X, d.y, 100, seed=18)
    fit = uerm.a_optimal_scores(d.X, yhat, th_p, pidx, d.y[pidx], learner_factory("knn"))
    act = uerm.active_policy_with_pilot(fit.scores, pidx, n_b).probs
    unif = uerm.active_policy_with_pilot(np.ones(d.n), pidx, n_b).probs
    diffs = []
    for t in range(500):
        u = np.random.default_rng([19, t]).random(d.n)
        err = []
        for probs in (act, unif):
            s = ActiveSample.draw(d.y, probs, u, predictions=yhat, covariates=d.X)
            th = uerm.minimize_active_risk(s, th_p, sandwich=False).theta_hat
            err.append(np.sum((th - truth) ** 2))
        diffs.append(err[0] - err[1])
    assert np.mean(diffs) <= 0


@pytest.mark.slow
def test_sandwich_calibration():
    """Monte Carlo variance of theta_1 over fresh datasets and labelings
    against the mean sandwich estimate / n."""
    n, n_b = 1500, 300
    hist = generate_dgp(C5, rng=np.random.default_rng(20))
    mu = learner_factory("ridge")().fit(hist.X, hist.y)
    warm = uerm.minimize_empirical_urisk(hist.X, hist.y).theta
    probs = np.full(n, n_b / n)
    th1, sw = [], []
    for t in range(1000):
        rng = np.random.default_rng([21, t])
        d = generate_dgp(C5, rng=rng)
        s = ActiveSample.draw(d.y, probs, rng.random(n), predictions=mu.predict(d.X),
                              covariates=d.X)
        res = uerm.minimize_active_risk(s, warm)
        th1.append(res.theta_hat[0])
        sw.append(res.sandwich_cov[0, 0] / n)
    ratio = np.var(th1, ddof=1) / np.mean(sw)
    assert 0.8 <= ratio <= 1.2, ratio
