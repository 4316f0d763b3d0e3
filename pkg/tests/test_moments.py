import io
import itertools
import math

import numpy as np
import pytest

from catalytic_pam.catalysts import CatalystModel
from catalytic_pam.lattice import LatticeSpec, green_function
from catalytic_pam.moments import (
    MomentSeries,
    StateSpaceTooLarge,
    annealed_moment,
    annealed_moments,
    closed_form_lambda0,
    exact_moment_small,
    isrw_lambda0_oracle,
    isrw_lambda0_series,
    jackknife_log_mean_exp,
    replica_seed,
)
from catalytic_pam.reactant import ModelParams

SEP = CatalystModel("SEP", 0.5)


def dense_sep_ring_moment(L, rho, kappa, gamma, p, t):
    """log E[u(0,t)^p] for SEP on a ring of L sites, built from scratch."""
    etas = list(itertools.product((0, 1), repeat=L))
    walks = list(itertools.product(range(L), repeat=p))
    index = {(e, w): i for i, (e, w) in enumerate(itertools.product(etas, walks))}
    n = len(index)
    Q = np.zeros((n, n))
    for (e, w), i in index.items():
        for x in range(L):
            y = (x + 1) % L
            e2 = list(e)
            e2[x], e2[y] = e[y], e[x]
            Q[i, index[(tuple(e2), w)]] += 0.5
            Q[i, i] -= 0.5
        for q in range(p):
            for step in (1, -1):
                w2 = list(w)
                w2[q] = (w[q] + step) % L
                Q[i, index[(e, tuple(w2))]] += kappa
                Q[i, i] -= kappa
        Q[i, i] += gamma * sum(e[x] for x in w)
    vals, vecs = np.linalg.eigh(Q)
    v = vecs @ (np.exp(t * vals) * (vecs.T @ np.ones(n)))
    origin = tuple([0] * p)
    total = sum(rho ** sum(e) * (1 - rho) ** (L - sum(e)) * v[index[(e, origin)]] for e in etas)
    return math.log(total)


def test_replica_seeds_collision_free():
    seeds = {replica_seed(7, i) for i in range(10**6)}
    assert len(seeds) == 10**6


def test_replica_seed_stable():
    assert replica_seed(0, 0) == replica_seed(0, 0)
    assert replica_seed(0, 1) != replica_seed(1, 0)


def test_jackknife_matches_brute_force():
    x = np.random.default_rng(0).normal(size=30) * 3
    est, se, loo = jackknife_log_mean_exp(x)
    brute = [math.log(np.mean(np.exp(np.delete(x, i)))) for i in range(len(x))]
    assert np.allclose(loo[:, 0], brute, rtol=1e-12)
    assert est[0] == pytest.approx(math.log(np.mean(np.exp(x))), rel=1e-13)
    dev = np.array(brute) - np.mean(brute)
    assert se[0] == pytest.approx(math.sqrt((len(x) - 1) / len(x) * np.sum(dev**2)), rel=1e-12)


def test_jackknife_survives_dominant_replica():
    x = np.array([0.0, 0.0, 800.0, 0.0])
    est, se, _ = jackknife_log_mean_exp(x)
    assert np.isfinite(est[0]) and np.isfinite(se[0])


def test_gamma_zero_moment_is_zero():
    s = annealed_moment(SEP, ModelParams(gamma=0.0, kappa=0.5), LatticeSpec(1, 6), [0.0, 1.0, 2.0], 10, seed=1)
    assert np.all(s.log_moment == 0) and np.all(s.stderr == 0)
    assert "degenerate" in s.flags


def test_series_t0_is_zero():
    s = annealed_moment(SEP, ModelParams(gamma=1.0, kappa=0.5), LatticeSpec(1, 6), [0.0, 1.0], 10, seed=1)
    assert s.log_moment[0] == 0.0


def test_needs_two_replicas():
    with pytest.raises(ValueError):
        annealed_moment(SEP, ModelParams(), LatticeSpec(1, 6), [1.0], 1)


def test_t_grid_must_increase():
    with pytest.raises(ValueError):
        annealed_moment(SEP, ModelParams(), LatticeSpec(1, 6), [2.0, 1.0], 5)


def test_seed_determinism():
    args = (SEP, ModelParams(kappa=0.3, gamma=0.4), LatticeSpec(1, 6), [0.5, 1.0], 20)
    a, b = annealed_moment(*args, seed=9), annealed_moment(*args, seed=9)
    assert np.array_equal(a.log_moment, b.log_moment) and np.array_equal(a.stderr, b.stderr)
    c = annealed_moment(*args, seed=10)
    assert not np.array_equal(a.log_moment, c.log_moment)


def replica_samples(series):
    # invert the leave-one-out means back to per-replica samples
    n = series.n_reps
    return np.log(n * np.exp(series.log_moment) - (n - 1) * np.exp(series.loo))


def test_replica_sets_extend_consistently():
    args = (SEP, ModelParams(kappa=0.3, gamma=0.4), LatticeSpec(1, 6), [1.0])
    small = annealed_moment(*args, 10, seed=3)
    big = annealed_moment(*args, 20, seed=3)
    assert np.allclose(replica_samples(big)[:10], replica_samples(small), atol=1e-9)


def test_sep_exact_agreement_kappa0():
    lat = LatticeSpec(1, 4)
    params = ModelParams(kappa=0.0, gamma=0.8, rho=0.5)
    s = annealed_moment(SEP, params, lat, [0.5, 1.0, 2.0], 4000, seed=5)
    for t, m, se in zip(s.t, s.log_moment, s.stderr):
        assert abs(m - exact_moment_small(SEP, params, lat, t)) < 3 * se


def test_estimators_agree_isrw():
    model = CatalystModel("ISRW", 1.0)
    params = ModelParams(kappa=0.5, gamma=0.1, rho=1.0, p=2)
    lat = LatticeSpec(1, 20)
    a = annealed_moment(model, params, lat, [2.0], 2000, "pde-ensemble", seed=1)
    b = annealed_moment(model, params, lat, [2.0], 2000, "fk-dual", seed=2)
    assert abs(a.log_moment[0] - b.log_moment[0]) < 3 * math.hypot(a.stderr[0], b.stderr[0])


def test_jensen_in_p():
    lat = LatticeSpec(1, 8)
    series = annealed_moments(SEP, ModelParams(kappa=0.4, gamma=0.8), lat, [1.0, 2.0, 3.0], 500, seed=2, p_values=[1, 2, 3])
    for lo, hi in ((1, 2), (2, 3)):
        a, b = series[lo], series[hi]
        diff = b.log_moment / hi - a.log_moment / lo
        assert np.all(diff >= -2 * np.hypot(a.stderr / lo, b.stderr / hi))


@pytest.mark.parametrize("kind", ["SEP", "SVM"])
def test_pathwise_bound(kind):
    lat = LatticeSpec(2, 5)
    params = ModelParams(kappa=0.3, gamma=1.2, delta=0.2, p=2)
    s = annealed_moment(CatalystModel(kind, 0.5), params, lat, [0.5, 1.0, 2.0], 200, seed=4)
    assert np.all(s.log_moment / (2 * s.t) <= 1.2 - 0.2 + 1e-9)


def test_moment_series_csv_roundtrip():
    s = MomentSeries(2, [0.0, 1.0, 2.5], [3.0, 1.25, 2.125], [0.0, 0.5, 0.25], 40)
    buf = io.StringIO()
    s.to_csv(buf)
    assert buf.getvalue().splitlines()[0] == "t,log_moment,stderr,n_reps"
    back = MomentSeries.from_csv(io.StringIO(buf.getvalue()), p=2)
    assert np.array_equal(back.log_moment, [0.0, 1.25, 2.125]) and back.n_reps == 40


def test_moment_series_rejects_negative_stderr():
    with pytest.raises(ValueError):
        MomentSeries(1, [1.0], [0.0], [-1.0], 5)


def test_exact_trivial_cases():
    lat = LatticeSpec(1, 4)
    assert exact_moment_small(SEP, ModelParams(kappa=0.3, gamma=0.4), lat, 0.0, p=2) == 0.0
    assert exact_moment_small(SEP, ModelParams(kappa=0.3, gamma=0.0), lat, 1.5, p=2) == pytest.approx(0.0, abs=1e-13)


def test_exact_matches_dense_oracle():
    params = ModelParams(kappa=0.3, gamma=0.4, rho=0.5)
    value = exact_moment_small(SEP, params, LatticeSpec(1, 3), 1.0, p=2)
    assert value == pytest.approx(dense_sep_ring_moment(3, 0.5, 0.3, 0.4, 2, 1.0), abs=1e-10)


def test_exact_dense_oracle_death_rate():
    params = ModelParams(kappa=0.2, gamma=0.5, rho=0.3, delta=0.25)
    value = exact_moment_small(CatalystModel("SEP", 0.3), params, LatticeSpec(1, 4), 0.7, p=1)
    assert value == pytest.approx(dense_sep_ring_moment(4, 0.3, 0.2, 0.5, 1, 0.7) - 0.25 * 0.7, abs=1e-10)


def test_exact_budget_and_voter_rejected():
    with pytest.raises(StateSpaceTooLarge, match="states"):
        exact_moment_small(SEP, ModelParams(kappa=0.1), LatticeSpec(2, 5), 1.0, p=2)
    with pytest.raises(ValueError):
        exact_moment_small(CatalystModel("SVM", 0.5), ModelParams(), LatticeSpec(1, 3), 1.0)


def test_isrw_truncated_cap_doubling_and_poisson_identity():
    model = CatalystModel("ISRW", 0.3)
    params = ModelParams(kappa=0.0, gamma=0.4, rho=0.3)
    lat = LatticeSpec(1, 3)
    a = exact_moment_small(model, params, lat, 1.0, cap=3)
    b = exact_moment_small(model, params, lat, 1.0, cap=6)
    assert abs(a - b) < 1e-3
    # the Poissonisation identity is exact for the untruncated field
    assert b == pytest.approx(isrw_lambda0_series(params, lat, [1.0])[0], abs=1e-6)


def test_isrw_oracle_trivial_and_errors():
    lat = LatticeSpec(3, 5)
    assert isrw_lambda0_oracle(ModelParams(gamma=0.0, rho=1.0), lat, 10.0) == 0.0
    with pytest.raises(ValueError):
        isrw_lambda0_oracle(ModelParams(kappa=0.1, rho=1.0), lat, 10.0)


def test_isrw_oracle_nondecreasing():
    lat = LatticeSpec(3, 9)
    params = ModelParams(gamma=0.2, rho=1.0)
    t = np.array([5.0, 10.0, 20.0, 40.0, 80.0])
    lam = isrw_lambda0_series(params, lat, t) / t
    assert np.all(np.diff(lam) >= 0)


def test_closed_form():
    G3 = green_function(3)
    value = closed_form_lambda0(ModelParams(rho=1.0, gamma=0.2, p=1), G3)
    assert float(value) == pytest.approx(0.2870582151, rel=1e-9)
    assert closed_form_lambda0(ModelParams(rho=1.0, gamma=0.7), G3).infinite
    g = 1e-6
    assert float(closed_form_lambda0(ModelParams(rho=2.0, gamma=g), G3)) == pytest.approx(2.0 * g, rel=1e-5)
    assert closed_form_lambda0(ModelParams(rho=1.0, gamma=0.2), green_function(1)).infinite
