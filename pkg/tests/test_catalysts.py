import io
import re

import numpy as np
import pytest
from scipy import stats

from catalytic_pam.catalysts import (
    CatalystModel,
    CatalystState,
    Kind,
    dumps_path,
    evolve,
    query,
    read_path,
    sample_initial,
    simulate_path,
    stationarity_check,
)
from catalytic_pam.lattice import LatticeSpec, torus_heat_kernel


def naive_value(path, x, s):
    vals = path.initial.values.copy()
    for t, a, b, va, vb in zip(path.times, path.site_a, path.site_b, path.value_a, path.value_b):
        if t > s:
            break
        vals[a] = va
        vals[b] = vb
    return int(vals[x])


@pytest.mark.parametrize(
    "kind, rho, msg",
    [("SEP", 1.5, "ρ ∈ (0,1) required for SEP"), ("SVM", 0.0, "ρ ∈ (0,1) required for SVM"), ("ISRW", -1.0, "ISRW")],
)
def test_density_range(kind, rho, msg):
    with pytest.raises(ValueError, match=re.escape(msg)):
        CatalystModel(kind, rho)


def test_burned_in_only_for_voter():
    with pytest.raises(ValueError):
        CatalystModel("SEP", 0.5, start="burned-in")


def test_sample_sparse_bernoulli():
    lat = LatticeSpec(2, 10)
    occupied = [sample_initial(CatalystModel("SEP", 0.001), lat, s).values.sum() for s in range(2000)]
    assert np.mean(occupied) == pytest.approx(0.1, abs=0.05)


def test_sample_poisson_mean():
    lat = LatticeSpec(1, 100)
    rng = np.random.default_rng(3)
    means = np.array([sample_initial(CatalystModel("ISRW", 2.0), lat, rng).values.mean() for _ in range(10_000)])
    se = means.std(ddof=1) / np.sqrt(len(means))
    assert abs(means.mean() - 2.0) < 3 * se


def test_sample_deterministic():
    lat = LatticeSpec(2, 7)
    m = CatalystModel("ISRW", 1.3)
    a, b = sample_initial(m, lat, 42), sample_initial(m, lat, 42)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.positions, b.positions)


def test_state_invariants():
    lat = LatticeSpec(1, 4)
    with pytest.raises(ValueError):
        CatalystState(Kind.SEP, lat, [0, 2, 0, 1])
    with pytest.raises(ValueError):
        CatalystState(Kind.ISRW, lat, [1, 0, 0, 0], [0, 1])


@pytest.mark.parametrize("kind, rho", [("SEP", 0.4), ("ISRW", 1.5)])
def test_conservation(kind, rho):
    lat = LatticeSpec(2, 6)
    m = CatalystModel(kind, rho)
    path = simulate_path(m, lat, 20.0, 5)
    assert path.final.values.sum() == path.initial.values.sum()
    if kind == "ISRW":
        assert len(path.final.positions) == path.initial.values.sum()
        assert np.array_equal(np.bincount(path.final.positions, minlength=lat.n_sites), path.final.values)


def test_voter_consensus_absorbing():
    lat = LatticeSpec(2, 5)
    m = CatalystModel("SVM", 0.5)
    state = CatalystState(Kind.SVM, lat, np.ones(lat.n_sites, dtype=np.int64))
    path = evolve(state, m, 10.0, 1)
    assert path.n_events > 0
    assert np.all(path.final.values == 1) and np.all(path.value_a == 1)


def test_event_times_increasing_and_replay():
    lat = LatticeSpec(1, 12)
    for kind, rho in (("SEP", 0.5), ("SVM", 0.5), ("ISRW", 1.0)):
        path = simulate_path(CatalystModel(kind, rho), lat, 15.0, 8)
        assert np.all(np.diff(path.times) > 0)
        assert np.array_equal(path.field_at(path.horizon), path.final.values)


def test_replay_determinism():
    lat = LatticeSpec(2, 5)
    m = CatalystModel("SEP", 0.3)
    a, b = simulate_path(m, lat, 5.0, 99), simulate_path(m, lat, 5.0, 99)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.site_a, b.site_a)


def test_events_touch_named_sites_only():
    lat = LatticeSpec(1, 10)
    for kind in ("SEP", "SVM"):
        path = simulate_path(CatalystModel(kind, 0.5), lat, 3.0, 4)
        prev = path.initial.values.copy()
        for k in range(path.n_events):
            cur = prev.copy()
            cur[path.site_a[k]] = path.value_a[k]
            cur[path.site_b[k]] = path.value_b[k]
            changed = set(np.flatnonzero(cur != prev).tolist())
            assert changed <= {int(path.site_a[k]), int(path.site_b[k])}
            if kind == "SEP":
                assert cur.sum() == prev.sum()
            prev = cur


def test_query_endpoints_and_bounds():
    lat = LatticeSpec(1, 8)
    path = simulate_path(CatalystModel("SEP", 0.5), lat, 4.0, 2)
    for x in range(lat.n_sites):
        assert query(path, x, 0.0) == path.initial.values[x]
        assert query(path, x, 4.0) == path.final.values[x]
    with pytest.raises(ValueError):
        query(path, 0, 4.5)
    with pytest.raises(ValueError):
        query(path, 0, -0.1)


@pytest.mark.parametrize("kind, rho", [("SEP", 0.5), ("SVM", 0.4), ("ISRW", 0.8)])
def test_query_matches_replay(kind, rho):
    lat = LatticeSpec(2, 6)
    path = simulate_path(CatalystModel(kind, rho), lat, 5.0, 17)
    rng = np.random.default_rng(0)
    xs = rng.integers(0, lat.n_sites, 10_000)
    ss = rng.uniform(0, 5.0, 10_000)
    # hit event times exactly as well
    ss[:50] = path.times[:50]
    assert all(query(path, int(x), float(s)) == naive_value(path, int(x), float(s)) for x, s in zip(xs, ss))


def test_occupation_matches_riemann_sum():
    lat = LatticeSpec(1, 6)
    path = simulate_path(CatalystModel("ISRW", 1.0), lat, 3.0, 21)
    s = np.linspace(0, 3.0, 3001)
    vals = np.array([naive_value(path, 2, si) for si in s])
    approx = vals.mean() * 3.0
    assert path.occupation(2, 3.0) == pytest.approx(approx, abs=0.02)


def test_stationarity_sep():
    rep = stationarity_check(CatalystModel("SEP", 0.5), LatticeSpec(1, 50), 10.0, 200, 1)
    assert abs(rep.z) < 3


def test_stationarity_isrw_poisson():
    rep = stationarity_check(CatalystModel("ISRW", 1.0), LatticeSpec(1, 50), 5.0, 200, 2)
    assert rep.chi2_pvalue > 0.01
    assert abs(rep.z) < 3


def test_stationarity_voter_mean_density():
    rep = stationarity_check(CatalystModel("SVM", 0.3), LatticeSpec(2, 8), 5.0, 300, 3)
    assert abs(rep.z) < 3


def test_stationarity_t0_exact():
    rep = stationarity_check(CatalystModel("SEP", 0.5), LatticeSpec(1, 20), 0.0, 100, 4)
    assert rep.mean == rep.initial_mean


def test_stationarity_needs_100():
    with pytest.raises(ValueError):
        stationarity_check(CatalystModel("SEP", 0.5), LatticeSpec(1, 20), 1.0, 50)


def test_tagged_particle_law():
    lat = LatticeSpec(1, 11)
    m = CatalystModel("ISRW", 1.0)
    start = np.zeros(lat.n_sites, dtype=np.int64)
    start[0] = 1
    state = CatalystState(Kind.ISRW, lat, start, [0])
    rng = np.random.default_rng(5)
    n = 4000
    ends = [evolve(state, m, 2.0, rng).final.positions[0] for _ in range(n)]
    observed = np.bincount(ends, minlength=lat.n_sites)
    expected = n * torus_heat_kernel(2.0, lat)
    assert stats.chisquare(observed, expected).pvalue > 0.01


def test_voter_consensus_soft_bound():
    lat = LatticeSpec(1, 6)
    m = CatalystModel("SVM", 0.5)
    absorbed = 0
    for seed in range(200):
        final = simulate_path(m, lat, 10.0 * 36, seed).final.values
        absorbed += final.min() == final.max()
    assert absorbed / 200 >= 0.99


def test_voter_burn_in_resets_clock():
    lat = LatticeSpec(1, 6)
    path = simulate_path(CatalystModel("SVM", 0.5, start="burned-in", burn_in=5.0), lat, 2.0, 3)
    assert path.start == 0.0 and path.horizon == 2.0


def test_dump_roundtrip():
    lat = LatticeSpec(2, 4)
    path = simulate_path(CatalystModel("ISRW", 1.0), lat, 3.0, 6)
    blob = dumps_path(path, rho=1.0, seed=6)
    back, header = read_path(io.BytesIO(blob))
    assert header["kind"] == "ISRW" and header["d"] == 2 and header["L"] == 4 and header["seed"] == 6
    assert np.array_equal(back.times, path.times)
    assert np.array_equal(back.final.values, path.final.values)
    assert dumps_path(back, rho=1.0, seed=6) == blob


def test_dump_rejects_garbage():
    with pytest.raises(ValueError):
        read_path(io.BytesIO(b"not a dump at all"))
