import math

import numpy as np
import pytest

from waldenfels import (CoefficientFields, ConfigurationError, DomainError, Interval, PathConfig,
                        ProblemSpec, SDEModel, TimeGrid, Whole, build_interval_domain,
                        density_histogram, discrete_delta, estimate_escape_probability,
                        estimate_exit_time, make_alpha_stable, sample_stable_increment, solve_fpe,
                        simulate_until_exit)


def _cfg(n=2000, dt=1e-3, horizon=20.0, seed=7, **kw):
    return PathConfig(dt=dt, horizon=horizon, n_paths=n, seed=seed, **kw)


def test_stable_samples_symmetric():
    rng = np.random.default_rng(3)
    n = 100_000
    for alpha in (0.6, 1.0, 1.7):
        x = sample_stable_increment(alpha, 0.1, rng, size=n)
        assert abs(np.mean(np.sign(x))) < 4.0 / math.sqrt(n)
    y = sample_stable_increment(1.5, 0.1, rng, dim=2, size=n)
    assert y.shape == (n, 2)
    assert abs(np.mean(np.sign(y[:, 1]))) < 4.0 / math.sqrt(n)


@pytest.mark.parametrize("alpha", [0.0, 2.0, 3.0])
def test_stable_alpha_range(alpha):
    with pytest.raises(DomainError):
        sample_stable_increment(alpha, 0.1, np.random.default_rng(0))


def test_pure_drift_exit():
    dt = 0.01
    model = SDEModel(1, Interval(-1.0, 1.0), drift=1.0)
    t, pos, censored = simulate_until_exit(model, [0.0], _cfg(dt=dt, horizon=5.0))
    assert not censored
    assert abs(t - 1.0) <= dt + 1e-12
    assert pos[0] >= 1.0 - 1e-12


def test_whole_space_is_always_censored():
    model = SDEModel(1, Whole(), kernel=make_alpha_stable(1.0))
    est = estimate_exit_time(model, [0.0], _cfg(n=200, dt=0.01, horizon=1.0))
    assert est.censored_fraction == 1.0
    assert est.estimate == pytest.approx(1.0)
    assert "censored>=1%" in est.flags


def test_exit_time_smaller_near_boundary():
    model = SDEModel(1, Interval(-1.0, 1.0), kernel=make_alpha_stable(1.0))
    centre = estimate_exit_time(model, [0.0], _cfg())
    edge = estimate_exit_time(model, [0.99], _cfg())
    assert edge.estimate + 3 * edge.stderr < centre.estimate - 3 * centre.stderr


def test_escape_to_complement_is_certain():
    model = SDEModel(1, Interval(-1.0, 1.0), kernel=make_alpha_stable(1.0))
    est = estimate_escape_probability(model, [0.3], lambda p: np.abs(p[:, 0]) >= 1.0, _cfg())
    assert est.estimate == 1.0


def test_symmetric_escape_is_one_half():
    n = 20_000
    model = SDEModel(1, Interval(-1.0, 1.0), kernel=make_alpha_stable(1.2))
    est = estimate_escape_probability(model, [0.0], Interval(1.0, np.inf), _cfg(n=n, dt=1e-2))
    assert abs(est.estimate - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_histogram_at_time_zero():
    model = SDEModel(1, Interval(-1.0, 1.0), kernel=make_alpha_stable(1.0))
    hist = density_histogram(model, [0.1], 0.0, _cfg(n=500), bins=20)
    k = int(np.argmax(hist.density))
    assert hist.edges[0][k] <= 0.1 < hist.edges[0][k + 1]
    assert hist.mass == pytest.approx(1.0)
    assert np.count_nonzero(hist.density) == 1


def test_histogram_symmetric():
    model = SDEModel(1, Interval(-2.0, 2.0), a=np.array([[0.5]]))
    hist = density_histogram(model, [0.0], 0.5, _cfg(n=20_000), bins=8)
    d = hist.density
    se = np.sqrt(d / (20_000 * 0.5))
    assert np.all(np.abs(d - d[::-1]) <= 4 * np.sqrt(2) * se + 1e-12)


def test_histogram_agrees_with_forward_solver():
    a, T, n = 0.5, 0.5, 20_000
    _, dom = build_interval_domain(-2.0, 2.0, 1.0 / 32, 0.5)
    spec = ProblemSpec(dom, CoefficientFields.build(dom, a=a))
    p = solve_fpe(spec, discrete_delta(spec.grid, [0.0]), TimeGrid(T, 1e-3), snapshots=[]).final
    model = SDEModel(1, Interval(-2.0, 2.0), a=np.array([[a]]))
    edges = np.linspace(-2.0, 2.0, 9)
    hist = density_histogram(model, [0.0], T, _cfg(n=n, dt=1e-3), bins=edges)
    x = spec.grid.coordinates()[:, 0]
    h = spec.grid.h
    # bin averages of the nodal density (interior nodes only; boundary nodes carry zero)
    pde = np.array([np.sum(p.values[(x > lo) & (x < hi)]) * h / (hi - lo)
                    for lo, hi in zip(edges[:-1], edges[1:])])
    se = np.sqrt(hist.density / (n * np.diff(edges)))
    assert np.all(np.abs(hist.density - pde) <= 0.05 + 3 * se)


def test_minimum_path_count():
    with pytest.raises(ConfigurationError):
        PathConfig(dt=1e-3, horizon=1.0, n_paths=99, seed=0)
