import math

import numpy as np
import pytest
from scipy import special

from waldenfels import (CoefficientFields, ConfigurationError, Interval, NonUniqueSolutionError,
                        ProblemSpec, build_interval_domain, escape_probability,
                        make_alpha_stable, mean_exit_time, solve_exterior_dirichlet)


def _stable_spec(a0, b0, h, halo, alpha=1.0, **kw):
    _, dom = build_interval_domain(a0, b0, h, halo)
    return ProblemSpec(dom, CoefficientFields.build(dom, **kw), make_alpha_stable(alpha))


def test_constant_exterior_data_reproduced():
    spec = _stable_spec(-1.0, 1.0, 1.0 / 32, 2.0, a=0.1, g=5.0, g_far=5.0)
    u = solve_exterior_dirichlet(spec)
    np.testing.assert_allclose(u.values, 5.0, rtol=1e-10)


def test_exit_time_zero_outside():
    spec = _stable_spec(-1.0, 1.0, 1.0 / 32, 2.0)
    tau = mean_exit_time(spec)
    dom = spec.domain
    assert np.all(tau.values[dom.exterior] == 0.0)
    assert np.all(tau.values[dom.interior] > 0.0)
    assert tau.info["residual"] <= tau.info["residual_bound"]


def test_exit_time_against_closed_form():
    # E tau(x) for -(-Delta)^{alpha/2} on (-1, 1)
    alpha = 1.0
    spec = _stable_spec(-1.0, 1.0, 1.0 / 64, 4.0, alpha)
    tau = mean_exit_time(spec)
    const = math.sqrt(math.pi) / (2 ** alpha * special.gamma(1 + alpha / 2)
                                  * special.gamma(0.5 + alpha / 2))
    for x in (0.0, 0.5):
        exact = const * (1 - x * x) ** (alpha / 2)
        assert tau.at([x]) == pytest.approx(exact, rel=0.01)


def test_exit_time_scaling():
    alpha = 1.5
    small = mean_exit_time(_stable_spec(-1.0, 1.0, 1.0 / 32, 2.0, alpha))
    large = mean_exit_time(_stable_spec(-2.0, 2.0, 1.0 / 16, 4.0, alpha))
    for x in (0.0, 0.25, 0.5, 0.75):
        assert large.at([2 * x]) == pytest.approx(2 ** alpha * small.at([x]), rel=1e-8)


def test_nested_domains_ordered():
    inner = mean_exit_time(_stable_spec(-1.0, 1.0, 1.0 / 32, 4.0, a=0.2))
    outer = mean_exit_time(_stable_spec(-2.0, 2.0, 1.0 / 32, 4.0, a=0.2))
    x = np.arange(-31, 32, 4) / 32.0
    assert all(outer.at([v]) >= inner.at([v]) for v in x)


def test_escape_to_whole_complement_is_certain():
    spec = _stable_spec(-1.0, 1.0, 1.0 / 32, 2.0)
    p = escape_probability(spec, lambda pts: ~Interval(-1.0, 1.0).contains_open(pts))
    np.testing.assert_allclose(p.values, 1.0, rtol=1e-10)


def test_escape_rejects_killing_and_overlap():
    killed = _stable_spec(-1.0, 1.0, 1.0 / 32, 2.0, c=-1.0)
    with pytest.raises(ConfigurationError):
        escape_probability(killed, Interval(1.0, np.inf))
    with pytest.raises(ConfigurationError):
        mean_exit_time(killed)
    spec = _stable_spec(-1.0, 1.0, 1.0 / 32, 2.0)
    with pytest.raises(ConfigurationError):
        escape_probability(spec, Interval(0.5, np.inf))


def test_isolated_rows_detected():
    _, dom = build_interval_domain(-1.0, 1.0, 1.0 / 8, 0.5)
    spec = ProblemSpec(dom, CoefficientFields.build(dom, f=1.0))
    with pytest.raises(NonUniqueSolutionError):
        solve_exterior_dirichlet(spec)
