import math

import numpy as np
import pytest
from scipy import integrate, special

from waldenfels import DomainError, Interval, Whole, clip_support, finite_measure, \
    make_alpha_stable, tabulated_density
from waldenfels.kernel import (IntegrabilityCertificate, check_levy_moment, directional_tail_masses,
                               first_moment, small_jump_second_moment, stable_normalization,
                               tail_mass, truncated_moment)


def test_cauchy_normalization():
    assert stable_normalization(1.0, 1) == pytest.approx(1.0 / math.pi, rel=1e-14)


@pytest.mark.parametrize("alpha", [0.0, 2.0, -1.0, 2.5])
def test_alpha_out_of_range(alpha):
    with pytest.raises(DomainError):
        make_alpha_stable(alpha)


def test_small_jump_second_moment_closed_form():
    k = make_alpha_stable(1.0)
    # 2 * (1/pi) * int_0^1 z^2 z^{-2} dz
    assert small_jump_second_moment(k, 1.0)[0, 0] == pytest.approx(2.0 / math.pi, rel=1e-10)


def test_small_jump_second_moment_monotone_in_delta():
    k = make_alpha_stable(1.5)
    vals = [small_jump_second_moment(k, d)[0, 0] for d in (0.1, 0.2, 0.5, 1.0, 2.0)]
    assert np.all(np.diff(vals) > 0)


def test_finite_jump_outside_small_zone():
    k = finite_measure([[2.0]], [1.0])
    assert small_jump_second_moment(k, 1.0)[0, 0] == 0.0
    assert tail_mass(k, 1.0) == 1.0
    assert tail_mass(k, 3.0) == 0.0


def test_tail_mass_closed_form_and_scaling():
    k = make_alpha_stable(1.0)
    assert tail_mass(k, 1.0) == pytest.approx(2.0 / math.pi, rel=1e-10)
    assert tail_mass(k, 10.0) / tail_mass(k, 1.0) == pytest.approx(0.1, rel=1e-10)


def test_directional_tails_symmetric():
    left, right = directional_tail_masses(make_alpha_stable(0.7), 2.0)
    assert left == pytest.approx(right, rel=1e-12)
    assert left + right == pytest.approx(tail_mass(make_alpha_stable(0.7), 2.0), rel=1e-10)


def test_odd_moment_vanishes():
    k = make_alpha_stable(1.2)
    assert abs(first_moment(k, 0.5, 3.0)[0]) < 1e-12


def test_levy_moment_check():
    assert check_levy_moment(make_alpha_stable(1.0)).ok is True
    k = finite_measure([[0.5], [-2.0]], [3.0, 1.0])
    chk = check_levy_moment(k)
    assert chk.ok is True
    assert chk.value == pytest.approx(3.0 * 0.25 + 1.0 * 1.0)


def test_nonintegrable_density_detected():
    dens = lambda z: np.abs(z) ** -3.5
    bad = tabulated_density(dens, certificate=IntegrabilityCertificate(2.5, 2.5))
    assert check_levy_moment(bad).ok is False
    # without a certificate the truncated moment grows as the cut-off shrinks
    raw = tabulated_density(dens)
    assert check_levy_moment(raw).ok is None
    vals = [truncated_moment(raw, eps) for eps in (1e-1, 1e-2, 1e-3)]
    # integrand z^{-1.5} near 0: growth like eps^{-1/2}
    assert vals[1] > 3 * vals[0] and vals[2] > 3 * vals[1]


def test_clip_support():
    k = make_alpha_stable(1.0)
    assert isinstance(clip_support(k, Whole()).mask, Whole) or \
        tail_mass(clip_support(k, Whole()), 1.0) == pytest.approx(tail_mass(k, 1.0))
    half = clip_support(k, Interval(0.0, np.inf))
    assert tail_mass(half, 1.0) == pytest.approx(0.5 * tail_mass(k, 1.0), rel=1e-8)
    twice = clip_support(half, Interval(0.0, np.inf))
    assert tail_mass(twice, 1.0) == pytest.approx(tail_mass(half, 1.0), rel=1e-12)


def test_finite_measure_rejects_bad_input():
    with pytest.raises(DomainError):
        finite_measure([[0.0]], [1.0])
    with pytest.raises(DomainError):
        finite_measure([[1.0]], [-1.0])


def test_symbol_2d_by_quadrature():
    # int (1 - cos(xi . z)) nu(dz) must equal |xi|^alpha
    alpha = 0.5
    c = stable_normalization(alpha, 2)
    L = 2000.0
    f = lambda r: r ** (-1.0 - alpha) * (1.0 - special.j0(r))
    near, _ = integrate.quad(f, 0.0, 1.0, limit=200)
    far, _ = integrate.quad(f, 1.0, L, limit=4000)
    tail = L ** -alpha / alpha
    assert 2 * math.pi * c * (near + far + tail) == pytest.approx(1.0, abs=1e-4)
    k = make_alpha_stable(alpha, dim=2)
    assert tail_mass(k, 1.0) == pytest.approx(2 * math.pi * c / alpha, rel=1e-12)
