import numpy as np
import pytest

from waldenfels import (CoefficientFields, Field, ProblemSpec, QuadratureError, apply,
                        assemble, assemble_local, assemble_nonlocal, build_interval_domain,
                        field_from_function, finite_measure, make_alpha_stable, verify_m_matrix)
from waldenfels.operator import apply_interior


def _spec(h=1.0 / 16, halo=1.0, kernel=None, a=0.0, b=0.0, c=0.0, a0=0.0, b0=1.0, **kw):
    _, dom = build_interval_domain(a0, b0, h, halo)
    return ProblemSpec(dom, CoefficientFields.build(dom, a=a, b=b, c=c, **kw), kernel)


def test_laplacian_stencil():
    h = 0.125
    spec = _spec(h=h, halo=0.25, a=0.5)
    M = assemble(spec).M.toarray()
    i = 3
    np.testing.assert_allclose(M[i, i - 1:i + 2], [0.5 / h ** 2, -1.0 / h ** 2, 0.5 / h ** 2],
                               rtol=1e-14)


def test_constants_annihilated():
    spec = _spec(kernel=make_alpha_stable(1.2), a=0.3, b=0.7, g=1.0, g_far=1.0)
    op = assemble(spec)
    u = Field(spec.grid, np.ones(spec.grid.n_nodes))
    np.testing.assert_allclose(apply_interior(op, u, g_far=[1.0, 1.0]), 0.0, atol=1e-10)


def test_upwind_drift_on_linear_function():
    spec = _spec(b=1.0)
    op = assemble(spec)
    assert op.info.upwind_nodes == op.n
    u = field_from_function(spec.grid, lambda x: x[:, 0])
    np.testing.assert_allclose(apply_interior(op, u), 1.0, rtol=1e-12)


def test_single_large_jump_row():
    h = 0.25
    spec = _spec(h=h, halo=2.5, kernel=finite_measure([[2.0]], [3.0]))
    op = assemble(spec)
    D = op.dense()
    dom = spec.domain
    x = spec.grid.coordinates()[:, 0]
    for r in range(op.n):
        nonzero = np.flatnonzero(D[r])
        assert D[r, r] == pytest.approx(-3.0)
        assert len(nonzero) == 2
        col = [c for c in nonzero if c != r][0]
        assert D[r, col] == pytest.approx(3.0)
        # the coupled column is the halo node at x + 2
        target = x[dom.interior[r]] + 2.0
        assert x[dom.exterior[col - op.n]] == pytest.approx(target)


def test_row_sums_equal_killing_rate():
    spec = _spec(kernel=make_alpha_stable(1.0), a=0.5, b=0.3, c=lambda x: -1.0 - x[:, 0] ** 2)
    op = assemble(spec)
    np.testing.assert_allclose(op.row_sums(), spec.coeffs.c[spec.domain.interior], atol=1e-10)
    assert verify_m_matrix(op).status is True


def test_linearity():
    spec = _spec(kernel=make_alpha_stable(0.8), a=0.2, b=-0.4)
    op = assemble(spec)
    rng = np.random.default_rng(1)
    n = spec.grid.n_nodes
    u, v = Field(spec.grid, rng.normal(size=n)), Field(spec.grid, rng.normal(size=n))
    w = Field(spec.grid, 2.0 * u.values - 3.0 * v.values)
    gf = np.zeros(2)
    lhs = apply_interior(op, w, gf)
    rhs = 2.0 * apply_interior(op, u, gf) - 3.0 * apply_interior(op, v, gf)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * (1 + np.max(np.abs(lhs)))


def test_symmetric_kernel_gives_symmetric_matrix():
    spec = _spec(h=1.0 / 33, kernel=make_alpha_stable(1.5), a=0.25)
    M = assemble(spec).M.toarray()
    assert M.shape == (32, 32)
    np.testing.assert_allclose(M, M.T, atol=1e-10 * np.abs(M).max())


def test_pure_local_matches_local_assembly():
    spec = _spec(a=0.5, b=0.2, c=-1.0)
    full = assemble(spec)
    loc = assemble_local(spec.coeffs, spec.domain)
    np.testing.assert_array_equal(full.M.toarray(), loc.M.toarray())


def test_central_drift_breaks_sign_structure():
    _, dom = build_interval_domain(-5.0, 5.0, 1.0, 1.0)
    spec = ProblemSpec(dom, CoefficientFields.build(dom, a=0.5, b=10.0), None,
                       drift_scheme="central")
    rep = verify_m_matrix(assemble(spec))
    assert rep.status is False
    assert rep.violation["check"] == "offdiag_M"
    assert rep.violation["value"] == pytest.approx(0.5 - 5.0)


def test_zero_operator():
    spec = _spec()
    op = assemble(spec)
    assert op.M.nnz == 0 or np.all(op.M.data == 0)
    u = Field(spec.grid, np.arange(spec.grid.n_nodes, dtype=float))
    np.testing.assert_array_equal(apply(op, u).values, 0.0)


def test_delta_below_half_spacing_rejected():
    spec = _spec()
    with pytest.raises(QuadratureError):
        assemble_nonlocal(make_alpha_stable(1.0), spec.coeffs, spec.domain, delta=spec.grid.h / 4)
