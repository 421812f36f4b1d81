import numpy as np
from hypothesis import given, settings, strategies as st

from waldenfels import (CoefficientFields, Field, ProblemSpec, assemble, build_interval_domain,
                        make_alpha_stable, solve_exterior_dirichlet)
from waldenfels.operator import apply_interior

alphas = st.floats(0.2, 1.9)
coeff = st.floats(0.0, 1.0)
drift = st.floats(-2.0, 2.0)
cells = st.integers(6, 24)


def _spec(n, alpha, a, b, **kw):
    h = 1.0 / n
    _, dom = build_interval_domain(0.0, 1.0, h, 4 * h)
    return ProblemSpec(dom, CoefficientFields.build(dom, a=a, b=b, **kw), make_alpha_stable(alpha))


@settings(max_examples=25, deadline=None)
@given(cells, alphas, coeff, drift, st.floats(-3, 3), st.integers(0, 2 ** 31))
def test_linearity(n, alpha, a, b, lam, seed):
    op = assemble(_spec(n, alpha, a, b))
    grid = op.domain.grid
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=grid.n_nodes), rng.normal(size=grid.n_nodes)
    gf = np.zeros(2)
    lhs = apply_interior(op, Field(grid, u + lam * v), gf)
    rhs = apply_interior(op, Field(grid, u), gf) + lam * apply_interior(op, Field(grid, v), gf)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * (1 + np.max(np.abs(lhs)))


@settings(max_examples=25, deadline=None)
@given(cells, alphas, coeff, drift, st.floats(-5, 5))
def test_constants_annihilated(n, alpha, a, b, k):
    op = assemble(_spec(n, alpha, a, b))
    grid = op.domain.grid
    Lu = apply_interior(op, Field(grid, np.full(grid.n_nodes, k)), [k, k])
    scale = np.abs(op.M).sum(axis=1).A.ravel() * (1 + abs(k))
    assert np.all(np.abs(Lu) <= 1e-12 * scale + 1e-12)


@settings(max_examples=25, deadline=None)
@given(cells, alphas, coeff)
def test_symmetric_without_drift(n, alpha, a):
    M = assemble(_spec(n, alpha, a, 0.0)).M.toarray()
    assert np.allclose(M, M.T, atol=1e-10 * np.abs(M).max())


@settings(max_examples=25, deadline=None)
@given(cells, alphas, coeff, drift, st.integers(0, 2 ** 31))
def test_comparison(n, alpha, a, b, seed):
    rng = np.random.default_rng(seed)
    spec = _spec(n, alpha, a, b)
    grid = spec.grid
    f1 = -np.abs(rng.normal(size=grid.n_nodes))
    g = np.abs(rng.normal(size=grid.n_nodes))
    # L u1 = f1 <= 0 = L u2 with u1 = g >= 0 = u2 outside: u1 >= u2 = 0
    u1 = solve_exterior_dirichlet(spec.with_data(f=f1, g=g, g_far=1.0))
    assert u1.values[spec.domain.interior].min() >= -1e-12
