"""Exterior-value problems ``L u = f`` in D, ``u = g`` on the halo: exit times and escape
probabilities."""
from __future__ import annotations

import logging
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse import csgraph

from .errors import ConfigurationError, NonUniqueSolutionError, SolverError
from .geometry import Region
from .grid import DomainSpec, Field
from .operator import DiscreteOperator, assemble

log = logging.getLogger(__name__)

RTOL = 1e-10
MAXITER = 10_000
RESIDUAL_FACTOR = 1e-9
# matrices denser than this fraction are factorised as dense arrays
_DENSE_FRACTION = 0.1


def _leak_reachability(M: sp.csr_matrix, leak_rows: np.ndarray) -> np.ndarray:
    """Rows from which some leaking row is reachable through positive off-diagonals."""
    n = M.shape[0]
    reached = np.zeros(n, bool)
    if leak_rows.size == 0:
        return reached
    A = M.tocoo()
    off = (A.row != A.col) & (A.data > 0)
    # walk backwards: edge j -> i when row i couples to j; node n is a super-source
    src = np.concatenate([A.col[off], np.full(leak_rows.size, n)])
    dst = np.concatenate([A.row[off], leak_rows])
    G = sp.csr_matrix((np.ones(src.size), (src, dst)), shape=(n + 1, n + 1))
    order = csgraph.breadth_first_order(G, n, directed=True, return_predecessors=False)
    reached[order[order < n]] = True
    return reached


def check_uniqueness(op: DiscreteOperator) -> np.ndarray:
    """Interior positions whose rows can never reach killing or exterior coupling.

    For generator-signed operators those rows span a singular block (constants on a
    closed class are annihilated), so the exterior-value problem is not uniquely solvable.
    """
    leak = ((abs(op.B).sum(axis=1).A.ravel() > 0) | (np.abs(op.F).sum(axis=1) > 0)
            | (op.c != 0))
    reached = _leak_reachability(op.M, np.flatnonzero(leak))
    return np.flatnonzero(~reached)


def _residual(M, u, rhs):
    return float(np.max(np.abs(M @ u - rhs))) if rhs.size else 0.0


def solve_linear(M: sp.spmatrix, rhs: np.ndarray, dim: int = 1, tol_scale: Optional[float] = None):
    """Solve ``M u = rhs``; returns ``(u, info)``.

    Dense or sparse LU for 1D operators; for d >= 2 restarted GMRES
    preconditioned with an incomplete LU factorisation.
    """
    n = M.shape[0]
    bound = RESIDUAL_FACTOR * (1.0 + (np.max(np.abs(rhs)) if tol_scale is None else tol_scale))
    history = []
    if dim == 1 or n <= 400:
        if M.nnz > _DENSE_FRACTION * n * n:
            method = "dense-lu"
            A = M.toarray()
            lu = sla.lu_factor(A)
            u = sla.lu_solve(lu, rhs)
            r = _residual(M, u, rhs)
            history.append(r)
            if r > bound:
                u = u - sla.lu_solve(lu, M @ u - rhs)
                history.append(_residual(M, u, rhs))
        else:
            method = "sparse-lu"
            lu = spla.splu(M.tocsc())
            u = lu.solve(rhs)
            history.append(_residual(M, u, rhs))
            if history[-1] > bound:
                u = u - lu.solve(M @ u - rhs)
                history.append(_residual(M, u, rhs))
    else:
        method = "gmres-ilu"
        try:
            ilu = spla.spilu(M.tocsc(), drop_tol=1e-5, fill_factor=20)
            pre = spla.LinearOperator(M.shape, ilu.solve)
        except RuntimeError:
            pre = None
        res_cb = []
        u, status = spla.gmres(M, rhs, M=pre, rtol=RTOL, atol=0.0, restart=200, maxiter=MAXITER,
                               callback=lambda pr: res_cb.append(float(pr)),
                               callback_type="pr_norm")
        history = res_cb + [_residual(M, u, rhs)]
        if status != 0 and history[-1] > bound:
            raise SolverError(f"GMRES did not converge (status {status})", history)
    if not np.all(np.isfinite(u)) or history[-1] > bound:
        raise SolverError(f"residual {history[-1]:.3e} exceeds {bound:.3e}", history)
    return u, {"method": method, "residual": history[-1], "residual_bound": bound,
               "residual_history": history}


def extend_to_grid(op: DiscreteOperator, interior_values: np.ndarray, time=None, info=None,
                   ext_values=None, g_far=None) -> Field:
    """Full-grid field: interior values, exterior data on the halo, far-field value beyond."""
    dom = op.domain
    vals = np.empty(dom.grid.n_nodes)
    vals[dom.interior] = interior_values
    vals[dom.exterior] = op.g_ext if ext_values is None else ext_values
    gf = op.g_far if g_far is None else np.asarray(g_far, float)
    if dom.outside.size:
        pts = dom.grid.coordinates()[dom.outside]
        vals[dom.outside] = gf[dom.far_channel(pts)]
    meta = dict(info or {})
    meta["g_far"] = [float(v) for v in gf]
    return Field(dom.grid, vals, time, meta)


def solve_exterior_dirichlet(spec, op: Optional[DiscreteOperator] = None) -> Field:
    """Solve ``L u = f`` in D with ``u = g`` on the halo and ``g_far`` beyond it."""
    if op is None:
        op = assemble(spec)
    dom = op.domain
    f = spec.coeffs.f[dom.interior]
    bad = check_uniqueness(op)
    if bad.size:
        raise NonUniqueSolutionError(
            f"{bad.size} interior nodes never couple to the exterior or to killing "
            f"(first at node {int(dom.interior[bad[0]])}); the solution is not unique")
    rhs = f - op.q
    u, info = solve_linear(op.M, rhs, dom.grid.dim, tol_scale=float(np.max(np.abs(f), initial=0.0)))
    info.update(is_m_matrix=op.info.is_m_matrix, delta=op.info.delta, R=op.info.R,
                kernel=op.info.kernel_fingerprint, h=dom.grid.h)
    log.debug("exterior-value solve: %s, residual %.3e", info["method"], info["residual"])
    return extend_to_grid(op, u, info=info)


def _require_no_killing(spec, what):
    c = spec.coeffs.c[spec.domain.interior]
    if np.any(c != 0):
        raise ConfigurationError(f"{what} requires c = 0 in D (no killing)")


def mean_exit_time(spec) -> Field:
    """``L tau = -1`` in D, ``tau = 0`` outside."""
    _require_no_killing(spec, "the mean exit time")
    spec = spec.with_data(f=-1.0, g=0.0, g_far=0.0)
    tau = solve_exterior_dirichlet(spec)
    lo = float(tau.values.min())
    if lo < -1e-9:
        log.warning("exit time has negative values (min %.3e); operator M-matrix status %s",
                    lo, tau.info.get("is_m_matrix"))
    tau.info["quantity"] = "mean_exit_time"
    return tau


def _predicate(U) -> Callable:
    if isinstance(U, Region):
        return U.contains
    if callable(U):
        return lambda pts: np.asarray(U(pts), bool)
    raise ConfigurationError("U must be a Region or a predicate on points")


def far_field_indicator(domain: DomainSpec, U, n_dirs: int = 256) -> np.ndarray:
    """Value of ``1_U`` per far-field channel, sampled far beyond the halo.

    2D has a single channel and gets the fraction of sampled directions in U.
    """
    pred = _predicate(U)
    lo, hi = domain.D.bounding_box(domain.grid.dim)
    centre = 0.5 * (lo + hi)
    far = 10.0 * (domain.far_field_radius + float(np.max(hi - lo))) + 1.0
    if domain.grid.dim == 1:
        pts = np.array([[centre[0] - far], [centre[0] + far]])
        return pred(pts).astype(float)
    th = 2 * np.pi * (np.arange(n_dirs) + 0.5) / n_dirs
    pts = centre + far * np.stack([np.cos(th), np.sin(th)], axis=1)
    return np.array([float(np.mean(pred(pts)))])


def escape_probability(spec, U: Union[Region, Callable]) -> Field:
    """``L p = 0`` in D, ``p = 1_U`` outside D."""
    _require_no_killing(spec, "the escape probability")
    dom = spec.domain
    pred = _predicate(U)
    x = dom.grid.coordinates()
    if np.any(pred(x[dom.interior])):
        raise ConfigurationError("the target set U intersects D")
    g = pred(x).astype(float)
    g[dom.interior] = 0.0
    spec = spec.with_data(f=0.0, g=g, g_far=far_field_indicator(dom, U))
    p = solve_exterior_dirichlet(spec)
    inner = p.values[dom.interior]
    if inner.size and (inner.min() < -1e-9 or inner.max() > 1 + 1e-9):
        log.warning("escape probability left [0, 1]: [%.3e, %.3e]", inner.min(), inner.max())
    p.info["quantity"] = "escape_probability"
    return p
