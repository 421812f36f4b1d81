"""Finite-difference / quadrature discretisation of ``L = A + K`` over the interior nodes.

Every assembled operator is affine in the node values::

    (L u)(x_i) = (M u_D)_i + (B u_{E \\ D})_i + (F g_far)_i

where ``M`` couples interior nodes, ``B`` couples exterior-data nodes and ``F``
collects everything that lands beyond the halo (far-field channels: left/right
in 1D, a single channel in 2D).

The local part uses second-order central differences; the drift is central
where the mesh Peclet condition ``|b_j| h <= 2 a_jj`` holds and first-order
upwind elsewhere.  The jump part is split into three zones:

1. ``|z| < delta``: replaced by ``1/2 tr[Sigma_delta grad^2 u]`` with
   ``Sigma_delta`` the small-jump second moment;
2. ``delta <= |z| <= R``: grid-aligned cells, one node per cell.  A cell's
   weight is its second moment divided by ``|z_k|^2`` so that the rule is exact
   on the quadratic part of ``u(x+z) - u(x)``; weights stay nonnegative;
3. ``|z| > R``: ``(g_far - u(x)) nu(|z| > R)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import (ConfigurationError, QuadratureError, ShapeMismatchError,
                     UnsupportedKernelError)
from .geometry import Whole
from .grid import DomainSpec, Field, NodeClass, evaluate
from .kernel import (KernelKind, LevyKernel, directional_tail_masses, moment_1d,
                     small_jump_second_moment, tail_mass)


@dataclass(eq=False)
class CoefficientFields:
    """Nodal coefficients of ``L`` and the data of the exterior-value problem."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    f: np.ndarray
    g: np.ndarray
    g_far: np.ndarray
    divergence: Optional[np.ndarray] = None
    uniformly_elliptic: bool = False

    @classmethod
    def build(cls, domain: DomainSpec, a=0.0, b=0.0, c=0.0, f=0.0, g=0.0, g_far=0.0,
              divergence=None, uniformly_elliptic=False) -> "CoefficientFields":
        """Accepts scalars, arrays, or callables of the ``(n, d)`` node coordinates.

        ``a`` may be a scalar field (meaning ``a I``) or a matrix field; ``b`` a
        vector or vector field; ``g_far`` a scalar or, in 1D, ``(left, right)``.
        """
        grid = domain.grid
        n, d = grid.n_nodes, grid.dim
        aa = evaluate(grid, a) if callable(a) else np.asarray(a, dtype=float)
        if aa.ndim == 0 or aa.shape == (n,):
            aa = np.broadcast_to(aa, (n,))[:, None, None] * np.eye(d)
        elif aa.shape == (d, d):
            aa = np.broadcast_to(aa, (n, d, d)).copy()
        aa = np.asarray(aa, dtype=float).reshape(n, d, d)
        bb = evaluate(grid, b) if callable(b) else np.asarray(b, dtype=float)
        if bb.ndim == 0:
            bb = np.full((n, d), float(bb))
        elif bb.shape == (d,):
            bb = np.broadcast_to(bb, (n, d)).copy()
        bb = np.asarray(bb, dtype=float).reshape(n, d)
        div = None if divergence is None else evaluate(grid, divergence)
        gf = np.atleast_1d(np.asarray(g_far, dtype=float))
        if gf.size == 1:
            gf = np.full(domain.n_far_channels, float(gf[0]))
        if gf.size != domain.n_far_channels:
            raise ConfigurationError("g_far must be a scalar or one value per far-field channel")
        out = cls(aa, bb, evaluate(grid, c), evaluate(grid, f), evaluate(grid, g), gf, div,
                  bool(uniformly_elliptic))
        out.validate(domain)
        return out

    def validate(self, domain: DomainSpec) -> None:
        arrays = [self.a, self.b, self.c, self.f, self.g, self.g_far]
        if any(not np.all(np.isfinite(x)) for x in arrays):
            raise ConfigurationError("coefficients must be finite on E-bar")
        if not np.allclose(self.a, np.swapaxes(self.a, 1, 2), atol=1e-13, rtol=0):
            raise ConfigurationError("diffusion matrix a must be symmetric")
        eig = np.linalg.eigvalsh(self.a[domain.interior])
        if eig.size and eig.min() < -1e-12:
            raise ConfigurationError("diffusion matrix a must be positive semidefinite in D")
        if self.uniformly_elliptic and not (eig.size and eig.min() > 0):
            raise ConfigurationError("declared uniformly elliptic but min eigenvalue of a is 0")

    def ellipticity(self, domain: DomainSpec) -> float:
        """Smallest eigenvalue of ``a`` over the interior nodes."""
        eig = np.linalg.eigvalsh(self.a[domain.interior])
        return float(eig.min()) if eig.size else 0.0


@dataclass
class OperatorInfo:
    is_m_matrix: Optional[bool] = None
    gamma_estimate: float = 0.0
    delta: Optional[float] = None
    R: Optional[float] = None
    kernel_fingerprint: Optional[str] = None
    upwind_nodes: int = 0
    truncation_radius: Optional[float] = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


@dataclass(eq=False)
class DiscreteOperator:
    domain: DomainSpec
    M: sp.csr_matrix
    B: sp.csr_matrix
    F: np.ndarray
    g_ext: np.ndarray
    g_far: np.ndarray
    c: np.ndarray
    info: OperatorInfo = field(default_factory=OperatorInfo)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def load(self, ext_values=None, g_far=None) -> np.ndarray:
        """Exterior load ``q = B g + F g_far``."""
        g = self.g_ext if ext_values is None else np.asarray(ext_values, dtype=float)
        gf = self.g_far if g_far is None else np.asarray(g_far, dtype=float)
        return self.B @ g + self.F @ gf

    @property
    def q(self) -> np.ndarray:
        return self.load()

    def row_sums(self) -> np.ndarray:
        """Row sums including exterior coupling; equals ``c`` for a consistent scheme."""
        return (np.asarray(self.M.sum(axis=1)).ravel() + np.asarray(self.B.sum(axis=1)).ravel()
                + self.F.sum(axis=1))

    def __add__(self, other: "DiscreteOperator") -> "DiscreteOperator":
        if other.domain is not self.domain:
            raise ShapeMismatchError("operators live on different domains")
        info = OperatorInfo(
            gamma_estimate=self.info.gamma_estimate,
            delta=self.info.delta if self.info.delta is not None else other.info.delta,
            R=self.info.R if self.info.R is not None else other.info.R,
            kernel_fingerprint=self.info.kernel_fingerprint or other.info.kernel_fingerprint,
            upwind_nodes=self.info.upwind_nodes + other.info.upwind_nodes,
            truncation_radius=self.info.truncation_radius or other.info.truncation_radius,
            notes=self.info.notes + other.info.notes)
        return DiscreteOperator(self.domain, (self.M + other.M).tocsr(), (self.B + other.B).tocsr(),
                                self.F + other.F, self.g_ext, self.g_far, self.c + other.c, info)

    def dense(self) -> np.ndarray:
        """``[M | B | F]`` as one dense array (debugging, small grids)."""
        return np.hstack([self.M.toarray(), self.B.toarray(), self.F])

    def triplets(self):
        """Yield ``(block, row, col, value)`` for every stored entry."""
        for name, mat in (("M", self.M), ("B", self.B), ("F", sp.csr_matrix(self.F))):
            coo = mat.tocoo()
            for r, col, v in zip(coo.row, coo.col, coo.data):
                yield name, int(r), int(col), float(v)


# ---------------------------------------------------------------------------
# triplet plumbing
# ---------------------------------------------------------------------------

_DENSE_BLOCK = 2 ** 22


class _Triplets:
    """Entries keyed by interior row and target; targets < 0 encode far channels.

    Columns live in one space ``[interior | exterior | far channels]`` that is
    split into ``M``, ``B`` and ``F`` at the end.
    """

    def __init__(self, domain: DomainSpec):
        self.domain = domain
        self.n_int = domain.n_interior
        self.n_ext = domain.exterior.size
        self.ncols = self.n_int + self.n_ext + domain.n_far_channels
        self.rows, self.cols, self.vals = [], [], []
        self.blocks = []

    def _colmap(self):
        """Column of every grid node (far channel column for nodes beyond E)."""
        if getattr(self, "_cmap", None) is None:
            dom = self.domain
            lab = dom.labels
            cmap = dom.position(np.arange(dom.grid.n_nodes))
            cmap = np.where(lab == NodeClass.EXTERIOR, cmap + self.n_int, cmap)
            out = np.flatnonzero(lab == NodeClass.OUTSIDE)
            if out.size:
                cmap[out] = self.n_int + self.n_ext + dom.far_channel(_node_coords(dom.grid, out))
            self._cmap = cmap.astype(np.int64)
        return self._cmap

    def _columns(self, tgt):
        cmap = self._colmap()
        return np.where(tgt >= 0, cmap[np.maximum(tgt, 0)], self.n_int + self.n_ext - 1 - tgt)

    def add(self, rows, targets, vals):
        rows, targets, vals = np.broadcast_arrays(np.asarray(rows), np.asarray(targets),
                                                  np.asarray(vals, dtype=float))
        keep = vals != 0
        self.rows.append(rows[keep].ravel())
        self.cols.append(self._columns(targets[keep].ravel()))
        self.vals.append(vals[keep].ravel())

    def add_dense_rows(self, r0, targets, vals):
        """Rows ``r0, r0 + 1, ...`` with many entries each, accumulated densely."""
        nr = targets.shape[0]
        col = self._columns(targets.ravel())
        local = np.repeat(np.arange(nr), targets.shape[1]) * self.ncols + col
        dense = np.bincount(local, weights=np.asarray(vals, float).ravel(),
                            minlength=nr * self.ncols).reshape(nr, self.ncols)
        nz = dense != 0
        indptr = np.concatenate([[0], np.cumsum(nz.sum(axis=1))])
        self.blocks.append((r0, sp.csr_matrix((dense[nz], np.nonzero(nz)[1], indptr),
                                              shape=dense.shape)))

    def build(self, g, g_far):
        dom = self.domain
        shape = (self.n_int, self.ncols)
        if self.rows:
            rows = np.concatenate(self.rows)
            col = np.concatenate(self.cols)
            vals = np.concatenate(self.vals)
        else:
            rows = col = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
        A = sp.csr_matrix((vals, (rows, col)), shape=shape)
        A.sum_duplicates()
        if self.blocks:
            blocks = sorted(self.blocks, key=lambda b: b[0])
            starts = [b[0] for b in blocks]
            ends = starts[1:] + [shape[0]]
            if any(b[1].shape[0] != e - s for b, s, e in zip(blocks, starts, ends)) or starts[0]:
                raise AssertionError("dense row blocks must tile the interior rows")
            A = A + sp.vstack([b[1] for b in blocks], format="csr")
        n_int, n_ext = self.n_int, self.n_ext
        M = A[:, :n_int].tocsr()
        B = A[:, n_int:n_int + n_ext].tocsr()
        F = A[:, n_int + n_ext:].toarray()
        return M, B, F, g[dom.exterior].copy(), np.asarray(g_far, dtype=float).copy()


def _node_coords(grid, flat):
    multi = np.stack(grid.multi_index(flat), axis=-1)
    return np.array(grid.origin) + grid.h * multi


def _targets(domain: DomainSpec, rows_multi: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Flat target index of ``node + offset`` (lattice units), or ``-1 - channel`` when the
    target leaves the grid."""
    grid = domain.grid
    if grid.dim == 1:
        t = rows_multi[:, 0][:, None] + offsets[:, 0][None, :]
        inside = (t >= 0) & (t < grid.shape[0])
        if inside.all():
            return t.astype(np.int64)
        flat = t.astype(np.int64)
        coords = grid.origin[0] + grid.h * t[~inside]
        flat[~inside] = -1 - domain.far_channel(coords[:, None])
        return flat
    tm = rows_multi[:, None, :] + offsets[None, :, :]
    shape = np.array(grid.shape)
    inside = np.all((tm >= 0) & (tm < shape), axis=2)
    flat = np.zeros(tm.shape[:2], dtype=np.int64)
    if inside.any():
        flat[inside] = np.ravel_multi_index(tuple(tm[inside].T), grid.shape)
    if (~inside).any():
        coords = np.array(grid.origin) + grid.h * tm[~inside]
        flat[~inside] = -1 - domain.far_channel(coords)
    return flat


def _interior_multi(domain):
    return np.stack(domain.grid.multi_index(domain.interior), axis=1)


def _local_triplets(trip: _Triplets, domain, a, b, c, peclet_a, scheme="auto"):
    """Central second differences, cross stencil for mixed terms, central/upwind drift.

    ``a`` is ``(n_int, d, d)``, ``b`` ``(n_int, d)``, ``c`` ``(n_int,)`` and
    ``peclet_a`` ``(n_int, d)`` the diffusion used in the Peclet test.
    Returns the number of (node, axis) pairs discretised by upwinding.
    """
    d, h = domain.grid.dim, domain.grid.h
    n = domain.n_interior
    rows = np.arange(n)
    multi = _interior_multi(domain)
    diag_flat = domain.interior
    diag = c.astype(float).copy()
    upwinded = 0
    for j in range(d):
        e = np.zeros((1, d), dtype=np.int64)
        e[0, j] = 1
        plus = _targets(domain, multi, e)[:, 0]
        minus = _targets(domain, multi, -e)[:, 0]
        ajj = a[:, j, j]
        bj = b[:, j]
        if scheme == "central":
            central = np.ones(n, bool)
        elif scheme == "upwind":
            central = bj == 0
        else:
            central = np.abs(bj) * h <= 2.0 * peclet_a[:, j] + 1e-300
        upwinded += int(np.count_nonzero(~central & (bj != 0)))
        w_plus = ajj / h ** 2 + np.where(central, bj / (2 * h), np.maximum(bj, 0.0) / h)
        w_minus = ajj / h ** 2 + np.where(central, -bj / (2 * h), np.maximum(-bj, 0.0) / h)
        diag -= 2 * ajj / h ** 2 + np.where(central, 0.0, np.abs(bj) / h)
        trip.add(rows, plus, w_plus)
        trip.add(rows, minus, w_minus)
        for k in range(j + 1, d):
            ajk = a[:, j, k]
            if not np.any(ajk):
                continue
            coef = 2.0 * ajk / (4 * h ** 2)
            for sj, sk, sign in ((1, 1, 1.0), (-1, -1, 1.0), (1, -1, -1.0), (-1, 1, -1.0)):
                off = np.zeros((1, d), dtype=np.int64)
                off[0, j], off[0, k] = sj, sk
                trip.add(rows, _targets(domain, multi, off)[:, 0], sign * coef)
    trip.add(rows, diag_flat, diag)
    return upwinded


def _interior(arr, domain):
    return np.asarray(arr)[domain.interior]


def assemble_local(coeffs: CoefficientFields, domain: DomainSpec, peclet_extra=None,
                   drift_scheme: str = "auto", check: bool = True) -> DiscreteOperator:
    """Discretise ``tr[a grad^2 u] + b . grad u + c u``.

    ``peclet_extra`` (``(n_int, d)`` or scalar) is diffusion from other parts of
    the operator that the Peclet test may count on; ``drift_scheme`` forces
    ``"central"`` or ``"upwind"`` instead of the automatic choice.
    """
    a = _interior(coeffs.a, domain)
    b = _interior(coeffs.b, domain)
    c = _interior(coeffs.c, domain)
    diag_a = np.einsum("ijj->ij", a)
    pe = diag_a if peclet_extra is None else diag_a + np.broadcast_to(peclet_extra, diag_a.shape)
    trip = _Triplets(domain)
    up = _local_triplets(trip, domain, a, b, c, pe, drift_scheme)
    M, B, F, g, gf = trip.build(coeffs.g, coeffs.g_far)
    info = OperatorInfo(gamma_estimate=coeffs.ellipticity(domain), upwind_nodes=up)
    op = DiscreteOperator(domain, M, B, F, g, gf, c.astype(float), info)
    if check:
        op.info.is_m_matrix = verify_m_matrix(op).status
    return op


# ---------------------------------------------------------------------------
# jump part
# ---------------------------------------------------------------------------

def _cell_weights_1d(kernel, h, delta, R):
    """Offsets ``k`` (lattice units) and moment-matched weights for 1D cells."""
    K = int(np.ceil(R / h - 0.5 - 1e-12))
    k = np.arange(1, K + 1)
    z = k * h
    lo = np.maximum((k - 0.5) * h, delta)
    hi = np.minimum((k + 0.5) * h, R)
    if kernel.kind is KernelKind.ALPHA_STABLE and isinstance(kernel.mask, Whole):
        a = kernel.alpha
        m2 = np.where(hi > lo, kernel.intensity * (hi ** (2 - a) - lo ** (2 - a)) / (2 - a), 0.0)
        w = m2 / z ** 2
        return np.concatenate([-k[::-1], k]), np.concatenate([w[::-1], w])
    offs, ws = [], []
    for sign in (-1.0, 1.0):
        for kk, l, u, zz in zip(k, lo, hi, z):
            if u <= l:
                continue
            iv = [(l, u)] if sign > 0 else [(-u, -l)]
            m2 = moment_1d(kernel, iv, 2.0)
            if m2 > 0:
                offs.append(int(sign) * int(kk))
                ws.append(m2 / zz ** 2)
    order = np.argsort(offs)
    return np.asarray(offs)[order], np.asarray(ws)[order]


_SUB = 12
_GL_X, _GL_W = np.polynomial.legendre.leggauss(3)


def _cell_weights_2d(kernel, h, delta, R):
    """Moment-matched weights of square cells intersected with ``delta <= |z| <= R``."""
    K = int(np.ceil(R / h + 0.5))
    kk = np.arange(-K, K + 1)
    offs = np.array([(i, j) for i in kk for j in kk if (i, j) != (0, 0)], dtype=np.int64)
    centers = offs * h
    # sub-cell Gauss points relative to the cell centre
    s = (np.arange(_SUB) + 0.5) / _SUB - 0.5
    gx = (s[:, None] + _GL_X[None, :] / (2 * _SUB)).ravel() * h
    gw = np.tile(_GL_W / 2, _SUB) / _SUB * h
    px, py = np.meshgrid(gx, gx, indexing="ij")
    pw = np.outer(gw, gw).ravel()
    pts = np.stack([px.ravel(), py.ravel()], axis=1)
    weights = np.zeros(len(offs))
    for n0 in range(0, len(offs), 256):
        cz = centers[n0:n0 + 256]
        z = cz[:, None, :] + pts[None, :, :]
        r = np.linalg.norm(z, axis=2)
        keep = (r >= delta) & (r <= R)
        if not isinstance(kernel.mask, Whole):
            keep &= kernel.mask.contains(z.reshape(-1, 2)).reshape(r.shape)
        rho = np.zeros_like(r)
        rho[keep] = kernel.density_at(z[keep])
        m2 = np.sum(rho * r ** 2 * pw[None, :], axis=1)
        weights[n0:n0 + 256] = m2 / np.sum(cz ** 2, axis=1)
    nz = weights > 0
    return offs[nz], weights[nz]


def _lattice_atoms(kernel, h):
    z = kernel.jumps / h
    k = np.rint(z).astype(np.int64)
    if np.any(np.abs(z - k) > 1e-9):
        raise UnsupportedKernelError("finite-measure atoms must be lattice vectors of the grid")
    sel = kernel.mask.contains(kernel.jumps)
    return k[sel], kernel.masses[sel]


def assemble_nonlocal(kernel: LevyKernel, coeffs: CoefficientFields, domain: DomainSpec,
                      delta: Optional[float] = None, R: Optional[float] = None,
                      drift_scheme: str = "auto", check: bool = True) -> DiscreteOperator:
    """Discretise the compensated jump integral (three-zone scheme, see module docstring).

    Defaults: ``delta = h``; ``R`` is half the halo width when the halo truncates
    ``R^d``, and the full grid extent when the kernel is clipped to ``E - x``.
    """
    if kernel.site_dependent:
        raise UnsupportedKernelError("state-dependent kernels are not supported by the solvers")
    grid = domain.grid
    if kernel.dim != grid.dim:
        raise ConfigurationError("kernel and grid dimensions differ")
    h, d = grid.h, grid.dim
    n = domain.n_interior
    if delta is None:
        delta = h
    if delta < h / 2 - 1e-15:
        raise QuadratureError(f"delta={delta} is below h/2={h / 2}")
    extent = float(h * np.linalg.norm(np.array(grid.shape) - 1))
    if R is None:
        R = domain.far_field_radius / 2 if domain.whole_space else extent
    if domain.whole_space and R > domain.far_field_radius + 1e-12:
        raise QuadratureError(f"R={R} exceeds the far-field truncation {domain.far_field_radius}")
    if R < delta:
        raise QuadratureError("R must be at least delta")

    multi = _interior_multi(domain)
    rows = np.arange(n)
    trip = _Triplets(domain)
    info = OperatorInfo(delta=float(delta), R=float(R), kernel_fingerprint=kernel.fingerprint(),
                        truncation_radius=float(domain.far_field_radius))
    clip = not domain.whole_space

    if kernel.kind is KernelKind.FINITE:
        offsets, weights = _lattice_atoms(kernel, h)
        sigma_half = np.zeros((d, d))
        tails = np.zeros(domain.n_far_channels)
        info.delta, info.R = None, None
    else:
        offsets, weights = (_cell_weights_1d(kernel, h, delta, R) if d == 1
                            else _cell_weights_2d(kernel, h, delta, R))
        offsets = np.asarray(offsets, dtype=np.int64).reshape(-1, d)
        sigma_half = 0.5 * small_jump_second_moment(kernel, delta)
        if clip:
            tails = np.zeros(domain.n_far_channels)
        elif d == 1:
            tails = np.array(directional_tail_masses(kernel, R))
        else:
            tails = np.array([tail_mass(kernel, R)])
    offsets = np.asarray(offsets, dtype=np.int64).reshape(-1, d)
    zs = offsets * h
    small = np.linalg.norm(zs, axis=1) < 1.0

    diag = np.zeros(n)
    beta = np.zeros((n, d))
    dense_rows = len(offsets) > 0.05 * trip.ncols
    chunk = max(1, 4_000_000 // max(1, len(offsets)))
    if dense_rows:
        chunk = max(1, min(chunk, _DENSE_BLOCK // trip.ncols))
    for r0 in range(0, n, chunk):
        rr = rows[r0:r0 + chunk]
        tg = _targets(domain, multi[rr], offsets)
        w = np.broadcast_to(weights, tg.shape)
        if clip:
            lab = np.where(tg >= 0, domain.labels[np.maximum(tg, 0)], NodeClass.OUTSIDE)
            w = np.where(lab != NodeClass.OUTSIDE, w, 0.0)
        if dense_rows:
            trip.add_dense_rows(r0, tg, w)
        else:
            trip.add(np.broadcast_to(rr[:, None], tg.shape), tg, w)
        diag[rr] -= w.sum(axis=1)
        beta[rr] = (w * small[None, :]) @ zs
    if kernel.is_symmetric and not clip:
        beta[:] = 0.0
    # zone (iii)
    for ch, t in enumerate(tails):
        if t > 0:
            trip.add(rows, -1 - ch, t)
            diag -= t
    trip.add(rows, domain.interior, diag)
    # zone (i) surrogate and compensator, through the local stencil
    a_sur = np.broadcast_to(sigma_half, (n, d, d))
    pe = np.einsum("ijj->ij", a_sur)
    info.upwind_nodes = _local_triplets(trip, domain, a_sur, -beta, np.zeros(n), pe, drift_scheme)
    M, B, F, g, gf = trip.build(coeffs.g, coeffs.g_far)
    op = DiscreteOperator(domain, M, B, F, g, gf, np.zeros(n), info)
    if check:
        op.info.is_m_matrix = verify_m_matrix(op).status
    op.info.notes.append(f"zone(iii) tail masses {tails.tolist()}")
    op._surrogate_diffusion = pe
    return op


def assemble(spec) -> DiscreteOperator:
    """``L = A + K`` for a :class:`~waldenfels.problem.ProblemSpec`."""
    dom, co = spec.domain, spec.coeffs
    if spec.kernel is None:
        op = assemble_local(co, dom, drift_scheme=spec.drift_scheme, check=False)
    else:
        nl = assemble_nonlocal(spec.kernel, co, dom, spec.delta, spec.R, spec.drift_scheme,
                               check=False)
        has_local = np.any(co.a[dom.interior]) or np.any(co.b[dom.interior]) or \
            np.any(co.c[dom.interior])
        if not has_local:
            op = nl
        else:
            loc = assemble_local(co, dom, peclet_extra=nl._surrogate_diffusion,
                                 drift_scheme=spec.drift_scheme, check=False)
            op = loc + nl
    op.info.gamma_estimate = co.ellipticity(dom)
    op.info.is_m_matrix = verify_m_matrix(op).status
    return op


# ---------------------------------------------------------------------------
# sign structure and application
# ---------------------------------------------------------------------------

@dataclass
class MMatrixReport:
    """``status``: True (pass), False (fail), None (sign pattern fine but c > 0 somewhere)."""

    status: Optional[bool]
    violation: Optional[dict] = None
    checked: list = field(default_factory=list)

    def __bool__(self):
        return bool(self.status)


def verify_m_matrix(op: DiscreteOperator, tol: Optional[float] = None) -> MMatrixReport:
    """Generator sign convention: off-diagonal couplings >= 0, diagonal <= 0 and row sums
    (exterior coupling included) <= 0 when ``c <= 0``."""
    M = op.M.tocoo()
    scale = float(np.max(np.abs(M.data))) if M.nnz else 1.0
    tol = 1e-12 * scale if tol is None else tol
    checked = ["offdiag_M", "offdiag_B", "far_coupling"]
    off = M.row != M.col
    bad = off & (M.data < -tol)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        return MMatrixReport(False, {"check": "offdiag_M", "row": int(M.row[i]),
                                     "col": int(M.col[i]), "value": float(M.data[i])}, checked)
    Bc = op.B.tocoo()
    bad = Bc.data < -tol
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        return MMatrixReport(False, {"check": "offdiag_B", "row": int(Bc.row[i]),
                                     "col": int(Bc.col[i]), "value": float(Bc.data[i])}, checked)
    if np.any(op.F < -tol):
        r, ch = np.argwhere(op.F < -tol)[0]
        return MMatrixReport(False, {"check": "far_coupling", "row": int(r), "col": int(ch),
                                     "value": float(op.F[r, ch])}, checked)
    if np.any(op.c > 0):
        return MMatrixReport(None, {"check": "c_sign", "row": int(np.argmax(op.c)),
                                    "value": float(op.c.max())}, checked)
    checked += ["diagonal", "row_sum"]
    diag = op.M.diagonal()
    if np.any(diag > tol):
        i = int(np.argmax(diag))
        return MMatrixReport(False, {"check": "diagonal", "row": i, "col": i,
                                     "value": float(diag[i])}, checked)
    rs = op.row_sums()
    rtol = 1e-10 * (np.abs(op.M).sum(axis=1).A.ravel() + 1.0)
    if np.any(rs > rtol):
        i = int(np.argmax(rs - rtol))
        return MMatrixReport(False, {"check": "row_sum", "row": i, "value": float(rs[i])}, checked)
    return MMatrixReport(True, None, checked)


def _check_field(op, u):
    if not isinstance(u, Field):
        raise ShapeMismatchError("apply expects a Field")
    if u.grid != op.domain.grid:
        raise ShapeMismatchError("field and operator live on different grids")


def apply_interior(op: DiscreteOperator, u: Field, g_far=None) -> np.ndarray:
    """``(L u)`` at the interior nodes, using the field's own halo values."""
    _check_field(op, u)
    dom = op.domain
    return op.M @ u.values[dom.interior] + op.load(u.values[dom.exterior], g_far)


def apply(op: DiscreteOperator, u: Field, g_far=None) -> Field:
    """``L u`` as a field: values at interior nodes, zero elsewhere."""
    out = np.zeros(op.domain.grid.n_nodes)
    out[op.domain.interior] = apply_interior(op, u, g_far)
    return Field(op.domain.grid, out, u.time)


def coupling_scale(op: DiscreteOperator, u: Field) -> np.ndarray:
    """``|M||u| + |B||u| + |F||g_far|`` per interior node: the rounding scale of ``L u``."""
    dom = op.domain
    return (abs(op.M) @ np.abs(u.values[dom.interior]) + abs(op.B) @ np.abs(u.values[dom.exterior])
            + np.abs(op.F) @ np.abs(op.g_far))
