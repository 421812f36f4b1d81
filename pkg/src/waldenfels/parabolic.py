"""Theta-method time stepping of ``du/dt = L u`` and the nonlocal Fokker-Planck equation."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, SolverError
from .grid import Field
from .operator import CoefficientFields, DiscreteOperator, assemble
from .elliptic import extend_to_grid

log = logging.getLogger(__name__)


class PositivityWarning(UserWarning):
    """The explicit part of a theta step may create negative values."""


@dataclass(frozen=True)
class TimeGrid:
    """``N`` uniform steps of size ``dt`` covering ``[0, T]``; ``dt`` is adjusted so that
    ``N dt = T``."""

    T: float
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        if not (self.T > 0 and self.dt > 0):
            raise ConfigurationError("T and dt must be positive")
        n = max(1, int(round(self.T / self.dt)))
        object.__setattr__(self, "dt", self.T / n)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


@dataclass(eq=False)
class Trajectory:
    """Time-ordered fields; the first entry is the initial condition."""

    times: list = field(default_factory=list)
    fields: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def append(self, t: float, u: Field) -> None:
        if self.times and not t > self.times[-1]:
            raise ValueError("trajectory time stamps must increase strictly")
        self.times.append(float(t))
        self.fields.append(u)

    def __len__(self):
        return len(self.times)

    def __iter__(self):
        return iter(zip(self.times, self.fields))

    def __getitem__(self, k):
        return self.times[k], self.fields[k]

    @property
    def final(self) -> Field:
        return self.fields[-1]

    def at(self, t: float, tol: float = 1e-9) -> Field:
        k = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        if abs(self.times[k] - t) > tol * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t={t}")
        return self.fields[k]


def _factorize(A: sp.spmatrix):
    n = A.shape[0]
    if A.nnz > 0.1 * n * n:
        lu = sla.lu_factor(A.toarray())
        return lambda r: sla.lu_solve(lu, r)
    return spla.splu(A.tocsc()).solve


class ThetaStepper:
    """Factorises ``I - theta dt M`` once and advances interior values.

    One step solves ``(I - theta dt M) u' = (I + (1 - theta) dt M) u + dt (q + s)``
    where ``q`` is the exterior load and ``s`` an optional source.
    """

    def __init__(self, op: DiscreteOperator, dt: float, theta: float = 1.0):
        if not 0.0 <= theta <= 1.0:
            raise ConfigurationError("theta must lie in [0, 1]")
        if not dt > 0:
            raise ConfigurationError("dt must be positive")
        self.op, self.dt, self.theta = op, float(dt), float(theta)
        n = op.n
        eye = sp.identity(n, format="csr")
        self._lhs = (eye - theta * dt * op.M).tocsr()
        self._explicit = None if theta == 1.0 else (eye + (1.0 - theta) * dt * op.M).tocsr()
        self._solve = _factorize(self._lhs) if n else (lambda r: r)
        diag = np.abs(op.M.diagonal())
        self.positivity_ok = theta == 1.0 or dt * float(diag.max(initial=0.0)) <= 1.0 / (1.0 - theta)
        if not self.positivity_ok:
            warnings.warn(f"dt={dt} violates the positivity restriction for theta={theta}",
                          PositivityWarning, stacklevel=2)

    def step(self, u_int: np.ndarray, q: Optional[np.ndarray] = None,
             source: Optional[np.ndarray] = None) -> np.ndarray:
        rhs = u_int if self._explicit is None else self._explicit @ u_int
        load = self.op.q if q is None else q
        rhs = rhs + self.dt * load
        if source is not None:
            rhs = rhs + self.dt * source
        out = self._solve(rhs)
        if not np.all(np.isfinite(out)):
            raise SolverError("time step produced non-finite values")
        res = float(np.max(np.abs(self._lhs @ out - rhs), initial=0.0))
        if res > 1e-9 * (1.0 + float(np.max(np.abs(rhs), initial=0.0))):
            raise SolverError(f"time-step residual {res:.3e} too large", [res])
        return out


def step_theta(op: DiscreteOperator, u: Field, dt: float, theta: float = 1.0,
               source=None) -> Field:
    """One theta step; the halo of the result carries the operator's exterior data."""
    stepper = ThetaStepper(op, dt, theta)
    dom = op.domain
    new = stepper.step(u.values[dom.interior], source=source)
    t = None if u.time is None else u.time + dt
    info = {"theta": theta, "positivity_ok": stepper.positivity_ok}
    return extend_to_grid(op, new, time=t, info=info)


def central_divergence(grid, b: np.ndarray) -> np.ndarray:
    """``div b`` by second-order central differences (one-sided at the grid edge)."""
    d = grid.dim
    out = np.zeros(grid.n_nodes)
    for j in range(d):
        comp = b[:, j].reshape(grid.shape)
        if grid.shape[j] < 2:
            continue
        out += np.gradient(comp, grid.h, axis=j, edge_order=1 if grid.shape[j] < 3 else 2).ravel()
    return out


def fpe_coefficients(spec) -> CoefficientFields:
    """Coefficients of the forward operator ``tr[a grad^2 p] - b . grad p + (c - div b) p``.

    Exact adjoint of the generator for constant ``a``; exterior data are zero.
    """
    co = spec.coeffs
    div = co.divergence if co.divergence is not None else central_divergence(spec.grid, co.b)
    return CoefficientFields.build(spec.domain, a=co.a, b=-co.b, c=co.c - div, f=0.0, g=0.0,
                                   g_far=0.0, divergence=-div,
                                   uniformly_elliptic=co.uniformly_elliptic)


def build_fpe_operator(spec) -> DiscreteOperator:
    """Fokker-Planck right-hand side: the local adjoint plus the same jump operator."""
    from .problem import ProblemSpec

    fspec = ProblemSpec(spec.domain, fpe_coefficients(spec), spec.kernel, spec.delta, spec.R,
                        "unsigned", spec.drift_scheme)
    op = assemble(fspec)
    op.info.notes.append("forward (Fokker-Planck) operator")
    return op


def discrete_delta(grid, x0) -> Field:
    """Unit mass at the node nearest ``x0``: value ``1 / h^d`` there, zero elsewhere."""
    idx = grid.locate(x0)
    vals = np.zeros(grid.n_nodes)
    vals[idx] = 1.0 / grid.h ** grid.dim
    return Field(grid, vals, 0.0)


def _mass(values, h, d):
    return float(np.sum(values) * h ** d)


def solve_fpe(spec, p0: Field, time: TimeGrid, snapshots: Optional[Sequence[float]] = None,
              op: Optional[DiscreteOperator] = None) -> Trajectory:
    """Implicit Euler for the Fokker-Planck equation with absorbing truncation.

    Keeps every step unless ``snapshots`` lists the times to retain (the initial
    field and the final field are always kept).  ``info`` records the interior mass
    and minimum at every step.
    """
    if op is None:
        op = build_fpe_operator(spec)
    dom = op.domain
    grid = dom.grid
    if np.any(p0.values < 0):
        raise ConfigurationError("initial density must be nonnegative")
    h, d = grid.h, grid.dim
    if _mass(p0.values, h, d) > 1 + 1e-9:
        raise ConfigurationError("initial density has mass above 1")
    stepper = ThetaStepper(op, time.dt, 1.0)
    zero_q = np.zeros(op.n)
    u = p0.values[dom.interior].copy()
    keep = None if snapshots is None else np.asarray(sorted(snapshots), dtype=float)
    traj = Trajectory(info={"dt": time.dt, "T": time.T, "is_m_matrix": op.info.is_m_matrix,
                            "initial_mass": _mass(p0.values, h, d)})
    traj.append(0.0, extend_to_grid(op, u, time=0.0, ext_values=0.0, g_far=np.zeros_like(op.g_far)))
    masses, minima = [_mass(u, h, d)], [float(u.min(initial=0.0))]
    times = time.times()
    for k in range(1, time.n_steps + 1):
        u = stepper.step(u, q=zero_q)
        masses.append(_mass(u, h, d))
        minima.append(float(u.min(initial=0.0)))
        t = float(times[k])
        if keep is None or k == time.n_steps or np.any(np.abs(keep - t) <= 0.5 * time.dt):
            traj.append(t, extend_to_grid(op, u, time=t, ext_values=0.0,
                                          g_far=np.zeros_like(op.g_far)))
    traj.info["mass"] = masses
    traj.info["min"] = minima
    traj.info["leaked_mass"] = masses[0] - masses[-1]
    traj.info["mass_nonincreasing"] = bool(np.all(np.diff(masses) <= 1e-12))
    return traj
