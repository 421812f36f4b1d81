"""Executable maximum-principle checks on discrete fields and trajectories.

Every check is a pure function of its inputs and returns a :class:`PrincipleReport`.
Hypotheses such as ``L u >= 0`` are verified numerically with the tolerance in use,
unless the caller explicitly bypasses them (``assume_hypothesis=True``), which is
how constructed violations are exercised.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .grid import DomainSpec, Field, NodeClass
from .kernel import KernelKind
from .operator import DiscreteOperator, _cell_weights_1d, _cell_weights_2d, _lattice_atoms, \
    assemble, verify_m_matrix
from .parabolic import Trajectory

PASS, FAIL, INAPPLICABLE = "pass", "fail", "inapplicable"
_NOT_M = "operator fails the M-matrix sign test"


@dataclass
class PrincipleReport:
    check: str
    verdict: str
    witness: Optional[dict] = None
    tolerances: dict = field(default_factory=dict)
    preconditions: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if self.verdict not in (PASS, FAIL, INAPPLICABLE):
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if self.verdict == FAIL and self.witness is None:
            raise ValueError("a failing report needs a witness")
        if self.verdict == INAPPLICABLE and not self.notes:
            raise ValueError("an inapplicable report must state the unmet precondition")

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    @property
    def failed(self) -> bool:
        return self.verdict == FAIL

    def to_dict(self) -> dict:
        return {"check": self.check, "verdict": self.verdict, "witness": _jsonable(self.witness),
                "tolerances": _jsonable(self.tolerances),
                "preconditions": _jsonable(self.preconditions), "notes": list(self.notes)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _operator(spec, op):
    return assemble(spec) if op is None else op


def _g_far(op: DiscreteOperator, u: Field, sign: float = 1.0) -> np.ndarray:
    gf = u.info.get("g_far")
    return sign * (np.asarray(gf, float) if gf is not None else op.g_far)


def _L(op: DiscreteOperator, vals: np.ndarray, g_far: np.ndarray) -> np.ndarray:
    dom = op.domain
    return op.M @ vals[dom.interior] + op.B @ vals[dom.exterior] + op.F @ g_far


def _scale(op: DiscreteOperator, vals: np.ndarray, g_far: np.ndarray) -> np.ndarray:
    dom = op.domain
    return (abs(op.M) @ np.abs(vals[dom.interior]) + abs(op.B) @ np.abs(vals[dom.exterior])
            + np.abs(op.F) @ np.abs(g_far))


def _data_nodes(dom: DomainSpec) -> np.ndarray:
    """Nodes of ``E-bar \\ D``: halo nodes plus nodes carrying the far-field value."""
    return np.flatnonzero(dom.labels != NodeClass.INTERIOR)


def _node_witness(dom, flat, **extra):
    x = dom.grid.coordinates()[int(flat)]
    out = {"node": int(flat), "x": x.tolist()}
    out.update(extra)
    return out


def _regime(op: DiscreteOperator, tol: float = 0.0) -> str:
    c = op.c
    if np.all(c == 0):
        return "zero"
    if np.all(c <= tol):
        return "nonpositive"
    return "unsigned"


def _hypothesis(op, vals, g_far, tol, sign=1.0):
    """Nodes where ``sign * L u < -tol_i``; returns (worst position or None, value, tol_i)."""
    Lu = sign * _L(op, vals, g_far)
    tol_i = tol + 1e-9 * _scale(op, vals, g_far)
    bad = Lu < -tol_i
    if not bad.any():
        return None, float(Lu.min(initial=np.inf)), tol_i
    k = int(np.argmin(Lu + tol_i))
    return k, float(Lu[k]), tol_i


def default_tol(values: np.ndarray) -> float:
    """``1e-6 (1 + range)``: the constancy tolerance of the discrete strong principle."""
    return 1e-6 * (1.0 + float(np.ptp(values)) if values.size else 1.0)


def _preconditions(op):
    rep = verify_m_matrix(op)
    return {"c_regime": _regime(op), "m_matrix": rep.status,
            "m_matrix_violation": rep.violation}


# ---------------------------------------------------------------------------
# weak principles
# ---------------------------------------------------------------------------

def check_weak_elliptic(u: Field, spec=None, tol: float = 1e-9, op: Optional[DiscreteOperator] = None,
                        assume_hypothesis: bool = False) -> PrincipleReport:
    """``L u >= 0`` in D implies ``max u <= max_{E \\ D} u`` (``c = 0``) or ``<= max u^+`` (``c <= 0``)."""
    op = _operator(spec, op)
    dom = op.domain
    pre = _preconditions(op)
    name = "weak_elliptic"
    tols = {"tol": tol}
    regime = pre["c_regime"]
    if regime == "unsigned":
        return PrincipleReport(name, INAPPLICABLE, None, tols, pre, ["c > 0 somewhere in D"])
    if pre["m_matrix"] is False:
        return PrincipleReport(name, INAPPLICABLE, None, tols, pre, [_NOT_M])
    gf = _g_far(op, u)
    vals = u.values
    if not assume_hypothesis:
        k, val, tol_i = _hypothesis(op, vals, gf, tol)
        pre["hypothesis_Lu>=0"] = k is None
        if k is not None:
            return PrincipleReport(name, INAPPLICABLE,
                                   _node_witness(dom, dom.interior[k], Lu=val, tol=float(tol_i[k])),
                                   tols, pre, ["hypothesis L u >= 0 fails"])
    else:
        pre["hypothesis_Lu>=0"] = "assumed"
    data = _data_nodes(dom)
    ext_max = max(float(vals[data].max(initial=-np.inf)), float(np.max(gf, initial=-np.inf)))
    bound = ext_max if regime == "zero" else max(ext_max, 0.0)
    scale = 1.0 + abs(bound)
    tols["effective"] = tol * scale
    k = int(np.argmax(vals[dom.interior]))
    top = float(vals[dom.interior][k])
    if top > bound + tol * scale:
        return PrincipleReport(name, FAIL, _node_witness(dom, dom.interior[k], value=top,
                                                         bound=bound, excess=top - bound),
                               tols, pre)
    return PrincipleReport(name, PASS, None, tols, pre,
                           [f"max over D {top:.6g} <= bound {bound:.6g}"])


def _traj_arrays(traj: Trajectory):
    times = np.asarray(traj.times)
    vals = np.stack([f.values for f in traj.fields])
    return times, vals


def check_weak_parabolic(traj: Trajectory, spec=None, tol: float = 1e-9,
                         op: Optional[DiscreteOperator] = None,
                         assume_hypothesis: bool = False) -> PrincipleReport:
    """``-du/dt + L u >= 0`` (implicit Euler form) implies the max over all steps is bounded by
    the initial field and the exterior data over time (positive parts when ``c <= 0``)."""
    op = _operator(spec, op)
    dom = op.domain
    pre = _preconditions(op)
    name = "weak_parabolic"
    tols = {"tol": tol}
    regime = pre["c_regime"]
    if regime == "unsigned":
        return PrincipleReport(name, INAPPLICABLE, None, tols, pre, ["c > 0 somewhere in D"])
    if pre["m_matrix"] is False:
        return PrincipleReport(name, INAPPLICABLE, None, tols, pre, [_NOT_M])
    times, vals = _traj_arrays(traj)
    gfs = [_g_far(op, f) for f in traj.fields]
    if not assume_hypothesis:
        for k in range(1, len(times)):
            dt = times[k] - times[k - 1]
            res = -(vals[k, dom.interior] - vals[k - 1, dom.interior]) / dt + _L(op, vals[k], gfs[k])
            tol_i = tol + 1e-9 * (_scale(op, vals[k], gfs[k])
                                  + (np.abs(vals[k, dom.interior]) + np.abs(vals[k - 1, dom.interior])) / dt)
            bad = res < -tol_i
            if bad.any():
                i = int(np.argmin(res + tol_i))
                pre["hypothesis"] = False
                return PrincipleReport(name, INAPPLICABLE,
                                       _node_witness(dom, dom.interior[i], step=k, t=float(times[k]),
                                                     residual=float(res[i])),
                                       tols, pre, ["hypothesis -du/dt + L u >= 0 fails"])
        pre["hypothesis"] = True
    else:
        pre["hypothesis"] = "assumed"
    data = _data_nodes(dom)
    ref = max(float(vals[0].max()), float(vals[1:, data].max(initial=-np.inf)) if len(vals) > 1
              else -np.inf, max(float(np.max(g)) for g in gfs))
    bound = ref if regime == "zero" else max(ref, 0.0)
    scale = 1.0 + abs(bound)
    tols["effective"] = tol * scale
    inner = vals[:, dom.interior]
    k, i = np.unravel_index(int(np.argmax(inner)), inner.shape)
    top = float(inner[k, i])
    if top > bound + tol * scale:
        return PrincipleReport(name, FAIL, _node_witness(dom, dom.interior[i], step=int(k),
                                                         t=float(times[k]), value=top, bound=bound),
                               tols, pre)
    return PrincipleReport(name, PASS, None, tols, pre,
                           [f"max over D x [0, T] {top:.6g} (step {int(k)}) <= bound {bound:.6g}"])


def check_comparison(u: Field, v: Field, spec=None, tol: float = 1e-9,
                     op: Optional[DiscreteOperator] = None) -> PrincipleReport:
    """``L u <= L v`` in D and ``u >= v`` on the halo imply ``u >= v`` in D (``c <= 0``)."""
    op = _operator(spec, op)
    dom = op.domain
    pre = _preconditions(op)
    name = "comparison"
    tols = {"tol": tol}
    if pre["c_regime"] == "unsigned":
        return PrincipleReport(name, INAPPLICABLE, None, tols, pre, ["c > 0 somewhere in D"])
    if pre["m_matrix"] is False:
        return PrincipleReport(name, INAPPLICABLE, None, tols, pre, [_NOT_M])
    gu, gv = _g_far(op, u), _g_far(op, v)
    Lu, Lv = _L(op, u.values, gu), _L(op, v.values, gv)
    tol_i = tol + 1e-9 * (_scale(op, u.values, gu) + _scale(op, v.values, gv))
    if np.any(Lu > Lv + tol_i):
        k = int(np.argmax(Lu - Lv - tol_i))
        return PrincipleReport(name, INAPPLICABLE, _node_witness(dom, dom.interior[k],
                                                                 Lu=float(Lu[k]), Lv=float(Lv[k])),
                               tols, pre, ["hypothesis L u <= L v fails"])
    data = _data_nodes(dom)
    if np.any(u.values[data] < v.values[data] - tol) or np.any(gu < gv - tol):
        return PrincipleReport(name, INAPPLICABLE, None, tols, pre,
                               ["hypothesis u >= v on E \\ D fails"])
    diff = u.values[dom.interior] - v.values[dom.interior]
    k = int(np.argmin(diff))
    if diff[k] < -tol:
        return PrincipleReport(name, FAIL, _node_witness(dom, dom.interior[k], u=float(u.values[
            dom.interior[k]]), v=float(v.values[dom.interior[k]])), tols, pre)
    return PrincipleReport(name, PASS, None, tols, pre, [f"min(u - v) over D = {diff[k]:.3e}"])


# ---------------------------------------------------------------------------
# strong principle and propagation
# ---------------------------------------------------------------------------

def operator_closure(op: DiscreteOperator, start: np.ndarray) -> np.ndarray:
    """Flat nodes reachable from interior positions ``start`` through positive couplings.

    An interior maximiser of a subsolution forces every node it couples to with a
    positive weight to share the maximum; iterating gives the discrete propagation set.
    """
    dom = op.domain
    n, n_ext = op.n, dom.exterior.size
    A = sp.hstack([op.M, op.B]).tocoo()
    keep = (A.data > 0) & (A.row != A.col)
    G = sp.csr_matrix((np.ones(keep.sum()), (A.row[keep], A.col[keep])), shape=(n + n_ext, n + n_ext))
    seen = np.zeros(n + n_ext, bool)
    for s in np.atleast_1d(start):
        if not seen[s]:
            seen[csgraph.breadth_first_order(G, int(s), directed=True,
                                             return_predecessors=False)] = True
    flat = np.concatenate([dom.interior, dom.exterior])
    return np.sort(flat[seen])


def check_strong(obj: Union[Field, Trajectory], spec=None, tol: Optional[float] = None,
                 op: Optional[DiscreteOperator] = None, kind: str = "max",
                 assume_hypothesis: bool = False) -> PrincipleReport:
    """Strong principle: an interior maximum (``kind="min"``: minimum) of a subsolution
    (supersolution) forces constancy on its propagation set, for the elliptic case,
    or on that set over all earlier steps, for trajectories."""
    op = _operator(spec, op)
    if kind not in ("max", "min"):
        raise ValueError("kind must be 'max' or 'min'")
    sign = 1.0 if kind == "max" else -1.0
    if isinstance(obj, Trajectory):
        return _strong_parabolic(obj, op, tol, sign, assume_hypothesis)
    return _strong_elliptic(obj, op, tol, sign, assume_hypothesis)


def _strong_case(regime, top, tol):
    """Case list of the strong principle: applicable regime or the reason it is not."""
    if regime == "zero":
        return "c=0", None
    if regime == "nonpositive":
        if top >= -tol:
            return "c<=0, max>=0", None
        return None, "c <= 0 with a negative maximum"
    if abs(top) <= tol:
        return "max=0", None
    return None, "c takes both signs and the maximum is nonzero"


def _strong_elliptic(u, op, tol, sign, assume):
    dom = op.domain
    name = f"strong_elliptic_{'max' if sign > 0 else 'min'}"
    vals = sign * u.values
    gf = _g_far(op, u, sign)
    tol = default_tol(u.values) if tol is None else tol
    pre = _preconditions(op)
    tols = {"tol": tol}
    if pre["m_matrix"] is False:
        return PrincipleReport(name, INAPPLICABLE, None, tols, pre, [_NOT_M])
    if not assume:
        k, val, tol_i = _hypothesis(op, vals, gf, tol)
        pre["hypothesis"] = k is None
        if k is not None:
            return PrincipleReport(name, INAPPLICABLE,
                                   _node_witness(dom, dom.interior[k], L_value=sign * val),
                                   tols, pre, ["sub/supersolution hypothesis fails"])
    else:
        pre["hypothesis"] = "assumed"
    top = max(float(vals.max()), float(np.max(gf, initial=-np.inf)))
    case, why = _strong_case(pre["c_regime"], top, tol)
    if case is None:
        return PrincipleReport(name, INAPPLICABLE, None, tols, pre, [why])
    pre["case"] = case
    inner = vals[dom.interior]
    hits = np.flatnonzero(inner >= top - tol)
    if not hits.size:
        return PrincipleReport(name, PASS, None, tols, pre,
                               ["no interior node attains the global extremum"])
    closure = operator_closure(op, hits)
    dev = top - vals[closure]
    j = int(np.argmax(dev))
    if dev[j] > tol:
        return PrincipleReport(name, FAIL, {
            **_node_witness(dom, dom.interior[hits[0]], extremum=sign * top),
            "deviating_node": int(closure[j]),
            "deviating_x": dom.grid.coordinates()[closure[j]].tolist(),
            "deviation": float(dev[j]), "propagation_set_size": int(closure.size)}, tols, pre)
    return PrincipleReport(name, PASS, None, tols, pre,
                           [f"extremum attained in D; constant on {closure.size} propagated nodes"])


def _strong_parabolic(traj, op, tol, sign, assume):
    dom = op.domain
    name = f"strong_parabolic_{'max' if sign > 0 else 'min'}"
    times, raw = _traj_arrays(traj)
    vals = sign * raw
    gfs = [_g_far(op, f, sign) for f in traj.fields]
    tol = default_tol(raw) if tol is None else tol
    pre = _preconditions(op)
    tols = {"tol": tol}
    if pre["m_matrix"] is False:
        return PrincipleReport(name, INAPPLICABLE, None, tols, pre, [_NOT_M])
    if not assume:
        for k in range(1, len(times)):
            dt = times[k] - times[k - 1]
            res = -(vals[k, dom.interior] - vals[k - 1, dom.interior]) / dt + _L(op, vals[k], gfs[k])
            tol_i = tol + 1e-9 * (_scale(op, vals[k], gfs[k])
                                  + (np.abs(vals[k, dom.interior]) + np.abs(vals[k - 1, dom.interior])) / dt)
            if np.any(res < -tol_i):
                i = int(np.argmin(res + tol_i))
                pre["hypothesis"] = False
                return PrincipleReport(name, INAPPLICABLE,
                                       _node_witness(dom, dom.interior[i], step=k),
                                       tols, pre, ["sub/supersolution hypothesis fails"])
        pre["hypothesis"] = True
    else:
        pre["hypothesis"] = "assumed"
    top = float(vals.max())
    case, why = _strong_case(pre["c_regime"], top, tol)
    if case is None:
        return PrincipleReport(name, INAPPLICABLE, None, tols, pre, [why])
    pre["case"] = case
    inner = vals[1:, dom.interior]
    hit = np.argwhere(inner >= top - tol)
    if not hit.size:
        return PrincipleReport(name, PASS, None, tols, pre,
                               ["no interior node attains the global extremum for t > 0"])
    # latest time at which an interior node attains the maximum
    k0 = int(hit[:, 0].max()) + 1
    starts = hit[hit[:, 0] == k0 - 1, 1]
    closure = operator_closure(op, starts)
    pos = np.isin(closure, dom.interior)
    region = closure[pos]
    block = vals[1:k0 + 1][:, region]
    dev = top - block
    kk, j = np.unravel_index(int(np.argmax(dev)), dev.shape)
    if dev[kk, j] > tol:
        return PrincipleReport(name, FAIL, {
            **_node_witness(dom, dom.interior[starts[0]], step=k0, extremum=sign * top),
            "deviating_node": int(region[j]), "deviating_step": int(kk) + 1,
            "deviation": float(dev[kk, j])}, tols, pre)
    return PrincipleReport(name, PASS, None, tols, pre,
                           [f"extremum at step {k0}; constant on {region.size} nodes for steps 1..{k0}"])


def propagation_closure(spec, x0, max_iter: int = 1000) -> dict:
    """Iterate ``Lambda_{n+1} = union over x in D cap Lambda_n of (supp nu(x, .) + x)`` on the grid.

    Returns ``{"nodes", "points", "iterations", "stabilized", "covers_all"}``; the
    iteration starts from ``Lambda_0 = {x0}``.
    """
    dom = spec.domain
    grid = dom.grid
    k = spec.kernel
    start = grid.locate(x0)
    if dom.labels[start] != NodeClass.INTERIOR:
        raise ValueError("x0 must be an interior node")
    in_e = dom.labels != NodeClass.OUTSIDE
    if k is None:
        offsets = np.zeros((0, grid.dim), dtype=np.int64)
    elif k.kind is KernelKind.FINITE:
        offsets, m = _lattice_atoms(k, grid.h)
        offsets = offsets.reshape(-1, grid.dim)[m > 0]
    else:
        extent = grid.h * float(np.linalg.norm(np.array(grid.shape)))
        fn = _cell_weights_1d if grid.dim == 1 else _cell_weights_2d
        offsets, w = fn(k, grid.h, grid.h / 2, extent)
        offsets = np.asarray(offsets, dtype=np.int64).reshape(-1, grid.dim)[np.asarray(w) > 0]
    shape = np.array(grid.shape)
    current = {int(start)}
    frontier = [int(start)]
    it, stabilized = 0, False
    while it < max_iter:
        it += 1
        new = set()
        for node in frontier:
            if dom.labels[node] != NodeClass.INTERIOR:
                continue
            m = np.array(grid.multi_index(node))
            tm = m[None, :] + offsets
            ok = np.all((tm >= 0) & (tm < shape), axis=1)
            if not ok.any():
                continue
            flat = np.ravel_multi_index(tuple(tm[ok].T), grid.shape)
            flat = flat[in_e[flat]]
            new.update(int(f) for f in flat if int(f) not in current)
        if not new:
            stabilized = True
            break
        current |= new
        frontier = sorted(new)
    nodes = np.array(sorted(current), dtype=np.int64)
    target = np.flatnonzero(in_e)
    return {"nodes": nodes, "points": grid.coordinates()[nodes], "iterations": it,
            "stabilized": stabilized, "covers_all": bool(np.all(np.isin(target, nodes)))}


# ---------------------------------------------------------------------------
# Hopf, decay, escape bounds
# ---------------------------------------------------------------------------

def _outer_normal(dom, x):
    lo, hi = dom.D.bounding_box(dom.grid.dim)
    centre = 0.5 * (lo + hi)
    n = np.zeros(dom.grid.dim)
    j = int(np.argmax(np.abs(x - centre) / np.maximum(0.5 * (hi - lo), 1e-300)))
    n[j] = np.sign(x[j] - centre[j]) or 1.0
    return n


def check_hopf(u: Field, spec, boundary_node, tol: float = 1e-9,
               op: Optional[DiscreteOperator] = None) -> PrincipleReport:
    """At a strict boundary maximum of a subsolution the outer normal slope is positive.

    ``boundary_node`` is a node on the boundary of D (flat index or coordinates); the
    slope uses the neighbour one step inward along the dominant normal axis.
    """
    op = _operator(spec, op)
    dom = op.domain
    name = "hopf"
    tols = {"tol": tol}
    pre = _preconditions(op)
    gamma = spec.coeffs.ellipticity(dom)
    pre["ellipticity"] = gamma
    if not gamma > 0:
        return PrincipleReport(name, INAPPLICABLE, None, tols, pre,
                               ["degenerate diffusion: the boundary lemma needs a > 0 in D"])
    grid = dom.grid
    b = grid.locate(boundary_node) if np.ndim(boundary_node) or isinstance(boundary_node, float) \
        else int(boundary_node)
    x = grid.coordinates()[b]
    nrm = _outer_normal(dom, x)
    try:
        inner = grid.locate(x - grid.h * nrm)
    except Exception:
        return PrincipleReport(name, INAPPLICABLE, None, tols, pre, ["no inward neighbour node"])
    if dom.labels[inner] != NodeClass.INTERIOR or dom.labels[b] == NodeClass.INTERIOR:
        return PrincipleReport(name, INAPPLICABLE, None, tols, pre,
                               ["boundary_node is not adjacent to D from outside"])
    gf = _g_far(op, u)
    k, val, _ = _hypothesis(op, u.values, gf, tol)
    pre["hypothesis"] = k is None
    if k is not None:
        return PrincipleReport(name, INAPPLICABLE, _node_witness(dom, dom.interior[k], Lu=val),
                               tols, pre, ["hypothesis L u >= 0 fails"])
    ub = float(u.values[b])
    inner_max = float(u.values[dom.interior].max())
    if not ub > inner_max + tol:
        return PrincipleReport(name, INAPPLICABLE, None, tols, pre,
                               ["u at the boundary node is not strictly above all interior values"])
    slope = (ub - float(u.values[inner])) / grid.h
    wit = _node_witness(dom, b, normal=nrm.tolist(), slope=slope)
    if slope > tol:
        return PrincipleReport(name, PASS, None, tols, pre, [f"outer normal slope {slope:.6g}"])
    return PrincipleReport(name, FAIL, wit, tols, pre)


def check_decay_bound(traj: Trajectory, spec=None, beta: Optional[float] = None, tol: float = 1e-9,
                      op: Optional[DiscreteOperator] = None) -> PrincipleReport:
    """With ``c <= beta < 0``: ``max |u(T)| <= (1 - beta dt)^{-N} max |u|`` over the parabolic
    boundary data (the implicit-Euler image of the ``e^{beta T}`` factor)."""
    op = _operator(spec, op)
    dom = op.domain
    name = "decay_bound"
    pre = _preconditions(op)
    c_max = float(op.c.max(initial=-np.inf))
    beta = c_max if beta is None else beta
    tols = {"tol": tol, "beta": beta}
    if not (beta < 0 and c_max <= beta + 1e-15):
        return PrincipleReport(name, INAPPLICABLE, None, tols, pre,
                               ["needs c <= beta < 0 uniformly in D"])
    times, vals = _traj_arrays(traj)
    dts = np.diff(times)
    factor = float(np.prod(1.0 / (1.0 - beta * dts)))
    data = _data_nodes(dom)
    ref = max(float(np.abs(vals[0]).max()), float(np.abs(vals[1:, data]).max(initial=0.0)))
    bound = factor * ref
    final = np.abs(vals[-1, dom.interior])
    i = int(np.argmax(final))
    tols.update(factor=factor, continuum_factor=float(np.exp(beta * (times[-1] - times[0]))))
    if final[i] > bound + tol:
        return PrincipleReport(name, FAIL, _node_witness(dom, dom.interior[i], value=float(final[i]),
                                                         bound=bound), tols, pre)
    return PrincipleReport(name, PASS, None, tols, pre,
                           [f"max|u(T)| {final[i]:.6g} <= {bound:.6g}"])


def check_escape_bounds(p: Field, spec=None, op: Optional[DiscreteOperator] = None,
                        tol: float = 1e-9) -> PrincipleReport:
    """Strict bounds ``0 < p < 1`` at every interior node when U is neither empty nor all of
    the complement; the smallest margin is reported."""
    op = _operator(spec, op)
    dom = op.domain
    name = "escape_bounds"
    pre = _preconditions(op)
    tols = {"tol": tol}
    data = np.concatenate([p.values[dom.exterior], _g_far(op, p)])
    if not (np.any(data > 0.5) and np.any(data < 0.5)):
        return PrincipleReport(name, INAPPLICABLE, None, tols, pre,
                               ["U is empty or covers all of the complement of D"])
    if pre["m_matrix"] is not True:
        return PrincipleReport(name, INAPPLICABLE, None, tols, pre, [_NOT_M])
    inner = p.values[dom.interior]
    lo, hi = int(np.argmin(inner)), int(np.argmax(inner))
    margin = float(min(inner[lo], 1.0 - inner[hi]))
    tols["margin"] = margin
    notes = [f"margin {margin:.3e}"]
    if margin < tol:
        notes.append("margin below tol (expected near the boundary as h -> 0)")
    if inner[lo] <= 0.0:
        return PrincipleReport(name, FAIL, _node_witness(dom, dom.interior[lo], p=float(inner[lo])),
                               tols, pre)
    if inner[hi] >= 1.0:
        return PrincipleReport(name, FAIL, _node_witness(dom, dom.interior[hi], p=float(inner[hi])),
                               tols, pre)
    return PrincipleReport(name, PASS, None, tols, pre, notes)
