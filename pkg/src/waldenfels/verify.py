"""The verification battery run on solver outputs, and fixtures with known violations."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .checks import (FAIL, INAPPLICABLE, PASS, PrincipleReport, check_comparison,
                     check_decay_bound, check_escape_bounds, check_hopf, check_strong, check_weak_elliptic,
                     check_weak_parabolic)
from .grid import Field, build_interval_domain
from .kernel import make_alpha_stable
from .operator import CoefficientFields, assemble, verify_m_matrix
from .parabolic import Trajectory
from .problem import ProblemSpec


def _negated(u: Field) -> Field:
    out = u.copy(values=-u.values)
    if "g_far" in u.info:
        out.info["g_far"] = [-v for v in u.info["g_far"]]
    return out


def _named(report: PrincipleReport, name: str) -> PrincipleReport:
    report.check = name
    return report


def m_matrix_report(op, name: str = "m_matrix") -> PrincipleReport:
    rep = verify_m_matrix(op)
    pre = {"checked": rep.checked}
    if rep.status is True:
        return PrincipleReport(name, PASS, None, {}, pre)
    if rep.status is None:
        return PrincipleReport(name, INAPPLICABLE, None, {}, pre,
                               ["c > 0 somewhere: the row-sum test does not apply"])
    return PrincipleReport(name, FAIL, rep.violation, {}, pre)


def battery(spec, op=None, tau: Optional[Field] = None, p: Optional[Field] = None,
            traj: Optional[Trajectory] = None, fpe_op=None) -> list:
    """Every applicable check for the outputs given; a list of :class:`PrincipleReport`."""
    op = assemble(spec) if op is None else op
    out = [m_matrix_report(op)]
    if tau is not None:
        # L tau = -1: tau is a supersolution and -tau a subsolution
        zero = tau.copy(values=np.zeros_like(tau.values))
        zero.info["g_far"] = [0.0] * len(op.g_far)
        out += [_named(check_weak_elliptic(_negated(tau), op=op), "tau.weak_min"),
                _named(check_strong(tau, op=op, kind="min"), "tau.strong_min"),
                _named(check_comparison(tau, zero, op=op), "tau.comparison_nonneg")]
        if spec.grid.dim == 1:
            lo, hi = spec.domain.D.bounding_box(1)
            for side, x in (("left", lo[0]), ("right", hi[0])):
                out.append(_named(check_hopf(_negated(tau), spec, [float(x)], op=op),
                                  f"tau.hopf_{side}"))
    if p is not None:
        out += [_named(check_escape_bounds(p, op=op), "p.strict_bounds"),
                _named(check_weak_elliptic(p, op=op), "p.weak_max"),
                _named(check_weak_elliptic(_negated(p), op=op), "p.weak_min"),
                _named(check_strong(p, op=op, kind="max"), "p.strong_max"),
                _named(check_strong(p, op=op, kind="min"), "p.strong_min")]
    if traj is not None:
        fop = fpe_op if fpe_op is not None else op
        out += [m_matrix_report(fop, "fpe.m_matrix"),
                _named(check_weak_parabolic(traj, op=fop), "fpe.weak_max"),
                _named(check_strong(traj, op=fop, kind="max"), "fpe.strong_max"),
                _mass_report(traj)]
        if np.all(fop.c < 0):
            out.append(_named(check_decay_bound(traj, op=fop), "fpe.decay"))
    return out


def _mass_report(traj: Trajectory) -> PrincipleReport:
    mass = np.asarray(traj.info.get("mass", []), float)
    mins = np.asarray(traj.info.get("min", []), float)
    if mass.size < 2:
        return PrincipleReport("fpe.mass_and_sign", INAPPLICABLE, notes=["no mass history recorded"])
    tols = {"mass_increase": 1e-12, "negativity": 0.0}
    jumps = np.diff(mass)
    if np.any(jumps > 1e-12):
        k = int(np.argmax(jumps))
        return PrincipleReport("fpe.mass_and_sign", FAIL,
                               {"step": k + 1, "mass_before": mass[k], "mass_after": mass[k + 1]},
                               tols)
    if np.any(mins < 0):
        k = int(np.argmin(mins))
        return PrincipleReport("fpe.mass_and_sign", FAIL, {"step": k, "min": mins[k]}, tols)
    return PrincipleReport("fpe.mass_and_sign", PASS, None, tols, {},
                           [f"mass {mass[0]:.6g} -> {mass[-1]:.6g}"])


def summarize(reports: list) -> dict:
    counts = {PASS: 0, FAIL: 0, INAPPLICABLE: 0}
    for r in reports:
        counts[r.verdict] += 1
    return {"n": len(reports), **counts, "failed": [r.check for r in reports if r.failed]}


# ---------------------------------------------------------------------------
# constructed violations
# ---------------------------------------------------------------------------

def _benchmark_spec(h=1.0 / 32, halo=4.0):
    grid, dom = build_interval_domain(-1.0, 1.0, h, halo)
    return ProblemSpec(dom, CoefficientFields.build(dom), make_alpha_stable(1.0), c_regime="zero")


def spike_fixture() -> tuple:
    """A single interior spike on a zero field: the weak principle must fail at the spike."""
    spec = _benchmark_spec()
    dom = spec.domain
    v = np.zeros(spec.grid.n_nodes)
    node = int(dom.interior[dom.n_interior // 3])
    v[node] = 1.0
    u = Field(spec.grid, v, info={"g_far": [0.0, 0.0]})
    rep = check_weak_elliptic(u, spec, assume_hypothesis=True)
    rep.notes.append(f"spike placed at node {node}")
    rep.check = "fixture.spike_weak"
    return rep, node


def tent_fixture() -> tuple:
    """A tent clipped to a plateau: an interior maximum that is not constant on the closure."""
    spec = _benchmark_spec()
    x = spec.grid.coordinates()[:, 0]
    tent = np.clip(np.minimum(1.0 - np.abs(x), 0.5), 0.0, None)
    u = Field(spec.grid, tent, info={"g_far": [0.0, 0.0]})
    rep = check_strong(u, spec, assume_hypothesis=True)
    rep.check = "fixture.tent_strong"
    return rep, spec


def central_drift_fixture() -> tuple:
    """Central differences with ``b = 10, a = 1/2, h = 1``: negative off-diagonal entries."""
    grid, dom = build_interval_domain(-5.0, 5.0, 1.0, 1.0)
    spec = ProblemSpec(dom, CoefficientFields.build(dom, a=0.5, b=10.0), None,
                       drift_scheme="central")
    op = assemble(spec)
    return m_matrix_report(op, "fixture.central_drift_m_matrix"), op
