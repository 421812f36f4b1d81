"""Translation-invariant Levy jump measures and the integrals the discretisation needs.

Three kinds are supported:

* isotropic alpha-stable, ``nu(dz) = scale * c_{alpha,d} |z|^{-d-alpha} dz`` with
  ``c_{alpha,d}`` fixed so that the integral operator equals ``-scale (-Delta)^{alpha/2}``;
* finite measures made of point masses;
* tabulated densities, accompanied by an integrability certificate.

Every kernel may carry a support mask; all moments are taken over the mask.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import integrate, special

from .errors import DomainError, UnsupportedKernelError
from .geometry import Region, Whole, intersect_intervals, ray_intervals


class KernelKind(enum.Enum):
    ALPHA_STABLE = "alpha_stable"
    FINITE = "finite"
    TABULATED = "tabulated"


@dataclass(frozen=True)
class IntegrabilityCertificate:
    """Power-law envelope of a density: ``rho(z) <= C |z|^{-d-small}`` near 0 and
    ``rho(z) <= C |z|^{-d-large}`` at infinity."""

    small_exponent: float
    large_exponent: float

    @property
    def finite(self) -> bool:
        return self.small_exponent < 2.0 and self.large_exponent > 0.0


@dataclass(frozen=True, eq=False)
class LevyKernel:
    kind: KernelKind
    dim: int
    alpha: Optional[float] = None
    scale: float = 1.0
    normalization: float = 1.0
    jumps: Optional[np.ndarray] = None
    masses: Optional[np.ndarray] = None
    density: Optional[Callable] = None
    certificate: Optional[IntegrabilityCertificate] = None
    mask: Region = field(default_factory=Whole)
    # hook for nu(x, .); every routine here rejects it
    site_dependent: bool = False

    @property
    def intensity(self) -> float:
        """Prefactor of ``|z|^{-d-alpha}`` for the stable kind."""
        return self.scale * self.normalization

    @property
    def is_symmetric(self) -> bool:
        if not isinstance(self.mask, Whole):
            return False
        if self.kind is KernelKind.ALPHA_STABLE:
            return True
        if self.kind is KernelKind.FINITE:
            key = {tuple(np.round(z, 12)): m for z, m in zip(self.jumps, self.masses)}
            return all(np.isclose(key.get(tuple(np.round(-z, 12)), -1.0), m)
                       for z, m in zip(self.jumps, self.masses))
        return False

    def density_at(self, z) -> np.ndarray:
        """Density of the (unmasked) measure at the points ``z`` of shape ``(n, d)``."""
        z = np.asarray(z, dtype=float).reshape(-1, self.dim)
        if self.kind is KernelKind.ALPHA_STABLE:
            r = np.linalg.norm(z, axis=1)
            with np.errstate(divide="ignore"):
                return self.intensity * r ** (-self.dim - self.alpha)
        if self.kind is KernelKind.TABULATED:
            return np.asarray(self.density(z if self.dim > 1 else z[:, 0]), dtype=float)
        raise UnsupportedKernelError("finite measures have no density")

    def fingerprint(self) -> str:
        payload = {"kind": self.kind.value, "dim": self.dim, "alpha": self.alpha,
                   "scale": self.scale, "normalization": self.normalization,
                   "mask": repr(self.mask)}
        if self.kind is KernelKind.FINITE:
            payload["jumps"] = np.asarray(self.jumps).tolist()
            payload["masses"] = np.asarray(self.masses).tolist()
        if self.kind is KernelKind.TABULATED:
            payload["density"] = getattr(self.density, "__qualname__", repr(self.density))
            payload["certificate"] = repr(self.certificate)
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class MomentCheck(NamedTuple):
    """Outcome of the Levy moment test; ``ok`` is ``None`` when it cannot be decided."""

    ok: Optional[bool]
    value: float


def stable_normalization(alpha: float, dim: int) -> float:
    r"""Constant making ``\int [u(x+z)-u(x)-z\cdot\nabla u 1_{|z|<1}] c|z|^{-d-\alpha} dz``
    equal to ``-(-\Delta)^{\alpha/2} u``."""
    if not 0.0 < alpha < 2.0:
        raise DomainError(f"alpha must lie in (0, 2), got {alpha}")
    if dim < 1:
        raise DomainError(f"dimension must be >= 1, got {dim}")
    return (alpha * special.gamma((dim + alpha) / 2.0)
            / (2.0 ** (1.0 - alpha) * math.pi ** (dim / 2.0) * special.gamma(1.0 - alpha / 2.0)))


def make_alpha_stable(alpha: float, dim: int = 1, scale: float = 1.0) -> LevyKernel:
    if not scale > 0:
        raise DomainError(f"scale must be positive, got {scale}")
    return LevyKernel(KernelKind.ALPHA_STABLE, int(dim), alpha=float(alpha), scale=float(scale),
                      normalization=stable_normalization(alpha, dim))


def finite_measure(jumps, masses) -> LevyKernel:
    """Point masses ``masses[i]`` at jump vectors ``jumps[i]``."""
    z = np.atleast_2d(np.asarray(jumps, dtype=float))
    if z.shape[0] == 1 and np.ndim(jumps) == 1 and len(np.atleast_1d(masses)) > 1:
        z = z.T
    m = np.atleast_1d(np.asarray(masses, dtype=float))
    if z.shape[0] != m.shape[0]:
        raise DomainError("one mass per jump vector is required")
    if np.any(m < 0):
        raise DomainError("masses must be nonnegative")
    if np.any(np.all(z == 0, axis=1)):
        raise DomainError("a Levy measure does not charge the origin")
    z.setflags(write=False)
    m.setflags(write=False)
    return LevyKernel(KernelKind.FINITE, z.shape[1], jumps=z, masses=m)


def tabulated_density(density: Callable, dim: int = 1,
                      certificate: Optional[IntegrabilityCertificate] = None) -> LevyKernel:
    """``density`` is vectorised: 1D receives an array of scalars, 2D an ``(n, 2)`` array."""
    return LevyKernel(KernelKind.TABULATED, int(dim), density=density, certificate=certificate)


def clip_support(kernel: LevyKernel, mask: Region) -> LevyKernel:
    """Restrict the measure to ``mask``; clipping twice with one mask is a no-op."""
    return replace(kernel, mask=kernel.mask & mask)


def _require_invariant(kernel):
    if kernel.site_dependent:
        raise UnsupportedKernelError("state-dependent kernels nu(x, .) are not supported")


# ---------------------------------------------------------------------------
# 1D integrals
# ---------------------------------------------------------------------------

def _zone_1d(kernel, r1, r2):
    """``{r1 <= |z| <= r2}`` intersected with the mask, as z-intervals."""
    zone = [(-r2, -r1), (r1, r2)] if r1 > 0 else [(-r2, r2)]
    return intersect_intervals(zone, kernel.mask.intervals())


def _stable_power_integral(intensity, alpha, a, b, power):
    """Integral of ``|z|^power * intensity * |z|^{-1-alpha}`` over ``0 <= a < b``."""
    q = power - alpha
    if q == 0:
        return intensity * (math.log(b) - math.log(a))
    hi = 0.0 if (np.isinf(b) and q < 0) else b ** q
    lo = 0.0 if a == 0 else a ** q
    return intensity * (hi - lo) / q


def _split_at_zero(lo, hi):
    pieces = []
    if lo < 0:
        pieces.append((lo, min(hi, 0.0)))
    if hi > 0:
        pieces.append((max(lo, 0.0), hi))
    return [(a, b) for a, b in pieces if b > a]


def _gauss_on(f, a, b, n=24):
    """Composite Gauss-Legendre on [a, b] with geometric panels when a > 0."""
    if np.isinf(b):
        # substitute z = a / s
        x, w = np.polynomial.legendre.leggauss(n)
        s = 0.5 * (x + 1.0)
        z = a / s
        return float(np.sum(0.5 * w * f(z) * a / s ** 2))
    x, w = np.polynomial.legendre.leggauss(n)
    if a > 0 and b / a > 4:
        edges = np.geomspace(a, b, int(np.ceil(np.log(b / a) / np.log(2.0))) + 1)
    else:
        edges = np.array([a, b])
    total = 0.0
    for p, q in zip(edges[:-1], edges[1:]):
        z = 0.5 * (q - p) * x + 0.5 * (q + p)
        total += float(np.sum(0.5 * (q - p) * w * f(z)))
    return total


def moment_1d(kernel: LevyKernel, intervals, power: float) -> float:
    """Integral of ``|z|^power nu(dz)`` over a list of z-intervals (mask applied)."""
    _require_invariant(kernel)
    intervals = intersect_intervals(sorted(intervals), kernel.mask.intervals())
    if kernel.kind is KernelKind.FINITE:
        z = kernel.jumps[:, 0]
        sel = np.zeros(z.shape, bool)
        for lo, hi in intervals:
            sel |= (z >= lo) & (z <= hi)
        return float(np.sum(kernel.masses[sel] * np.abs(z[sel]) ** power))
    total = 0.0
    for lo, hi in intervals:
        for a, b in _split_at_zero(lo, hi):
            if kernel.kind is KernelKind.ALPHA_STABLE:
                ra, rb = sorted((abs(a), abs(b)))
                total += _stable_power_integral(kernel.intensity, kernel.alpha, ra, rb, power)
                continue
            f = (lambda z: np.abs(z) ** power * kernel.density_at(np.atleast_1d(z)))
            if a == 0 or b == 0 or np.isinf(a) or np.isinf(b):
                val, _ = integrate.quad(lambda z: float(f(z)[0]), a, b, limit=200)
            elif a > 0:
                val = _gauss_on(f, a, b)
            else:
                val = _gauss_on(lambda r: f(-r), -b, -a)
            total += val
    return total


# ---------------------------------------------------------------------------
# dD integrals along rays (used when d > 1)
# ---------------------------------------------------------------------------

_N_RAYS = 2048


def _ray_moment(kernel, r1, r2, weight):
    """``\\int_{r1<=|z|<=r2, mask} weight(theta) |z|^p nu(dz)`` in 2D by integrating along rays.

    ``weight`` maps unit directions ``(n, 2)`` and returns ``(n, ...)`` angular factors,
    together with the radial power ``p``.
    """
    if kernel.dim != 2:
        raise UnsupportedKernelError("ray integration is implemented for d = 2")
    theta = (np.arange(_N_RAYS) + 0.5) * (2 * np.pi / _N_RAYS)
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    ang, power = weight(dirs)
    radial = np.empty(_N_RAYS)
    for i, u in enumerate(dirs):
        ivs = intersect_intervals(ray_intervals(kernel.mask, u), [(r1, r2)])
        acc = 0.0
        for a, b in ivs:
            if kernel.kind is KernelKind.ALPHA_STABLE:
                # polar Jacobian r: |z|^p r^{-2-alpha} r dr
                acc += _stable_power_integral(kernel.intensity, kernel.alpha, a, b, power)
            else:
                f = (lambda r, u=u: r ** (power + 1) * kernel.density_at(np.outer(r, u)))
                if a == 0 or np.isinf(b):
                    acc += integrate.quad(lambda r: float(f(np.atleast_1d(r))[0]), a, b,
                                          limit=200)[0]
                else:
                    acc += _gauss_on(f, a, b)
        radial[i] = acc
    dth = 2 * np.pi / _N_RAYS
    return np.tensordot(radial * dth, ang, axes=(0, 0))


def _unit_sphere_area(d):
    return 2.0 * math.pi ** (d / 2.0) / special.gamma(d / 2.0)


# ---------------------------------------------------------------------------
# public moment helpers
# ---------------------------------------------------------------------------

def small_jump_second_moment(kernel: LevyKernel, delta: float) -> np.ndarray:
    r"""``\int_{|z|<delta} z z^T nu(dz)`` as a ``(d, d)`` matrix."""
    _require_invariant(kernel)
    if not delta > 0:
        raise DomainError("delta must be positive")
    d = kernel.dim
    if kernel.kind is KernelKind.FINITE:
        z, m = kernel.jumps, kernel.masses
        sel = (np.linalg.norm(z, axis=1) < delta) & kernel.mask.contains(z)
        return np.einsum("i,ij,ik->jk", m[sel], z[sel], z[sel])
    if d == 1:
        return np.array([[moment_1d(kernel, _zone_1d(kernel, 0.0, delta), 2.0)]])
    if kernel.kind is KernelKind.ALPHA_STABLE and isinstance(kernel.mask, Whole):
        val = (kernel.intensity * _unit_sphere_area(d) / d
               * delta ** (2.0 - kernel.alpha) / (2.0 - kernel.alpha))
        return val * np.eye(d)
    return _ray_moment(kernel, 0.0, delta,
                       lambda u: (np.einsum("ij,ik->ijk", u, u), 2.0))


def tail_mass(kernel: LevyKernel, R: float) -> float:
    """``nu({|z| > R})``."""
    _require_invariant(kernel)
    if not R > 0:
        raise DomainError("R must be positive")
    d = kernel.dim
    if kernel.kind is KernelKind.FINITE:
        z, m = kernel.jumps, kernel.masses
        sel = (np.linalg.norm(z, axis=1) > R) & kernel.mask.contains(z)
        return float(np.sum(m[sel]))
    if d == 1:
        return moment_1d(kernel, _zone_1d(kernel, R, np.inf), 0.0)
    if kernel.kind is KernelKind.ALPHA_STABLE and isinstance(kernel.mask, Whole):
        return kernel.intensity * _unit_sphere_area(d) * R ** (-kernel.alpha) / kernel.alpha
    return float(_ray_moment(kernel, R, np.inf, lambda u: (np.ones(len(u)), 0.0)))


def directional_tail_masses(kernel: LevyKernel, R: float) -> tuple:
    """1D only: ``(nu(z < -R), nu(z > R))``."""
    if kernel.dim != 1:
        raise UnsupportedKernelError("directional tails are defined in 1D")
    if kernel.kind is KernelKind.FINITE:
        z, m = kernel.jumps[:, 0], kernel.masses
        inside = kernel.mask.contains(kernel.jumps)
        return (float(np.sum(m[(z < -R) & inside])), float(np.sum(m[(z > R) & inside])))
    left = moment_1d(kernel, [(-np.inf, -R)], 0.0)
    right = moment_1d(kernel, [(R, np.inf)], 0.0)
    return left, right


def first_moment(kernel: LevyKernel, r1: float, r2: float) -> np.ndarray:
    r"""``\int_{r1 <= |z| <= r2} z nu(dz)`` (mask applied)."""
    _require_invariant(kernel)
    if kernel.kind is KernelKind.FINITE:
        z, m = kernel.jumps, kernel.masses
        r = np.linalg.norm(z, axis=1)
        sel = (r >= r1) & (r <= r2) & kernel.mask.contains(z)
        return (m[sel, None] * z[sel]).sum(axis=0)
    if kernel.dim == 1:
        ivs = _zone_1d(kernel, r1, r2)
        pos = moment_1d(kernel, intersect_intervals(ivs, [(0.0, np.inf)]), 1.0)
        neg = moment_1d(kernel, intersect_intervals(ivs, [(-np.inf, 0.0)]), 1.0)
        return np.array([pos - neg])
    return _ray_moment(kernel, r1, r2, lambda u: (u, 1.0))


def truncated_moment(kernel: LevyKernel, eps: float) -> float:
    r"""``\int_{|z| > eps} (1 \wedge |z|^2) nu(dz)``; grows without bound as eps -> 0
    exactly when the Levy moment condition fails."""
    if kernel.kind is KernelKind.FINITE:
        z, m = kernel.jumps, kernel.masses
        r = np.linalg.norm(z, axis=1)
        sel = (r > eps) & kernel.mask.contains(z)
        return float(np.sum(m[sel] * np.minimum(1.0, r[sel] ** 2)))
    if kernel.dim == 1:
        near = moment_1d(kernel, _zone_1d(kernel, eps, 1.0), 2.0) if eps < 1 else 0.0
        return near + tail_mass(kernel, max(eps, 1.0))
    near = (np.trace(_ray_moment(kernel, eps, 1.0, lambda u: (np.einsum("ij,ik->ijk", u, u), 2.0)))
            if eps < 1 else 0.0)
    return float(near) + tail_mass(kernel, max(eps, 1.0))


def check_levy_moment(kernel: LevyKernel) -> MomentCheck:
    r"""Decide ``\int (1 \wedge |z|^2) nu(dz) < \infty`` and report its value."""
    if kernel.kind is KernelKind.FINITE:
        z, m = kernel.jumps, kernel.masses
        sel = kernel.mask.contains(z)
        r2 = np.sum(z[sel] ** 2, axis=1)
        return MomentCheck(True, float(np.sum(m[sel] * np.minimum(1.0, r2))))
    if kernel.kind is KernelKind.TABULATED:
        if kernel.certificate is None:
            return MomentCheck(None, math.nan)
        if not kernel.certificate.finite:
            return MomentCheck(False, math.inf)
    value = float(np.trace(small_jump_second_moment(kernel, 1.0))) + tail_mass(kernel, 1.0)
    return MomentCheck(bool(np.isfinite(value)), value)


def kernel_from_dict(spec: dict) -> LevyKernel:
    """Kernel block of a configuration file."""
    kind = spec.get("kind")
    if kind == "alpha_stable":
        return make_alpha_stable(spec["alpha"], spec.get("dim", 1), spec.get("scale", 1.0))
    if kind == "finite":
        rows = np.atleast_2d(np.asarray(spec["jumps"], dtype=float))
        return finite_measure(rows[:, :-1], rows[:, -1])
    raise DomainError(f"unknown kernel kind {kind!r}")


def kernel_to_dict(kernel: LevyKernel) -> dict:
    if kernel.kind is KernelKind.ALPHA_STABLE:
        return {"kind": "alpha_stable", "alpha": kernel.alpha, "dim": kernel.dim,
                "scale": kernel.scale}
    if kernel.kind is KernelKind.FINITE:
        rows = np.column_stack([kernel.jumps, kernel.masses])
        return {"kind": "finite", "jumps": rows.tolist()}
    raise UnsupportedKernelError("tabulated kernels cannot be serialised")
