"""Monte Carlo oracle for ``dX = b(X) dt + sigma dW + dL``.

Every path owns a counter-based Philox stream keyed by ``(seed, path index)``
and consumes it in fixed-size chunks, so estimates are bitwise identical for
any batch size or thread count.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import ConfigurationError, DomainError, UnsupportedKernelError
from .geometry import Region, Whole
from .kernel import KernelKind, LevyKernel

# steps drawn per refill of a path's increment buffer (part of the stream layout)
CHUNK = 2048
_MASK64 = (1 << 64) - 1


def path_generator(seed: int, index: int) -> np.random.Generator:
    """Independent stream of path ``index``."""
    return np.random.Generator(np.random.Philox(key=((int(seed) & _MASK64) << 64) | int(index)))


# ---------------------------------------------------------------------------
# stable laws
# ---------------------------------------------------------------------------

def _cms_symmetric(alpha, v, w):
    """Chambers-Mallows-Stuck map for the standard symmetric law ``E e^{i t X} = e^{-|t|^alpha}``."""
    if alpha == 1.0:
        return np.tan(v)
    return (np.sin(alpha * v) / np.cos(v) ** (1.0 / alpha)
            * (np.cos((1.0 - alpha) * v) / w) ** ((1.0 - alpha) / alpha))


def _positive_stable(beta, u, w):
    """Kanter's representation: ``E e^{-s A} = e^{-s^beta}``, ``0 < beta < 1``."""
    return (np.sin(beta * u) / np.sin(u) ** (1.0 / beta)
            * (np.sin((1.0 - beta) * u) / w) ** ((1.0 - beta) / beta))


def sample_stable_increment(alpha: float, dt: float, rng: np.random.Generator, dim: int = 1,
                            size: Optional[int] = None, scale: float = 1.0) -> np.ndarray:
    """Increment over ``dt`` of the isotropic stable process generated by ``-scale (-Delta)^{alpha/2}``.

    Returns shape ``(size,)`` in 1D (a scalar when ``size`` is None) and
    ``(size, dim)`` otherwise.
    """
    if not 0.0 < alpha < 2.0:
        raise DomainError(f"alpha={alpha} must lie in (0, 2)")
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    n = 1 if size is None else int(size)
    factor = (scale * dt) ** (1.0 / alpha)
    if dim == 1:
        v = rng.uniform(-0.5 * np.pi, 0.5 * np.pi, n)
        w = rng.standard_exponential(n) if alpha != 1.0 else None
        x = factor * _cms_symmetric(alpha, v, w)
        return float(x[0]) if size is None else x
    u = rng.uniform(0.0, np.pi, n)
    w = rng.standard_exponential(n)
    a = _positive_stable(alpha / 2.0, u, w)
    g = rng.standard_normal((n, dim))
    x = factor * np.sqrt(2.0 * a)[:, None] * g
    return x[0] if size is None else x


# ---------------------------------------------------------------------------
# model and configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SDEModel:
    """``dX = b(X) dt + sqrt(2 a) dW + dL`` killed on leaving the open set ``domain``.

    ``drift`` is a constant vector or a callable of ``(n, d)`` positions;
    ``a`` is a constant ``d x d`` matrix (``a = I/2`` is standard Brownian motion).
    """

    dim: int
    domain: Region
    drift: Union[None, np.ndarray, Callable] = None
    a: Optional[np.ndarray] = None
    kernel: Optional[LevyKernel] = None

    def __post_init__(self):
        if self.kernel is not None:
            if self.kernel.dim != self.dim:
                raise ConfigurationError("kernel dimension differs from the model dimension")
            if self.kernel.site_dependent:
                raise UnsupportedKernelError("state-dependent kernels cannot be simulated")
            if self.kernel.kind is KernelKind.TABULATED:
                raise UnsupportedKernelError("tabulated kernels have no sampler")
            if not isinstance(self.kernel.mask, Whole):
                raise UnsupportedKernelError("clipped kernels have no sampler")
        if self.a is not None:
            a = np.atleast_2d(np.asarray(self.a, dtype=float))
            object.__setattr__(self, "a", a)
            lam, vec = np.linalg.eigh(2.0 * a)
            # symmetric square root: admits degenerate (semidefinite) a
            sigma = (vec * np.sqrt(np.clip(lam, 0.0, None))) @ vec.T
            object.__setattr__(self, "_sigma", sigma if np.any(a) else None)
        else:
            object.__setattr__(self, "_sigma", None)
        if self.drift is not None and not callable(self.drift):
            object.__setattr__(self, "drift", np.broadcast_to(
                np.asarray(self.drift, dtype=float), (self.dim,)).copy())

    @property
    def constant_drift(self) -> bool:
        return not callable(self.drift)

    def drift_at(self, x):
        if self.drift is None:
            return 0.0
        if callable(self.drift):
            return np.asarray(self.drift(x), dtype=float).reshape(x.shape)
        return self.drift

    @classmethod
    def from_problem(cls, spec, drift: Union[None, np.ndarray, Callable] = None) -> "SDEModel":
        """Model of a :class:`ProblemSpec` whose ``a`` is constant; a non-constant drift must be
        passed as a callable."""
        dom = spec.domain
        a = spec.coeffs.a[dom.interior]
        if not np.allclose(a, a[0]):
            raise UnsupportedKernelError("the oracle supports constant diffusion only")
        b = spec.coeffs.b[dom.interior]
        if drift is None:
            if not np.allclose(b, b[0]):
                raise ConfigurationError("non-constant drift: pass it as a callable")
            drift = b[0] if np.any(b[0]) else None
        return cls(spec.grid.dim, dom.D, drift, a[0] if np.any(a[0]) else None, spec.kernel)


@dataclass(frozen=True)
class PathConfig:
    dt: float
    horizon: float
    n_paths: int
    seed: int
    diffusion: bool = True
    threads: int = 1
    batch_size: int = 1024

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt_path must be positive")
        if not self.horizon > 0:
            raise ConfigurationError("horizon must be positive")
        if self.n_paths < 100:
            raise ConfigurationError("at least 100 paths are required")
        if self.threads < 1 or self.batch_size < 1:
            raise ConfigurationError("threads and batch_size must be positive")

    @property
    def max_steps(self) -> int:
        return int(math.ceil(self.horizon / self.dt - 1e-9))


@dataclass
class EstimateWithError:
    estimate: float
    stderr: float
    n: int
    censored_fraction: float = 0.0
    seed: Optional[int] = None
    bias_note: str = ""
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "stderr": self.stderr, "n": self.n,
                "censored_fraction": self.censored_fraction, "seed": self.seed,
                "bias_note": self.bias_note, "flags": list(self.flags)}


# ---------------------------------------------------------------------------
# path simulation
# ---------------------------------------------------------------------------

class _Increments:
    """Per-step noise of one path: Brownian part plus jump part, ``CHUNK`` steps at a time."""

    def __init__(self, model: SDEModel, cfg: PathConfig):
        self.model, self.cfg = model, cfg
        k = model.kernel
        self.sigma = model._sigma if cfg.diffusion else None
        self.finite = k is not None and k.kind is KernelKind.FINITE
        if self.finite:
            m = np.asarray(k.masses, dtype=float)
            z = np.asarray(k.jumps, dtype=float)
            self.rate = float(m.sum())
            self.p = m / self.rate if self.rate > 0 else m
            self.z = z
            small = np.linalg.norm(z, axis=1) < 1.0
            # the generator subtracts z . grad u over jumps with |z| < 1
            self.comp = -(m[small, None] * z[small]).sum(axis=0)

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        d, dt, C = self.model.dim, self.cfg.dt, CHUNK
        inc = np.zeros((C, d))
        if self.sigma is not None:
            inc += math.sqrt(dt) * rng.standard_normal((C, d)) @ self.sigma.T
        k = self.model.kernel
        if k is None:
            return inc
        if self.finite:
            if self.rate > 0:
                counts = rng.multinomial(rng.poisson(self.rate * dt, C), self.p)
                inc += counts @ self.z + self.comp * dt
            return inc
        jumps = sample_stable_increment(k.alpha, dt, rng, d, C, k.scale)
        return inc + (jumps[:, None] if d == 1 else jumps)


def _first_exit(domain: Region, paths: np.ndarray) -> np.ndarray:
    """Index of the first row outside the open ``domain`` per path, or -1."""
    A, C, d = paths.shape
    if isinstance(domain, Whole):
        return np.full(A, -1)
    out = ~domain.contains_open(paths.reshape(-1, d)).reshape(A, C)
    first = np.argmax(out, axis=1)
    return np.where(out.any(axis=1), first, -1)


def _simulate_batch(model: SDEModel, x0, cfg: PathConfig, ids: np.ndarray, n_stop: int):
    """Run paths ``ids`` for at most ``n_stop`` steps.

    Returns ``(steps, positions, alive)``: exit step (``-1`` when still inside at
    ``n_stop``), exit position or position at ``n_stop``.
    """
    B, d = ids.size, model.dim
    gens = [path_generator(cfg.seed, i) for i in ids]
    noise = _Increments(model, cfg)
    x = np.broadcast_to(np.asarray(x0, dtype=float).reshape(1, d), (B, d)).copy()
    steps = np.full(B, -1, dtype=np.int64)
    alive = np.arange(B)
    n = 0
    while alive.size and n < n_stop:
        c = min(CHUNK, n_stop - n)
        inc = np.stack([noise.draw(gens[i]) for i in alive])[:, :c]
        if model.constant_drift:
            if model.drift is not None:
                inc = inc + model.drift * cfg.dt
            path = x[alive, None, :] + np.cumsum(inc, axis=1)
            first = _first_exit(model.domain, path)
            ex = first >= 0
            last = np.where(ex, first, c - 1)
            x[alive] = path[np.arange(alive.size), last]
            steps[alive[ex]] = n + first[ex] + 1
            alive = alive[~ex]
        else:
            xa = x[alive]
            live = np.ones(alive.size, bool)
            for j in range(c):
                idx = np.flatnonzero(live)
                if not idx.size:
                    break
                xj = xa[idx]
                xj = xj + model.drift_at(xj) * cfg.dt + inc[idx, j]
                xa[idx] = xj
                if not isinstance(model.domain, Whole):
                    gone = ~model.domain.contains_open(xj)
                    steps[alive[idx[gone]]] = n + j + 1
                    live[idx[gone]] = False
            x[alive] = xa
            alive = alive[live]
        n += c
    still = np.zeros(B, bool)
    still[alive] = True
    return steps, x, still


def _run(model, x0, cfg, n_stop):
    batches = [np.arange(s, min(s + cfg.batch_size, cfg.n_paths))
               for s in range(0, cfg.n_paths, cfg.batch_size)]
    job = lambda ids: _simulate_batch(model, x0, cfg, ids, n_stop)
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            parts = list(pool.map(job, batches))
    else:
        parts = [job(b) for b in batches]
    steps = np.concatenate([p[0] for p in parts])
    pos = np.concatenate([p[1] for p in parts])
    alive = np.concatenate([p[2] for p in parts])
    return steps, pos, alive


def _check_start(model, x0):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != model.dim:
        raise ConfigurationError("x0 has the wrong dimension")
    if not isinstance(model.domain, Whole) and not model.domain.contains_open(x0[None, :])[0]:
        raise ConfigurationError("x0 must lie in D")
    return x0


def simulate_until_exit(model: SDEModel, x0, cfg: PathConfig, path_index: int = 0):
    """One path: ``(exit_time, exit_position, censored)``; the overshoot is kept as simulated."""
    x0 = _check_start(model, x0)
    steps, pos, alive = _simulate_batch(model, x0, cfg, np.array([path_index]), cfg.max_steps)
    if alive[0]:
        return cfg.max_steps * cfg.dt, pos[0], True
    return steps[0] * cfg.dt, pos[0], False


def simulate_paths(model: SDEModel, x0, cfg: PathConfig):
    """All paths: exit times (horizon when censored), exit positions, censored mask."""
    x0 = _check_start(model, x0)
    steps, pos, alive = _run(model, x0, cfg, cfg.max_steps)
    times = np.where(alive, cfg.max_steps, steps) * cfg.dt
    return times, pos, alive


def _bias_note(model, cfg):
    if cfg.diffusion and model._sigma is not None:
        return f"discrete-time exit detection: O(sqrt(dt)) = O({math.sqrt(cfg.dt):.1e}) bias"
    return f"discrete-time exit detection: O(dt^(1/alpha)) overshoot bias, dt={cfg.dt:g}"


def estimate_exit_time(model: SDEModel, x0, cfg: PathConfig) -> EstimateWithError:
    """Sample mean and standard error of the exit time of ``D`` from ``x0``."""
    times, _, censored = simulate_paths(model, x0, cfg)
    n = times.size
    est = float(np.mean(times))
    se = float(np.std(times, ddof=1) / math.sqrt(n))
    frac = float(np.mean(censored))
    flags = []
    if frac >= 0.01:
        # censored paths contribute the horizon: the mean is a lower bound
        flags.append("censored>=1%")
        se = math.hypot(se, frac * cfg.horizon)
    return EstimateWithError(est, se, n, frac, cfg.seed, _bias_note(model, cfg), flags)


def estimate_escape_probability(model: SDEModel, x0, U, cfg: PathConfig) -> EstimateWithError:
    """Fraction of paths whose exit position lies in ``U``; binomial standard error."""
    pred = U.contains if isinstance(U, Region) else U
    _, pos, censored = simulate_paths(model, x0, cfg)
    hit = np.asarray(pred(pos), bool) & ~censored
    n = hit.size
    p = float(np.mean(hit))
    se = math.sqrt(max(p * (1.0 - p), 0.0) / n)
    frac = float(np.mean(censored))
    flags = []
    if frac >= 0.01:
        flags.append("censored>=1%")
        se = math.hypot(se, frac)
    return EstimateWithError(p, se, n, frac, cfg.seed, _bias_note(model, cfg), flags)


@dataclass
class Histogram:
    edges: list
    density: np.ndarray
    n_paths: int
    survived: int
    t: float

    @property
    def centers(self):
        return [0.5 * (e[1:] + e[:-1]) for e in self.edges]

    @property
    def mass(self) -> float:
        widths = np.ones(self.density.shape)
        for j, e in enumerate(self.edges):
            sh = [1] * len(self.edges)
            sh[j] = -1
            widths = widths * np.diff(e).reshape(sh)
        return float(np.sum(self.density * widths))


def density_histogram(model: SDEModel, x0, t: float, cfg: PathConfig, bins=64) -> Histogram:
    """Histogram of ``X_t`` over paths still in D, normalised by the total path count
    (sub-probability, matching an absorbing truncation)."""
    if t > cfg.horizon + 1e-12:
        raise ConfigurationError("t exceeds the simulation horizon")
    x0 = _check_start(model, x0)
    n_stop = int(round(t / cfg.dt))
    _, pos, alive = _run(model, x0, cfg, n_stop)
    pts = pos[alive]
    if np.isscalar(bins) or np.ndim(bins) == 0:
        lo, hi = model.domain.bounding_box(model.dim)
        edges = [np.linspace(lo[j], hi[j], int(bins) + 1) for j in range(model.dim)]
    else:
        edges = [np.asarray(bins, float)] if np.ndim(bins[0]) == 0 else [np.asarray(b, float)
                                                                          for b in bins]
    counts, edges = np.histogramdd(pts, bins=edges)
    vol = np.ones(counts.shape)
    for j, e in enumerate(edges):
        sh = [1] * model.dim
        sh[j] = -1
        vol = vol * np.diff(e).reshape(sh)
    return Histogram(list(edges), counts / (cfg.n_paths * vol), cfg.n_paths, int(alive.sum()), t)
