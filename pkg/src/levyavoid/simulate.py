"""Monte Carlo paths of isotropic stable processes with ball obstacles.

Each path draws from its own Philox stream keyed by ``(seed, path index)``,
so estimates are bit-identical for a given seed whatever the thread count.
Increments use subordination: ``X = sqrt(2 S) dt**(1/beta) N`` with ``S``
positive ``beta/2``-stable (Kanter's representation) and ``N`` standard
normal; ``beta = 2`` is Brownian motion with generator the Laplacian.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np
from numba import njit
from scipy import stats

from .errors import ConfigError, DomainError, HorizonError, PrecisionError
from .exponents import CharacteristicExponent

HIT, ESCAPE, CENSORED = 0, 1, 2
EVENT_START, EVENT_EXIT, EVENT_HIT, EVENT_CENSOR = 0, 1, 2, 3
BRUTE_FORCE_LIMIT = 256
MAX_CELLS = 2_000_000
Z95 = 1.959963984540054


@dataclass(frozen=True)
class SimConfig:
    """Path count, stopping radii and step rule.

    The median step length is ``max(dist/k_far, r_near/k_near)`` near an
    obstacle of radius ``r_near`` at surface distance ``dist``, and
    ``max(gap/k_far, R/k_sphere)`` near a stopping sphere of radius ``R``.
    ``None`` picks the defaults for the process (Brownian 3/10, stable
    10/5).  A positive ``dt`` switches to a fixed time step.
    """

    paths: int = 10_000
    seed: int = 0
    R_esc: float = 8.0
    T_max: float = 1e8
    max_steps: int = 5_000_000
    k_far: Optional[float] = None
    k_near: Optional[float] = None
    k_sphere: float = 100.0
    dt: float = 0.0
    antithetic: bool = False
    threads: int = 1
    censor_limit: float = 0.2

    def __post_init__(self):
        if self.paths < 100:
            raise ConfigError("at least 100 paths are required")
        if self.R_esc <= 0 or self.T_max <= 0:
            raise ConfigError("R_esc and T_max must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def steps_for(self, beta):
        brownian = beta == 2.0
        k_far = self.k_far if self.k_far is not None else (3.0 if brownian else 10.0)
        k_near = self.k_near if self.k_near is not None else (10.0 if brownian else 5.0)
        return float(k_far), float(k_near)

    def refined(self, beta, factor=2.0):
        """Same configuration with every step length divided by ``factor``."""
        k_far, k_near = self.steps_for(beta)
        return replace(self, k_far=k_far * factor, k_near=k_near * factor, k_sphere=self.k_sphere * factor,
                       dt=self.dt / factor**beta)


def stable_index(exp: CharacteristicExponent):
    if not exp.is_stable:
        raise ConfigError("path simulation is implemented for isotropic stable processes only")
    return float(exp.params[0])


# numerical kernels


@njit(nogil=True, cache=True)
def _positive_stable(gen, a):
    """Positive ``a``-stable sample with Laplace transform ``exp(-lam**a)``."""
    u = 0.0
    while u == 0.0:
        u = math.pi * gen.random()
    e = gen.standard_exponential()
    return (math.sin(a * u) / math.sin(u) ** (1.0 / a)) * (math.sin((1.0 - a) * u) / e) ** ((1.0 - a) / a)


@njit(nogil=True, cache=True)
def _cell_of(x, lo, h, dims, cell):
    d = x.shape[0]
    inside = True
    for k in range(d):
        c = int(math.floor((x[k] - lo[k]) / h))
        if c < 0 or c >= dims[k]:
            inside = False
        cell[k] = c
    return inside


@njit(nogil=True, cache=True)
def _nearest(x, centers, radii, brute, lo, h, dims, starts, items, r_max, cell, nb):
    """Lower bound on the distance to the nearest ball surface and that ball's radius.

    Negative distance means ``x`` lies inside a ball.
    """
    n = radii.shape[0]
    d = x.shape[0]
    best = np.inf
    r_near = r_max
    if n == 0:
        return best, r_near
    if brute:
        for i in range(n):
            s = 0.0
            for k in range(d):
                t = x[k] - centers[i, k]
                s += t * t
            g = math.sqrt(s) - radii[i]
            if g < best:
                best = g
                r_near = radii[i]
        return best, r_near
    inside = _cell_of(x, lo, h, dims, cell)
    if not inside:
        # distance to the grid box bounds the distance to every ball
        s = 0.0
        for k in range(d):
            lo_k = lo[k]
            hi_k = lo[k] + dims[k] * h
            t = 0.0
            if x[k] < lo_k:
                t = lo_k - x[k]
            elif x[k] > hi_k:
                t = x[k] - hi_k
            s += t * t
        box = math.sqrt(s)
        if box > h:
            return box - r_max, r_max
    total = 1
    for k in range(d):
        total *= 3
    far = h - r_max
    for m in range(total):
        q = m
        flat = 0
        ok = True
        for k in range(d):
            off = q % 3 - 1
            q //= 3
            c = cell[k] + off
            if c < 0 or c >= dims[k]:
                ok = False
                break
            nb[k] = c
        if not ok:
            continue
        flat = 0
        for k in range(d):
            flat = flat * dims[k] + nb[k]
        for p in range(starts[flat], starts[flat + 1]):
            i = items[p]
            s = 0.0
            for k in range(d):
                t = x[k] - centers[i, k]
                s += t * t
            g = math.sqrt(s) - radii[i]
            if g < best:
                best = g
                r_near = radii[i]
    if far < best:
        return far, r_max
    return best, r_near


@njit(nogil=True, cache=True)
def _bridge_no_hit(x, y, dt, centers, radii, brute, lo, h, dims, starts, items, cell, nb):
    """Probability that a Brownian bridge from ``x`` to ``y`` misses every nearby ball
    (half-space approximation at each ball)."""
    n = radii.shape[0]
    d = x.shape[0]
    prob = 1.0
    if n == 0:
        return prob
    if brute:
        for i in range(n):
            prob *= _miss_one(x, y, dt, centers, radii, i)
        return prob
    if not _cell_of(y, lo, h, dims, cell):
        return prob
    total = 1
    for k in range(d):
        total *= 3
    for m in range(total):
        q = m
        ok = True
        for k in range(d):
            off = q % 3 - 1
            q //= 3
            c = cell[k] + off
            if c < 0 or c >= dims[k]:
                ok = False
                break
            nb[k] = c
        if not ok:
            continue
        flat = 0
        for k in range(d):
            flat = flat * dims[k] + nb[k]
        for p in range(starts[flat], starts[flat + 1]):
            prob *= _miss_one(x, y, dt, centers, radii, items[p])
    return prob


@njit(nogil=True, cache=True)
def _miss_one(x, y, dt, centers, radii, i):
    d = x.shape[0]
    s1 = 0.0
    s2 = 0.0
    for k in range(d):
        a = x[k] - centers[i, k]
        b = y[k] - centers[i, k]
        s1 += a * a
        s2 += b * b
    d1 = math.sqrt(s1) - radii[i]
    d2 = math.sqrt(s2) - radii[i]
    if d1 <= 0.0 or d2 <= 0.0:
        return 1.0
    return 1.0 - math.exp(-d1 * d2 / dt)


@njit(nogil=True, cache=True)
def _walk(gen, sign, x0, beta, med, centers, radii, brute, lo, h, dims, starts, items, r_max,
          levels, T_max, max_steps, k_far, k_near, k_sphere, dt_fixed, exit_time, exit_pos, end):
    """Run one path; returns ``(status, time)`` and fills level exits and the end point."""
    d = x0.shape[0]
    L = levels.shape[0]
    x = x0.copy()
    y = np.empty(d)
    cell = np.empty(d, np.int64)
    nb = np.empty(d, np.int64)
    for k in range(L):
        exit_time[k] = -1.0
    brownian = beta == 2.0
    a = beta / 2.0
    n_obs = radii.shape[0]
    t = 0.0
    g0, _ = _nearest(x, centers, radii, brute, lo, h, dims, starts, items, r_max, cell, nb)
    if n_obs > 0 and g0 <= 0.0:
        end[:] = x
        return HIT, t
    nxt = 0
    status = CENSORED
    for _ in range(max_steps):
        rx = 0.0
        for k in range(d):
            rx += x[k] * x[k]
        rx = math.sqrt(rx)
        if dt_fixed > 0.0:
            dt = dt_fixed
        else:
            R = levels[nxt]
            gap = R - rx
            g = np.inf
            r_near = r_max
            if n_obs > 0:
                g, r_near = _nearest(x, centers, radii, brute, lo, h, dims, starts, items, r_max, cell, nb)
            if brownian and gap > R / k_sphere and g > r_near / k_near:
                # clear of everything: jump to a uniform point on the largest clear sphere
                rho = min(gap, g)
                t += rho * rho / (2.0 * d)
                if t > T_max:
                    break
                nrm = 0.0
                for k in range(d):
                    y[k] = gen.standard_normal()
                    nrm += y[k] * y[k]
                nrm = math.sqrt(nrm)
                for k in range(d):
                    x[k] += rho * y[k] / nrm
                continue
            ell = min(max(gap / k_far, R / k_sphere), max(g / k_far, r_near / k_near))
            dt = (ell / med) ** beta
        if t + dt > T_max:
            break
        if brownian:
            scale = math.sqrt(2.0 * dt)
        else:
            scale = math.sqrt(2.0 * _positive_stable(gen, a)) * dt ** (1.0 / beta)
        ry = 0.0
        for k in range(d):
            y[k] = x[k] + sign * scale * gen.standard_normal()
            ry += y[k] * y[k]
        ry = math.sqrt(ry)
        t += dt
        while nxt < L:
            R = levels[nxt]
            crossed = ry >= R
            if not crossed and brownian:
                if gen.random() < math.exp(-(R - rx) * (R - ry) / dt):
                    crossed = True
            if not crossed:
                break
            exit_time[nxt] = t
            for k in range(d):
                exit_pos[nxt, k] = y[k] if ry >= R else y[k] * R / ry
            nxt += 1
        hit = False
        if n_obs > 0:
            g, _ = _nearest(y, centers, radii, brute, lo, h, dims, starts, items, r_max, cell, nb)
            hit = g <= 0.0
            if not hit and brownian:
                # one uniform per step whatever the obstacles, so paths stay coupled across geometries
                u = gen.random()
                p_miss = _bridge_no_hit(x, y, dt, centers, radii, brute, lo, h, dims, starts, items, cell, nb)
                hit = u > p_miss
        if hit:
            status = HIT
            x[:] = y
            break
        x[:] = y
        if nxt == L:
            status = ESCAPE
            break
    end[:] = x
    return status, t


@njit(nogil=True, cache=True)
def _walk_spheres(gen, x0, beta, clock, centers, radii, brute, lo, h, dims, starts, items, r_max,
                  levels, T_max, max_steps, exit_time, exit_pos, end):
    """Exact-exit walk for ``beta < 2``: jump from the centre of the largest clear ball.

    Started at the centre of ``B(y, rho)`` the exit point is ``y + rho V**(-1/2) u``
    with ``V ~ Beta(beta/2, 1 - beta/2)`` and ``u`` uniform on the sphere.  The
    clock adds the mean exit time ``clock * rho**beta`` per jump.
    """
    d = x0.shape[0]
    L = levels.shape[0]
    x = x0.copy()
    cell = np.empty(d, np.int64)
    nb = np.empty(d, np.int64)
    u = np.empty(d)
    for k in range(L):
        exit_time[k] = -1.0
    n_obs = radii.shape[0]
    a = beta / 2.0
    t = 0.0
    nxt = 0
    status = CENSORED
    g = np.inf
    if n_obs > 0:
        g, _ = _nearest(x, centers, radii, brute, lo, h, dims, starts, items, r_max, cell, nb)
        if g <= 0.0:
            end[:] = x
            return HIT, t
    for _ in range(max_steps):
        rx = 0.0
        for k in range(d):
            rx += x[k] * x[k]
        rho = min(g, levels[nxt] - math.sqrt(rx))
        t += clock * rho ** beta
        if t > T_max:
            break
        g1 = gen.standard_gamma(a)
        g2 = gen.standard_gamma(1.0 - a)
        v = g1 / (g1 + g2)
        if v <= 0.0:
            continue
        jump = rho / math.sqrt(v)
        nrm = 0.0
        for k in range(d):
            u[k] = gen.standard_normal()
            nrm += u[k] * u[k]
        nrm = math.sqrt(nrm)
        ry = 0.0
        for k in range(d):
            x[k] += jump * u[k] / nrm
            ry += x[k] * x[k]
        ry = math.sqrt(ry)
        while nxt < L and ry >= levels[nxt]:
            exit_time[nxt] = t
            exit_pos[nxt, :] = x
            nxt += 1
        if n_obs > 0:
            g, _ = _nearest(x, centers, radii, brute, lo, h, dims, starts, items, r_max, cell, nb)
            if g <= 0.0:
                status = HIT
                break
        if nxt == L:
            status = ESCAPE
            break
    end[:] = x
    return status, t


def mean_exit_time_constant(beta, d):
    """``E_0 tau`` for the unit ball, for the process with exponent ``|xi|**beta``."""
    return math.exp(math.lgamma(d / 2) - beta * math.log(2) - math.lgamma(1 + beta / 2) - math.lgamma((d + beta) / 2))


# obstacle index


@dataclass(frozen=True)
class ObstacleIndex:
    """Balls bucketed on a uniform grid (compressed rows), or brute force when few."""

    centers: np.ndarray
    radii: np.ndarray
    brute: bool
    lo: np.ndarray
    h: float
    dims: np.ndarray
    starts: np.ndarray
    items: np.ndarray

    @property
    def r_max(self):
        return float(self.radii.max()) if self.radii.size else 0.0

    @property
    def extent(self):
        """Largest ``|x_n| + r_n``."""
        if not self.radii.size:
            return 0.0
        return float((np.linalg.norm(self.centers, axis=1) + self.radii).max())

    @classmethod
    def build(cls, centers, radii, d):
        centers = np.ascontiguousarray(np.asarray(centers, float).reshape(-1, d))
        radii = np.ascontiguousarray(np.asarray(radii, float).reshape(-1))
        n = radii.size
        if n <= BRUTE_FORCE_LIMIT:
            return cls(centers, radii, True, np.zeros(d), 1.0, np.ones(d, np.int64),
                       np.array([0, n], np.int64), np.arange(n, dtype=np.int64))
        lo = centers.min(axis=0) - radii.max()
        span = centers.max(axis=0) + radii.max() - lo
        h = max(2.0 * float(radii.max()), float(np.prod(span) / n) ** (1.0 / d))
        while np.prod(np.ceil(span / h)) > MAX_CELLS:
            h *= 1.25
        dims = np.maximum(1, np.ceil(span / h)).astype(np.int64)
        cell = np.minimum(np.floor((centers - lo) / h).astype(np.int64), dims - 1)
        flat = np.ravel_multi_index(tuple(cell.T), tuple(dims))
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=int(np.prod(dims)))
        starts = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        return cls(centers, radii, False, lo, float(h), dims, starts, order.astype(np.int64))

    @classmethod
    def empty(cls, d):
        return cls.build(np.zeros((0, d)), np.zeros(0), d)


@lru_cache(maxsize=64)
def median_step(beta, d):
    """Median of ``|X_1|``: closed form for Brownian motion, 400k-sample estimate otherwise."""
    if beta == 2.0:
        return math.sqrt(2.0) * float(stats.chi.median(d))
    rng = np.random.Generator(np.random.Philox(key=0x5EED))
    x = sample_stable_increment(beta, 1.0, rng, d=d, size=400_000)
    return float(np.median(np.linalg.norm(x, axis=-1)))


def sample_stable_increment(beta, dt, rng, d=3, size=None):
    """Increment of the isotropic ``beta``-stable process over ``dt``.

    ``beta = 2`` gives a Gaussian with per-coordinate variance ``2 dt``.
    """
    if not 0 < beta <= 2:
        raise DomainError("stability index must lie in (0, 2]")
    if dt < 0:
        raise DomainError("dt must be nonnegative")
    shape = (d,) if size is None else (size, d)
    z = rng.standard_normal(shape)
    if beta == 2:
        return math.sqrt(2.0 * dt) * z
    a = beta / 2.0
    n = 1 if size is None else size
    u = math.pi * (1.0 - rng.random(n))
    e = rng.standard_exponential(n)
    s = (np.sin(a * u) / np.sin(u) ** (1.0 / a)) * (np.sin((1.0 - a) * u) / e) ** ((1.0 - a) / a)
    scale = np.sqrt(2.0 * s) * dt ** (1.0 / beta)
    return (scale[:, None] * z) if size is not None else scale[0] * z


@dataclass
class PathBatch:
    status: np.ndarray
    time: np.ndarray
    end: np.ndarray
    exit_time: np.ndarray
    exit_pos: np.ndarray

    @property
    def paths(self):
        return self.status.size

    def hit_before(self, level):
        """Per-path indicator of hitting an obstacle before leaving level ``level``."""
        return (self.status == HIT) & (self.exit_time[:, level] < 0)

    def exited(self, level):
        return self.exit_time[:, level] >= 0

    def censored(self, level):
        return ~self.hit_before(level) & ~self.exited(level)


def run_paths(exp, starts, obstacles: ObstacleIndex, levels, cfg: SimConfig, first_path=0):
    """Simulate ``len(starts)`` paths; path ``i`` uses stream ``(cfg.seed, first_path + i)``."""
    beta = stable_index(exp)
    d = exp.d
    starts = np.atleast_2d(np.asarray(starts, float))
    levels = np.asarray(levels, float)
    if np.any(np.diff(levels) <= 0):
        raise ConfigError("stopping radii must increase")
    if np.any(np.linalg.norm(starts, axis=1) >= levels[0]):
        raise ConfigError("paths must start inside the first stopping sphere")
    n = starts.shape[0]
    L = levels.size
    status = np.empty(n, np.int64)
    time = np.empty(n)
    end = np.empty((n, d))
    exit_time = np.empty((n, L))
    exit_pos = np.full((n, L, d), np.nan)
    med = median_step(beta, d)
    k_far, k_near = cfg.steps_for(beta)
    o = obstacles
    exact = beta < 2.0 and cfg.dt == 0.0
    clock = mean_exit_time_constant(beta, d)

    def work(lo_i, hi_i):
        for i in range(lo_i, hi_i):
            p = first_path + i
            stream = p // 2 if cfg.antithetic else p
            sign = -1.0 if cfg.antithetic and p % 2 else 1.0
            gen = np.random.Generator(np.random.Philox(key=cfg.seed + (stream << 64)))
            if exact:
                status[i], time[i] = _walk_spheres(gen, starts[i], beta, clock, o.centers, o.radii, o.brute, o.lo,
                                                   o.h, o.dims, o.starts, o.items, o.r_max, levels, cfg.T_max,
                                                   cfg.max_steps, exit_time[i], exit_pos[i], end[i])
                continue
            status[i], time[i] = _walk(gen, sign, starts[i], beta, med, o.centers, o.radii, o.brute, o.lo, o.h,
                                       o.dims, o.starts, o.items, o.r_max, levels, cfg.T_max, cfg.max_steps,
                                       k_far, k_near, cfg.k_sphere, cfg.dt, exit_time[i], exit_pos[i], end[i])

    threads = max(1, int(cfg.threads))
    if threads == 1 or n < 2 * threads:
        work(0, n)
    else:
        edges = np.linspace(0, n, threads + 1).astype(int)
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(lambda k: work(edges[k], edges[k + 1]), range(threads)))
    return PathBatch(status, time, end, exit_time, exit_pos)


# estimates


def _binomial(k, n):
    p = k / n
    return p, Z95 * math.sqrt(max(p * (1 - p), 0.0) / n)


@dataclass(frozen=True)
class LevelEstimate:
    R: float
    p_hat: float
    ci_half_width: float
    n_hit: int
    n_escape: int
    n_censored: int

    def to_dict(self):
        return {"R": self.R, "p_hat": self.p_hat, "ci": self.ci_half_width, "n_hit": self.n_hit,
                "n_escape": self.n_escape, "n_censored": self.n_censored}


@dataclass(frozen=True)
class HittingEstimate:
    """Hit fraction before leaving ``B(0, R_esc)`` and its extrapolation to ``R = infinity``."""

    p_hat: float
    ci_half_width: float
    n_hit: int
    n_escape: int
    n_censored: int
    levels: tuple = ()
    p_extrapolated: Optional[float] = None
    ci_extrapolated: Optional[float] = None
    envelope: Optional[tuple] = None
    envelope_ok: Optional[bool] = None
    bias_report: Optional[dict] = None

    def __post_init__(self):
        if not 0 <= self.p_hat <= 1:
            raise ValueError("p_hat must be a probability")

    @property
    def paths(self):
        return self.n_hit + self.n_escape + self.n_censored

    def to_dict(self):
        return {
            "estimate": self.p_hat,
            "ci": self.ci_half_width,
            "counts": {"hit": self.n_hit, "escape": self.n_escape, "censored": self.n_censored},
            "levels": [lv.to_dict() for lv in self.levels],
            "extrapolated": self.p_extrapolated,
            "ci_extrapolated": self.ci_extrapolated,
            "envelope": list(self.envelope) if self.envelope else None,
            "envelope_ok": self.envelope_ok,
            "bias_report": self.bias_report,
        }


def _level_estimates(batch: PathBatch, levels, cfg):
    out = []
    for k, R in enumerate(levels):
        hit = int(batch.hit_before(k).sum())
        esc = int(batch.exited(k).sum())
        cen = batch.paths - hit - esc
        p, ci = _binomial(hit, batch.paths)
        out.append(LevelEstimate(float(R), p, ci, hit, esc, cen))
    worst = max(lv.n_censored for lv in out) / batch.paths
    if worst > cfg.censor_limit:
        raise HorizonError(f"{worst:.1%} of paths were censored; increase T_max or max_steps")
    return tuple(out)


def _extrapolate(batch: PathBatch, kappa):
    """Per-path ``h(4R) + (h(4R) - h(2R)) / (2**kappa - 1)`` averaged, with its 95% half width."""
    h2 = batch.hit_before(1).astype(float)
    h4 = batch.hit_before(2).astype(float)
    z = h4 + (h4 - h2) / (2.0**kappa - 1.0)
    return float(z.mean()), float(Z95 * z.std(ddof=1) / math.sqrt(z.size))


def estimate_single_ball_hit(exp: CharacteristicExponent, x_start, ball, cfg: SimConfig, model=None,
                             C_E=None, bias_check=False):
    """Probability of hitting ``ball = (center, radius)`` before leaving ``B(0, R_esc)``.

    Paths also record leaving ``B(0, 2 R_esc)`` and ``B(0, 4 R_esc)``; the
    three levels give an extrapolation to ``P(T_B < infinity)`` using the
    Green-function decay ``R**(beta - d)``.  With a Green ``model`` the
    extrapolated value is checked against the hitting envelope.
    """
    beta = stable_index(exp)
    d = exp.d
    center, radius = np.asarray(ball[0], float), float(ball[1])
    x_start = np.asarray(x_start, float)
    if radius <= 0:
        raise DomainError("ball radius must be positive")
    if np.linalg.norm(x_start - center) <= radius:
        lv = tuple(LevelEstimate(cfg.R_esc * m, 1.0, 0.0, cfg.paths, 0, 0) for m in (1, 2, 4))
        return HittingEstimate(1.0, 0.0, cfg.paths, 0, 0, lv, 1.0, 0.0)
    if np.linalg.norm(center) + radius >= cfg.R_esc or np.linalg.norm(x_start) >= cfg.R_esc:
        raise ConfigError("R_esc must enclose the ball and the start")
    levels = cfg.R_esc * np.array([1.0, 2.0, 4.0])
    obstacles = ObstacleIndex.build(center[None, :], [radius], d)
    batch = run_paths(exp, np.repeat(x_start[None, :], cfg.paths, axis=0), obstacles, levels, cfg)
    lv = _level_estimates(batch, levels, cfg)
    p_inf, ci_inf = _extrapolate(batch, d - beta)
    envelope = ok = None
    if model is not None:
        from .green import hitting_envelope
        env = hitting_envelope(model, center, radius, x_start, C_E=C_E)
        envelope = (env.lower, env.upper)
        slack = 3.0 * ci_inf / Z95
        ok = bool(env.lower - slack <= p_inf <= env.upper + slack)
    bias = None
    if bias_check:
        fine = estimate_single_ball_hit(exp, x_start, ball, cfg.refined(beta))
        bias = {"p_half_step": fine.p_hat, "difference": fine.p_hat - lv[0].p_hat,
                "richardson": 2 * fine.p_hat - lv[0].p_hat, "ci": fine.ci_half_width}
    head = lv[0]
    return HittingEstimate(head.p_hat, head.ci_half_width, head.n_hit, head.n_escape, head.n_censored, lv,
                           p_inf, ci_inf, envelope, ok, bias)


@dataclass(frozen=True)
class OvershootEstimate:
    r: float
    s: tuple
    p_sup: tuple
    ci: tuple
    worst_start: tuple
    per_start: dict
    exponent: float
    degenerate: str = ""

    def to_dict(self):
        return {"r": self.r, "s": list(self.s), "p_sup": list(self.p_sup), "ci": list(self.ci),
                "worst_start": list(self.worst_start), "exponent": self.exponent,
                "per_start": {str(k): list(v) for k, v in self.per_start.items()}, "degenerate": self.degenerate}


def estimate_overshoot(exp: CharacteristicExponent, r, s_values, cfg: SimConfig, start_fractions=(0.0, 0.5)):
    """``sup_x P_x(|X_tau| > s)`` for the exit time ``tau`` of ``B(0, r)`` over sampled starts.

    The exponent is the slope of ``log p`` against ``log(s / r)`` (sign
    flipped), fitted over the ``s`` with positive estimates.
    """
    s_values = np.asarray(s_values, float)
    if np.any(s_values < 2 * r):
        raise DomainError("overshoot radii must satisfy s >= 2r")
    d = exp.d
    step_cfg = replace(cfg, k_far=cfg.k_far or 5.0, k_sphere=50.0 if cfg.k_sphere == 100.0 else cfg.k_sphere)
    per_start = {}
    for f in start_fractions:
        x0 = np.zeros(d)
        x0[0] = f * r
        batch = run_paths(exp, np.repeat(x0[None, :], cfg.paths, axis=0), ObstacleIndex.empty(d),
                          np.array([float(r)]), step_cfg)
        if np.count_nonzero(~batch.exited(0)) > cfg.censor_limit * cfg.paths:
            raise HorizonError("too many paths never left the ball")
        dist = np.linalg.norm(np.nan_to_num(batch.exit_pos[:, 0, :]), axis=1)
        per_start[float(f)] = tuple(float(np.mean(dist > s)) for s in s_values)
    table = np.array(list(per_start.values()))
    best = table.argmax(axis=0)
    p_sup = table.max(axis=0)
    ci = [Z95 * math.sqrt(p * (1 - p) / cfg.paths) for p in p_sup]
    pos = p_sup > 0
    degenerate = ""
    exponent = float("nan")
    if not pos.any():
        degenerate = "no overshoot"
    elif np.all(p_sup >= 1):
        degenerate = "all paths overshoot"
    elif pos.sum() >= 2:
        exponent = float(-np.polyfit(np.log(s_values[pos] / r), np.log(p_sup[pos]), 1)[0])
    keys = list(per_start)
    return OvershootEstimate(float(r), tuple(map(float, s_values)), tuple(map(float, p_sup)), tuple(ci),
                             tuple(keys[i] for i in best), per_start, exponent, degenerate)


def estimate_escape(family, exp: CharacteristicExponent, truncation, cfg: SimConfig, x_start=None):
    """Probability of reaching ``|x| = R_esc`` before hitting any ball with ``|x_n| <= truncation``."""
    d = exp.d
    if truncation >= cfg.R_esc / 2:
        raise ConfigError("truncation radius must stay below R_esc / 2")
    centers, radii = family.balls_within(truncation)
    obstacles = ObstacleIndex.build(centers, radii, d)
    x0 = np.zeros(d) if x_start is None else np.asarray(x_start, float)
    batch = run_paths(exp, np.repeat(x0[None, :], cfg.paths, axis=0), obstacles, np.array([cfg.R_esc]), cfg)
    (lv,) = _level_estimates(batch, [cfg.R_esc], cfg)
    p, ci = _binomial(lv.n_escape, batch.paths)
    return HittingEstimate(p, ci, lv.n_hit, lv.n_escape, lv.n_censored, (lv,))


def escape_ladder(family, exp, truncations, cfg: SimConfig):
    """Escape estimates along increasing truncations with one shared seed and ``R_esc``.

    Returns the estimates and whether they are nonincreasing up to three
    standard errors.
    """
    ests = [estimate_escape(family, exp, T, cfg) for T in truncations]
    ok = all(b.p_hat <= a.p_hat + 3 * math.hypot(a.ci_half_width, b.ci_half_width) / Z95
             for a, b in zip(ests, ests[1:]))
    return ests, ok


@dataclass(frozen=True)
class RecursionRow:
    n: int
    R: float
    p: float
    p_next: float
    q: float
    t: float
    rhs: float
    slack: float
    holds: bool
    conditional_samples: int

    def to_dict(self):
        return dict(self.__dict__)


def recursion_diagnostic(family, exp: CharacteristicExponent, rho, n_levels, cfg: SimConfig, w=None,
                         start_radii=3, q_paths=None):
    """Check ``p_(n+1) <= p_n (q_n t_n + 1 - t_n)`` along ``B_n = B(0, rho**n)``.

    ``p_n`` is the probability of leaving ``B_n`` before hitting the family,
    ``t_n`` the conditional probability of leaving ``B_n`` into
    ``W_n = B(0, w rho**n)``, and ``q_n`` the largest sampled probability of
    leaving ``B_(n+1)`` before hitting, started in ``W_n`` outside ``B_n``.
    """
    d = exp.d
    w = math.sqrt(rho) if w is None else float(w)
    if not 1 < w < rho:
        raise ConfigError("need 1 < w < rho")
    radii = rho ** np.arange(1, n_levels + 1, dtype=float)
    centers, balls = family.balls_within(radii[-1])
    obstacles = ObstacleIndex.build(centers, balls, d)
    batch = run_paths(exp, np.zeros((cfg.paths, d)), obstacles, radii, cfg)
    q_cfg = replace(cfg, paths=q_paths or max(100, cfg.paths // 4))
    rows = []
    for n in range(n_levels - 1):
        left = batch.exited(n)
        k = int(left.sum())
        if k < 500:
            raise PrecisionError(f"only {k} paths left B_{n + 1}; at least 500 are needed, add paths")
        p, p_next = left.mean(), batch.exited(n + 1).mean()
        pos = np.linalg.norm(batch.exit_pos[left, n, :], axis=1)
        t = float(np.mean(pos < w * radii[n]))
        q = 0.0
        q_var = 0.0
        for m, frac in enumerate(np.linspace(0.0, 1.0, start_radii)):
            rad = radii[n] * (1 + frac * (w - 1)) * (1 - 1e-9)
            rad = max(rad, radii[n] * (1 + 1e-9))
            for sgn in (1.0, -1.0):
                y = np.zeros(d)
                y[0] = sgn * rad
                sub = run_paths(exp, np.repeat(y[None, :], q_cfg.paths, axis=0), obstacles,
                                radii[n + 1:n + 2], q_cfg, first_path=(n + 1) * 10**7 + (2 * m + (sgn < 0)) * 10**6)
                qq = float(sub.exited(0).mean())
                if qq > q:
                    q, q_var = qq, qq * (1 - qq) / q_cfg.paths
        rhs = p * (q * t + 1 - t)
        var = p_next * (1 - p_next) / cfg.paths + (p * (1 - p) / cfg.paths) * (q * t + 1 - t) ** 2 \
            + (p * t) ** 2 * q_var + (p * (1 - q)) ** 2 * t * (1 - t) / k
        slack = 3 * math.sqrt(var)
        rows.append(RecursionRow(n + 1, float(radii[n]), float(p), float(p_next), q, t, float(rhs), slack,
                                 bool(p_next <= rhs + slack), k))
    return rows


@dataclass(frozen=True)
class CEFit:
    C_E: float
    ci: float
    table: tuple

    def to_dict(self):
        return {"C_E": self.C_E, "ci": self.ci, "table": [dict(r) for r in self.table]}


def fit_CE(exp: CharacteristicExponent, model, cfg: SimConfig, ratios=(2, 4, 8, 16, 32, 64), r=1.0,
           R_factor=8.0, noise_limit=0.1):
    """Infimum over ``|x|/r`` of the extrapolated hit probability divided by ``G(|x|)/G(r)``."""
    d = exp.d
    table = []
    for k, ratio in enumerate(ratios):
        x0 = np.zeros(d)
        x0[0] = ratio * r
        sub = replace(cfg, R_esc=R_factor * ratio * r, seed=(cfg.seed + 7919 * k) % 2**64)
        est = estimate_single_ball_hit(exp, x0, (np.zeros(d), r), sub)
        g = float(model.upper(ratio * r) / model.lower(r))
        table.append({"ratio": float(ratio), "p": est.p_extrapolated, "ci": est.ci_extrapolated,
                      "green_ratio": g, "quotient": est.p_extrapolated / g, "quotient_ci": est.ci_extrapolated / g})
    i = int(np.argmin([row["quotient"] for row in table]))
    c_e, ci = table[i]["quotient"], table[i]["quotient_ci"]
    if c_e <= 0 or ci > noise_limit * c_e:
        raise PrecisionError(f"C_E estimate {c_e:.3g} +- {ci:.2g} is too noisy; add paths")
    return CEFit(float(min(c_e, 1.0)), float(ci), tuple(table))


EVENT_DTYPE_CACHE = {}


def event_dtype(d):
    """Packed record: path id u64, event code u8, time f64, position f64 x d."""
    if d not in EVENT_DTYPE_CACHE:
        EVENT_DTYPE_CACHE[d] = np.dtype([("path", "<u8"), ("code", "u1"), ("time", "<f8"), ("pos", "<f8", (d,))])
    return EVENT_DTYPE_CACHE[d]


def event_log(batch: PathBatch, starts, first_path=0):
    """Start, level-exit, hit and censor events of a batch in path order."""
    starts = np.atleast_2d(np.asarray(starts, float))
    d = batch.end.shape[1]
    rows = []
    for i in range(batch.paths):
        pid = first_path + i
        rows.append((pid, EVENT_START, 0.0, starts[i if starts.shape[0] > 1 else 0]))
        for k in np.argsort(batch.exit_time[i]):
            if batch.exit_time[i, k] >= 0:
                rows.append((pid, EVENT_EXIT, batch.exit_time[i, k], batch.exit_pos[i, k]))
        if batch.status[i] == HIT:
            rows.append((pid, EVENT_HIT, batch.time[i], batch.end[i]))
        elif batch.status[i] == CENSORED:
            rows.append((pid, EVENT_CENSOR, batch.time[i], batch.end[i]))
    out = np.empty(len(rows), dtype=event_dtype(d))
    for j, (pid, code, t, pos) in enumerate(rows):
        out[j] = (pid, code, t, pos)
    return out


def write_event_log(path, events):
    events.tofile(path)


def read_event_log(path, d):
    return np.fromfile(path, dtype=event_dtype(d))
