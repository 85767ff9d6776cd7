"""Poissonian ball collections: intensities, realizations and expected capacity sums."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .criteria import (
    Schedule,
    _check_subordinate,
    _complete_generation,
    _cumulative,
    _schedule,
    _verdict,
    _window_integrals,
    union_capacity_bounds,
)
from .errors import ConfigError, DomainError, NumericError, UnsupportedError
from .geometry import Annulus, WhitneyCube, fibonacci_sphere, whitney_decompose, write_family_csv
from .green import GreenModel, ball_capacity_bounds, ball_volume, sphere_area
from .interval import Interval

MAX_EXPECTED_POINTS = 5e7
SPHERE_DIRECTIONS = 256
MIN_SEEDS = 50


@dataclass(frozen=True)
class IntensityModel:
    """Density ``mu`` and radius law ``phi`` of a Poisson ball collection.

    With ``radial=True`` both callables take norms ``|x|``; otherwise they
    take arrays of points of shape ``(n, d)``.
    """

    density: Callable = field(compare=False)
    radius: Callable = field(compare=False)
    C_P: float = 2.0
    d: int = 3
    radial: bool = True
    label: str = ""
    params: tuple = ()

    def __post_init__(self):
        if not self.C_P > 1:
            raise ConfigError("C_P must exceed 1")

    def mu(self, points):
        points = np.atleast_2d(np.asarray(points, float))
        arg = np.linalg.norm(points, axis=1) if self.radial else points
        return np.asarray(self.density(arg), float) * np.ones(points.shape[0])

    def phi(self, points):
        points = np.atleast_2d(np.asarray(points, float))
        arg = np.linalg.norm(points, axis=1) if self.radial else points
        return np.asarray(self.radius(arg), float) * np.ones(points.shape[0])

    def mu_radial(self, rho):
        """Density at norm ``rho``; non-radial models are averaged over the sphere."""
        if self.radial:
            return float(self.density(np.array([rho]))[0])
        return float(np.mean(self.mu(rho * _directions(self.d))))

    @classmethod
    def power_law(cls, gamma, s, d=3, mu0=1.0, phi0=0.25, C_P=None):
        """``mu = mu0 |x|**-s`` and ``phi = phi0 |x|**-gamma``."""
        if C_P is None:
            C_P = 1.05 * max(2.0**s, 2.0**gamma, 1.0)
        return cls(lambda r: mu0 * np.asarray(r, float) ** (-s), lambda r: phi0 * np.asarray(r, float) ** (-gamma),
                   C_P, d, True, f"power_law(gamma={gamma}, s={s})", (("gamma", gamma), ("s", s), ("mu0", mu0),
                                                                         ("phi0", phi0)))

    @classmethod
    def tabulated(cls, r, mu, phi, d=3, C_P=2.0):
        """Radial profiles interpolated linearly in log-log coordinates (constant beyond the table)."""
        lr = np.log(np.asarray(r, float))
        if np.any(np.diff(lr) <= 0):
            raise ConfigError("tabulated radii must increase")
        mu, phi = np.asarray(mu, float), np.asarray(phi, float)
        if np.any(mu < 0) or np.any(phi <= 0):
            raise ConfigError("density must be nonnegative and radii positive")
        lphi = np.log(phi)

        def density(x):
            x = np.log(np.asarray(x, float))
            return np.interp(x, lr, mu)

        def radius(x):
            return np.exp(np.interp(np.log(np.asarray(x, float)), lr, lphi))

        return cls(density, radius, C_P, d, True, "tabulated")

    def to_dict(self):
        return {"label": self.label, "C_P": self.C_P, "d": self.d, "params": dict(self.params)}


def _directions(d):
    if d == 3:
        return fibonacci_sphere(SPHERE_DIRECTIONS)
    if d == 2:
        t = np.linspace(0, 2 * math.pi, SPHERE_DIRECTIONS, endpoint=False)
        return np.column_stack([np.cos(t), np.sin(t)])
    if d == 1:
        return np.array([[1.0], [-1.0]])
    raise UnsupportedError("sphere averages are implemented for d <= 3")


@dataclass(frozen=True)
class ConditionResult:
    passed: bool
    value: float
    witness: Optional[tuple] = None

    def to_dict(self):
        return {"passed": self.passed, "value": self.value, "witness": list(self.witness) if self.witness else None}


@dataclass(frozen=True)
class ValidationReport:
    oscillation: ConditionResult
    radius_bound: ConditionResult
    capacity_density: ConditionResult
    smallest_C_P: float

    @property
    def passed(self):
        return self.oscillation.passed and self.radius_bound.passed and self.capacity_density.passed

    def to_dict(self):
        return {"passed": self.passed, "smallest_C_P": self.smallest_C_P,
                "oscillation": self.oscillation.to_dict(), "radius_bound": self.radius_bound.to_dict(),
                "capacity_density": self.capacity_density.to_dict()}


@dataclass(frozen=True)
class RadialGrid:
    r_min: float = 2.0
    r_max: float = 2000.0
    n: int = 40
    directions: int = 16
    neighbours: int = 24

    def __post_init__(self):
        if self.r_max / self.r_min < 1e3 * (1 - 1e-12):
            raise ConfigError("validation grid must span at least three decades of |x|")

    @property
    def norms(self):
        return np.geomspace(self.r_min, self.r_max, self.n)


def _ratio_spread(a, b):
    """``max(a/b, b/a)`` elementwise with ``0/0 = 1``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where((a == 0) & (b == 0), 1.0, np.maximum(a / b, b / a))
    return np.nan_to_num(r, nan=np.inf, posinf=np.inf)


def validate_intensity(m: IntensityModel, exp, model: GreenModel, grid: RadialGrid = RadialGrid()):
    """Grid checks of bounded oscillation on ``B(x, |x|/2)``, ``phi <= |x|/2`` and the capacity-density bound.

    The capacity-density quantity ``mu / (psi*(1/|x|) G(phi))`` is checked on
    the outer half (in log scale) of the grid and uses ``G_lo``.
    """
    d = m.d
    rng = np.random.Generator(np.random.Philox(key=0xC0DE))
    dirs = fibonacci_sphere(grid.directions) if d == 3 else _directions(d)[: grid.directions]
    worst_osc, osc_witness = 1.0, None
    worst_rad, rad_witness = -math.inf, None
    worst_cap, cap_witness = 0.0, None
    cut = math.sqrt(grid.r_min * grid.r_max)
    for rho in grid.norms:
        xs = rho * dirs
        mu_x, phi_x = m.mu(xs), m.phi(xs)
        # neighbours: radial extremes plus random points of B(x, |x|/2)
        v = rng.standard_normal((grid.neighbours, d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        scale = rho / 2 * rng.random(grid.neighbours) ** (1.0 / d)
        for i, x in enumerate(xs):
            u = x / rho
            ys = np.vstack([x + 0.5 * rho * u * (1 - 1e-12), x - 0.5 * rho * u * (1 - 1e-12), x + v * scale[:, None]])
            spread = np.maximum(_ratio_spread(m.mu(ys), mu_x[i]), _ratio_spread(m.phi(ys), phi_x[i]))
            k = int(np.argmax(spread))
            if spread[k] > worst_osc:
                worst_osc, osc_witness = float(spread[k]), (tuple(map(float, x)), tuple(map(float, ys[k])))
        excess = phi_x - rho / 2
        k = int(np.argmax(excess))
        if excess[k] > worst_rad:
            worst_rad, rad_witness = float(excess[k]), tuple(map(float, xs[k]))
        if rho >= cut:
            q = mu_x / (float(exp.psi_star(1.0 / rho)) * model.lower(phi_x))
            k = int(np.argmax(q))
            if q[k] > worst_cap:
                worst_cap, cap_witness = float(q[k]), tuple(map(float, xs[k]))
    osc = ConditionResult(worst_osc <= m.C_P, worst_osc, osc_witness if worst_osc > m.C_P else None)
    rad = ConditionResult(worst_rad <= 0, worst_rad, rad_witness if worst_rad > 0 else None)
    cap = ConditionResult(worst_cap <= m.C_P, worst_cap, cap_witness if worst_cap > m.C_P else None)
    return ValidationReport(osc, rad, cap, max(worst_osc, worst_cap, 1.0))


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or any(b < a for a, b in zip(self.lo, self.hi)):
            raise DomainError("box needs lo <= hi")

    @property
    def volume(self):
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def contains(self, points):
        p = np.atleast_2d(np.asarray(points, float))
        return np.all((p >= self.lo) & (p <= self.hi), axis=1)


@dataclass(frozen=True)
class PoissonRealization:
    window: object
    centers: np.ndarray
    radii: np.ndarray
    seed: int

    def __len__(self):
        return int(self.radii.size)

    def count_in(self, predicate):
        return int(np.count_nonzero(predicate(self.centers))) if len(self) else 0

    def write_csv(self, path):
        write_family_csv(path, self.centers, self.radii)


def _dominating(values, where):
    top = float(np.max(values)) if values.size else 0.0
    if not math.isfinite(top):
        raise DomainError(f"density is unbounded on {where}")
    return top


def _thin(m, rng, proposals, bound, where):
    if not len(proposals):
        return proposals
    mu = m.mu(proposals)
    if np.any(mu > bound * (1 + 1e-9)):
        raise NumericError(f"dominating constant exceeded on {where}", achieved=float(mu.max() / bound))
    return proposals[rng.random(len(proposals)) * bound < mu]


def _uniform_shell(rng, n, a, b, d):
    v = rng.standard_normal((n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    rad = (a**d + rng.random(n) * (b**d - a**d)) ** (1.0 / d)
    return v * rad[:, None]


def sample_realization(m: IntensityModel, window, seed=0, probe=33):
    """Inhomogeneous Poisson points by thinning against a constant on each dyadic sub-annulus.

    ``window`` is an :class:`Annulus` about the origin or a :class:`Box`.
    The dominating constant is the largest density on a probe grid; a
    proposal above it raises :class:`NumericError` instead of biasing the
    sample.
    """
    d = m.d
    root = np.random.SeedSequence(int(seed))
    if isinstance(window, Box):
        rng = np.random.Generator(np.random.Philox(root))
        axes = [np.linspace(a, b, 9) for a, b in zip(window.lo, window.hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
        bound = _dominating(m.mu(grid), "the box") * 1.25
        _check_count(bound * window.volume)
        n = rng.poisson(bound * window.volume)
        pts = np.asarray(window.lo) + rng.random((n, d)) * np.subtract(window.hi, window.lo)
        pts = _thin(m, rng, pts, bound, "the box")
        return PoissonRealization(window, pts, m.phi(pts) if len(pts) else np.zeros(0), int(seed))
    if window.center is not None and np.any(np.asarray(window.center) != 0):
        raise UnsupportedError("annular windows must be centred at the origin")
    a, b = window.inner, window.outer
    if b == 0 or a == b:
        return PoissonRealization(window, np.zeros((0, d)), np.zeros(0), int(seed))
    edges = [a]
    if a == 0:
        edges = [0.0, b * 2.0**-12]
    while edges[-1] < b:
        edges.append(min(b, 2 * edges[-1]))
    shells = list(zip(edges[:-1], edges[1:]))
    streams = root.spawn(len(shells))
    dirs = _directions(d) if not m.radial else np.eye(d)[:1]
    expected, parts = 0.0, []
    plans = []
    for (lo, hi), ss in zip(shells, streams):
        rs = np.linspace(lo, hi, probe)
        rs = rs[rs > 0] if lo == 0 else rs
        probe_pts = (rs[:, None, None] * dirs[None, :, :]).reshape(-1, d)
        bound = _dominating(m.mu(probe_pts), f"the shell [{lo:g}, {hi:g}]") * 1.25
        vol = ball_volume(d, hi) - ball_volume(d, lo)
        expected += bound * vol
        plans.append((lo, hi, ss, bound, vol))
    _check_count(expected)
    for lo, hi, ss, bound, vol in plans:
        rng = np.random.Generator(np.random.Philox(ss))
        n = rng.poisson(bound * vol)
        pts = _thin(m, rng, _uniform_shell(rng, n, lo, hi, d), bound, f"the shell [{lo:g}, {hi:g}]")
        parts.append(pts)
    pts = np.vstack(parts) if parts else np.zeros((0, d))
    return PoissonRealization(window, pts, m.phi(pts) if len(pts) else np.zeros(0), int(seed))


def _check_count(expected):
    if not math.isfinite(expected) or expected > MAX_EXPECTED_POINTS:
        raise DomainError(f"expected {expected:.3g} points; the density is not integrable enough on this window")


def expected_count(m: IntensityModel, window: Annulus):
    """``int_window mu`` by radial quadrature."""
    f = lambda r: sphere_area(m.d, 1.0) * r ** (m.d - 1) * m.mu_radial(r)
    val, _ = integrate.quad(f, window.inner, window.outer, limit=200, epsrel=1e-10)
    return float(val)


def percolation_integral(m: IntensityModel, model: GreenModel, schedule=Schedule(1.0, 24)):
    """``int_{|x|>1} G(x) mu(x) / G(phi(x)) dx`` along a doubling schedule starting at 1."""
    schedule = _schedule(schedule)
    radii = schedule.radii
    d = m.d
    area = sphere_area(d, 1.0)
    if m.radial:
        prof = lambda r, lo_g, hi_g: float(m.density(np.array([r]))[0]) * lo_g(r) / hi_g(float(m.radius(np.array([r]))[0]))
    else:
        dirs = _directions(d)

        def prof(r, lo_g, hi_g):
            pts = r * dirs
            return float(np.mean(m.mu(pts) / hi_g(m.phi(pts)))) * lo_g(r)

    def integrand(lo_g, hi_g):
        def f(r):
            val = area * r ** (d - 1) * prof(r, lo_g, hi_g)
            if not math.isfinite(val):
                raise NumericError(f"integrand is not finite at r={r:g}")
            return val
        return f

    if model.is_exact:
        g = lambda r: model.value(r)
        return _verdict(radii, _window_integrals(integrand(g, g), radii), kind="percolation_integral")
    lo = _window_integrals(integrand(model.lower, model.upper), radii)
    hi = _window_integrals(integrand(model.upper, model.lower), radii)
    return _verdict(radii, lo, hi, kind="percolation_integral")


def expected_wiener_sum(m: IntensityModel, model: GreenModel, schedule=Schedule(1.0, 24), j_min=1):
    """``sum_Q G(diam Q) mu(x_Q) |Q| / G(phi(x_Q))`` over Whitney cubes, evaluated at cube centres.

    Cubes enter partial sums once their farthest point lies in ``B(0, T)``;
    the tail is classified per complete generation.
    """
    _check_subordinate(model)
    schedule = _schedule(schedule)
    radii = schedule.radii
    d = m.d
    j_max = _complete_generation(d, schedule.last)
    if j_max < j_min:
        raise ConfigError("schedule too short for a complete Whitney generation")
    cubes = whitney_decompose(d, j_min, j_max + 1)
    centers = np.array([c.center for c in cubes])
    side = np.array([c.side for c in cubes])
    diam = side * math.sqrt(d)
    far = np.array([c.far_norm() for c in cubes])
    gens = np.array([c.j for c in cubes])
    mass = m.mu(centers) * side**d
    phi = m.phi(centers)
    if model.is_exact:
        lo = hi = model.value(diam) * mass / model.value(phi)
    else:
        lo = model.lower(diam) * mass / model.upper(phi)
        hi = model.upper(diam) * mass / model.lower(phi)
    keep = gens <= j_max
    per_gen = np.arange(j_min, j_max + 1)
    amounts = [np.array([np.sum(v[keep & (gens == j)]) for j in per_gen]) / math.log2(3) for v in (lo, hi)]
    groups = (3.0 ** (per_gen - 1.0), amounts[0], amounts[1], np.zeros(per_gen.size))
    lo_s = _cumulative(far, lo, radii)
    if model.is_exact:
        return _verdict(radii, lo_s, kind="expected_wiener", groups=groups)
    return _verdict(radii, lo_s, _cumulative(far, hi, radii), kind="expected_wiener", groups=groups)


@dataclass(frozen=True)
class CapacityExpectation:
    """Monte Carlo means of lower and upper capacity proxies of the random set inside a cube."""

    cube: WhitneyCube
    lower: float
    upper: float
    lower_ci: float
    upper_ci: float
    reference: float
    C4: float
    seeds: int
    mean_count: float

    @property
    def interval(self):
        return Interval(self.lower, self.upper)

    def to_dict(self):
        return {"generation": self.cube.j, "index": list(self.cube.index), "lower": self.lower, "upper": self.upper,
                "lower_ci": self.lower_ci, "upper_ci": self.upper_ci, "reference": self.reference, "C4": self.C4,
                "seeds": self.seeds, "mean_count": self.mean_count}


def _cube_mass(m, cube, n=8):
    d = m.d
    t = (np.arange(n) + 0.5) / n - 0.5
    grid = np.stack(np.meshgrid(*([t] * d), indexing="ij"), -1).reshape(-1, d)
    return float(np.mean(m.mu(cube.center + cube.side * grid))) * cube.side**d


def _packing(centers, inner):
    """Greedy disjoint sub-family, largest inner balls first."""
    order = np.argsort(-inner, kind="stable")
    order = order[inner[order] > 0]
    chosen = np.zeros(0, np.int64)
    for i in order:
        if np.all(np.linalg.norm(centers[chosen] - centers[i], axis=1) > inner[chosen] + inner[i]):
            chosen = np.append(chosen, i)
    return chosen


def empirical_capacity_expectation(m: IntensityModel, model: GreenModel, cube: WhitneyCube, seeds=100, seed=0):
    """Bracket ``E[Cap(A intersect Q)]`` for the Poisson ball union ``A``.

    The upper proxy sums the capacities of all balls meeting ``Q``.  The
    lower proxy is the energy bound for a disjoint packing of balls centred
    in ``Q`` and shrunk to fit inside it.  ``C4`` is the smallest constant
    with ``reference / C4 <= lower`` and ``upper <= C4 * reference`` where
    ``reference = mu(Q) / G(phi(x_Q))``.
    """
    if seeds < MIN_SEEDS:
        raise ConfigError(f"at least {MIN_SEEDS} seeds are required")
    if not model.is_exact:
        raise UnsupportedError("capacity expectations need an exact Green model")
    d = m.d
    lo_c, hi_c = cube.lower_corner, cube.upper_corner
    # balls meeting Q have centres within max phi of Q; bounded oscillation covers the margin itself
    probe = cube.center + cube.side * (np.stack(np.meshgrid(*([np.linspace(-0.5, 0.5, 9)] * d), indexing="ij"), -1)
                                       .reshape(-1, d))
    margin = m.C_P * float(np.max(m.phi(probe)))
    box = Box(tuple(lo_c - margin), tuple(hi_c + margin))
    lows, highs, counts = [], [], []
    for k in range(seeds):
        real = sample_realization(m, box, seed=(int(seed) << 20) + k)
        c, r = real.centers, real.radii
        if not len(real):
            lows.append(0.0)
            highs.append(0.0)
            counts.append(0)
            continue
        gap = np.linalg.norm(np.maximum(0.0, np.maximum(lo_c - c, c - hi_c)), axis=1)
        meet = gap <= r
        inside = np.all((c >= lo_c) & (c < hi_c), axis=1)
        counts.append(int(inside.sum()))
        highs.append(float(np.sum(ball_capacity_bounds(model, r[meet])[1])) if meet.any() else 0.0)
        if inside.any():
            ci, ri = c[inside], r[inside]
            inner = np.minimum(ri, np.min(np.minimum(ci - lo_c, hi_c - ci), axis=1))
            pick = _packing(ci, inner)
            low, _ = union_capacity_bounds(model, ci[pick], inner[pick], inner[pick])
            lows.append(float(low))
        else:
            lows.append(0.0)
    lows, highs = np.array(lows), np.array(highs)
    reference = _cube_mass(m, cube) / float(model.value(float(m.phi(cube.center[None, :])[0])))
    lower, upper = float(lows.mean()), float(highs.mean())
    if reference == 0:
        c4 = 1.0
    elif lower == 0:
        c4 = math.inf
    else:
        c4 = max(reference / lower, upper / reference, 1.0)
    z = 1.959963984540054 / math.sqrt(seeds)
    return CapacityExpectation(cube, lower, upper, float(z * lows.std(ddof=1)), float(z * highs.std(ddof=1)),
                               float(reference), float(c4), int(seeds), float(np.mean(counts)))


def capacity_constant_stability(m: IntensityModel, model: GreenModel, cubes, seeds=100, seed=0):
    """Capacity expectations for several cubes and the spread ``max C4 / min C4``."""
    ests = [empirical_capacity_expectation(m, model, q, seeds, seed) for q in cubes]
    c4 = [e.C4 for e in ests]
    return ests, float(max(c4) / min(c4))
