"""Ball families, regular-location checks and the Whitney decomposition of R^d minus the origin."""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.signal import fftconvolve
from scipy.spatial import cKDTree

from .errors import AssignmentError, ConfigError, DomainError
from .green import GreenModel

NET_FRACTION = 0.1
RADIUS_RTOL = 1e-12


@dataclass(frozen=True)
class Annulus:
    """Closed shell ``inner <= |x - center| <= outer`` (``center`` defaults to the origin)."""

    inner: float
    outer: float
    center: Optional[tuple] = None

    def __post_init__(self):
        if not 0 <= self.inner <= self.outer:
            raise DomainError("annulus needs 0 <= inner <= outer")

    def distances(self, points):
        points = np.atleast_2d(np.asarray(points, float))
        c = np.zeros(points.shape[1]) if self.center is None else np.asarray(self.center, float)
        return np.linalg.norm(points - c, axis=1)

    def contains(self, points):
        r = self.distances(points)
        return (r >= self.inner) & (r <= self.outer)


@dataclass(frozen=True)
class RegularSpec:
    """Separation ``eps``, density radius ``R`` and decreasing radius law ``phi``."""

    eps: float
    R: float
    phi: Callable = field(compare=False)
    label: str = ""

    def __post_init__(self):
        if self.eps <= 0 or self.R <= 0:
            raise ConfigError("eps and R must be positive")

    def radius(self, r):
        return np.asarray(self.phi(np.asarray(r, float)), float)

    def check_decreasing(self, lo=1.0, hi=1e6, n=512):
        r = np.logspace(math.log10(lo), math.log10(hi), n)
        v = self.radius(r)
        if np.any(v <= 0) or np.any(np.diff(v) > 0):
            raise DomainError(f"radius law {self.label or 'phi'} must be positive and nonincreasing")


def power_law(gamma, scale=1.0):
    """Radius law ``scale * r**-gamma``."""
    return lambda r: scale * np.asarray(r, float) ** (-gamma)


class BallFamily:
    """Collection of closed balls ``B(x_n, r_n)`` enumerated by ``|x_n|``.

    Subclasses implement :meth:`balls_within`; infinite families are always
    consumed through an explicit truncation radius.
    """

    d: int
    finite: bool = False
    regular: Optional[RegularSpec] = None

    def balls_within(self, T):
        """Centers and radii of all balls with ``|x_n| <= T``, sorted by norm."""
        raise NotImplementedError

    def radial_terms(self, T):
        """``(norms, radii, multiplicities)`` of the balls with ``|x_n| <= T``."""
        c, r = self.balls_within(T)
        return np.linalg.norm(c, axis=1), r, np.ones(len(r))

    def max_norm(self):
        """Largest center norm of a finite family."""
        raise NotImplementedError

    def to_spec(self):
        raise NotImplementedError

    def _validate(self, centers, radii):
        if np.any(radii <= 0):
            raise ConfigError("ball radii must be positive")
        norms = np.linalg.norm(centers, axis=1)
        bad = np.nonzero(norms <= radii)[0]
        if bad.size:
            raise ConfigError(f"ball {int(bad[0])} contains the origin")
        overlap = find_overlap(centers, radii)
        if overlap is not None:
            raise ConfigError(f"balls {overlap[0]} and {overlap[1]} intersect")


def find_overlap(centers, radii):
    """First pair of intersecting closed balls, or ``None``."""
    if len(radii) < 2:
        return None
    tree = cKDTree(centers)
    pairs = tree.query_pairs(2 * float(radii.max()), output_type="ndarray")
    if pairs.size == 0:
        return None
    gap = np.linalg.norm(centers[pairs[:, 0]] - centers[pairs[:, 1]], axis=1)
    hit = np.nonzero(gap <= radii[pairs[:, 0]] + radii[pairs[:, 1]])[0]
    if hit.size == 0:
        return None
    i, j = pairs[hit[0]]
    return int(min(i, j)), int(max(i, j))


class ExplicitFamily(BallFamily):
    finite = True

    def __init__(self, centers, radii, regular: Optional[RegularSpec] = None, check=True):
        centers = np.atleast_2d(np.asarray(centers, float))
        radii = np.asarray(radii, float).reshape(-1)
        if centers.shape[0] != radii.size:
            raise ConfigError("centers and radii differ in length")
        if radii.size == 0:
            centers = centers.reshape(0, centers.shape[1] if centers.size else 3)
        norms = np.linalg.norm(centers, axis=1)
        order = np.lexsort((*centers.T[::-1], norms)) if radii.size else np.arange(0)
        self.centers = centers[order]
        self.radii = radii[order]
        self._norms = norms[order]
        self.d = self.centers.shape[1]
        self.regular = regular
        if check and radii.size:
            self._validate(self.centers, self.radii)

    def __len__(self):
        return self.radii.size

    def balls_within(self, T):
        k = np.searchsorted(self._norms, T, side="right")
        return self.centers[:k], self.radii[:k]

    def max_norm(self):
        return float(self._norms[-1]) if self._norms.size else 0.0

    def to_spec(self):
        return {"type": "explicit", "centers": self.centers.tolist(), "radii": self.radii.tolist()}


def representation_counts(d, n_max):
    """``counts[n]`` = number of ``k`` in ``Z^d`` with ``|k|^2 = n``, for ``n <= n_max``."""
    one = np.zeros(n_max + 1)
    s = np.arange(0, math.isqrt(n_max) + 1)
    one[s * s] = 2.0
    one[0] = 1.0
    out = one
    for _ in range(d - 1):
        out = fftconvolve(out, one)[: n_max + 1]
    return np.rint(out).astype(np.int64)


def lattice_shells(d, T, spacing=1.0, min_norm=1.0):
    """Distinct norms of ``spacing * Z^d`` in ``[min_norm, T]`` and their multiplicities."""
    n_max = int(math.floor((T / spacing) ** 2))
    counts = representation_counts(d, n_max)
    n = np.nonzero(counts)[0]
    norms = spacing * np.sqrt(n)
    keep = (norms >= min_norm) & (norms <= T)
    return norms[keep], counts[n[keep]].astype(float)


class LatticeFamily(BallFamily):
    """Balls of radius ``phi(|x|)`` at the points of ``spacing * Z^d`` with ``|x| >= min_norm``."""

    def __init__(self, d, phi, spacing=1.0, min_norm=1.0, label="", eps=None, R=None):
        self.d = int(d)
        self.phi = phi
        self.spacing = float(spacing)
        self.min_norm = float(min_norm)
        self.label = label
        if float(phi(self.min_norm)) >= self.spacing / 2:
            raise ConfigError("lattice balls must have radius below half the spacing")
        if self.min_norm <= float(phi(self.min_norm)):
            raise ConfigError("lattice balls may not contain the origin")
        eps = 0.4 * self.spacing if eps is None else eps
        R = 0.9 * self.spacing * math.sqrt(self.d) if R is None else R
        self.regular = RegularSpec(eps, R, phi, label)

    def balls_within(self, T):
        m = int(math.floor(T / self.spacing))
        axis = np.arange(-m, m + 1, dtype=float) * self.spacing
        grid = np.stack(np.meshgrid(*([axis] * self.d), indexing="ij"), axis=-1).reshape(-1, self.d)
        norms = np.linalg.norm(grid, axis=1)
        keep = (norms >= self.min_norm) & (norms <= T)
        grid, norms = grid[keep], norms[keep]
        order = np.lexsort((*grid.T[::-1], norms))
        return grid[order], np.asarray(self.phi(norms[order]), float)

    def radial_terms(self, T):
        norms, mult = lattice_shells(self.d, T, self.spacing, self.min_norm)
        return norms, np.asarray(self.phi(norms), float), mult

    def to_spec(self):
        return {"type": "lattice", "d": self.d, "spacing": self.spacing, "min_norm": self.min_norm,
                "label": self.label}


class GeometricFamily(BallFamily):
    """Balls centred at ``base**n * e_1`` for ``n >= n_min`` with radius ``radius(n)``."""

    def __init__(self, d=3, base=2.0, radius=lambda n: 1.0, n_min=2, label=""):
        self.d = int(d)
        self.base = float(base)
        self.radius = radius
        self.n_min = int(n_min)
        self.label = label
        if self.base <= 1:
            raise ConfigError("base must exceed 1")
        self._validate(*self.balls_within(self.base ** (self.n_min + 40)))

    def balls_within(self, T):
        if T < self.base**self.n_min:
            return np.zeros((0, self.d)), np.zeros(0)
        n = np.arange(self.n_min, int(math.floor(math.log(T, self.base) + 1e-12)) + 1)
        c = np.zeros((n.size, self.d))
        c[:, 0] = self.base ** n.astype(float)
        return c, np.array([float(self.radius(int(k))) for k in n])

    def to_spec(self):
        return {"type": "geometric", "d": self.d, "base": self.base, "n_min": self.n_min,
                "label": self.label}


def fibonacci_sphere(n):
    """``n`` nearly uniform points on the unit sphere in R^3."""
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    theta = math.pi * (1 + math.sqrt(5)) * k
    rho = np.sqrt(1 - z * z)
    return np.column_stack([rho * np.cos(theta), rho * np.sin(theta), z])


class ShellFamily(BallFamily):
    """Balls on concentric spheres of radius ``shell * 2**t``, ``t = i / per_doubling``.

    The sphere at ``t`` carries ``round(count0 * 2**(q t) / per_doubling)``
    balls of radius ``radius0 * 2**(a t)`` (d = 3 only).  For a Green
    function decaying like ``r**(beta - d)`` the series mass per doubling
    scales like ``2**(t (q + (a - 1)(d - beta)))``, which makes convergence
    easy to dial in.
    """

    def __init__(self, count0=8, q=1.0, a=0.0, radius0=0.05, shell=1.5, per_doubling=1, t_max=40,
                 label=""):
        self.d = 3
        self.count0, self.q, self.a = float(count0), float(q), float(a)
        self.radius0, self.shell = float(radius0), float(shell)
        self.per_doubling = int(per_doubling)
        self.t_max = float(t_max)
        self.label = label
        if self.per_doubling < 1:
            raise ConfigError("per_doubling must be a positive integer")
        gap = 2.0 ** (1.0 / self.per_doubling) - 1
        for i in range(self.levels(math.inf)):
            n, r, R = self.level_size(i), self.level_radius(i), self.level_norm(i)
            # adjacent Fibonacci points are at least ~3.1 R / sqrt(n) apart
            if n > 1 and 2 * r >= 3.0 * R / math.sqrt(n):
                raise ConfigError(f"shell level {i} is too crowded for disjoint balls")
            if 2 * r >= gap * R or r >= R / 2:
                raise ConfigError(f"shell level {i} radius too large for the shell spacing")

    def levels(self, T):
        """Number of shells with radius at most ``T``."""
        if T < self.shell:
            return 0
        top = self.t_max if math.isinf(T) else min(self.t_max, math.log2(T / self.shell))
        return int(math.floor(top * self.per_doubling + 1e-9)) + 1

    def level_norm(self, i):
        return self.shell * 2.0 ** (i / self.per_doubling)

    def level_size(self, i):
        return max(1, int(round(self.count0 * 2.0 ** (self.q * i / self.per_doubling) / self.per_doubling)))

    def level_radius(self, i):
        return self.radius0 * 2.0 ** (self.a * i / self.per_doubling)

    def balls_within(self, T):
        cs, rs = [], []
        for i in range(self.levels(T)):
            n = self.level_size(i)
            cs.append(self.level_norm(i) * fibonacci_sphere(n))
            rs.append(np.full(n, self.level_radius(i)))
        if not cs:
            return np.zeros((0, 3)), np.zeros(0)
        return np.vstack(cs), np.concatenate(rs)

    def radial_terms(self, T):
        idx = range(self.levels(T))
        return (np.array([self.level_norm(i) for i in idx]), np.array([self.level_radius(i) for i in idx]),
                np.array([float(self.level_size(i)) for i in idx]))

    def to_spec(self):
        return {"type": "shell", "count0": self.count0, "q": self.q, "a": self.a, "radius0": self.radius0,
                "shell": self.shell, "per_doubling": self.per_doubling, "label": self.label}


@dataclass(frozen=True)
class SeparationReport:
    infimum: float
    witness: Optional[tuple]
    window_infima: tuple
    trend_slope: float
    passed: bool
    threshold: Optional[float]

    def to_dict(self):
        return {"infimum": self.infimum, "witness": self.witness, "window_infima": list(self.window_infima),
                "trend_slope": self.trend_slope, "pass": self.passed, "threshold": self.threshold}


def separation_quantity(family, model: GreenModel, T):
    """Per-ball ``|x_m - x_n|**d psi(1/|x_n|) G(r_n)`` with ``m`` the nearest other center."""
    centers, radii = family.balls_within(T)
    if len(radii) < 2:
        return centers, np.full(len(radii), np.inf), np.full(len(radii), -1)
    tree = cKDTree(centers)
    dist, idx = tree.query(centers, k=2)
    norms = np.linalg.norm(centers, axis=1)
    psi = model.exp(1.0 / norms)
    g = model.lower(radii)
    return centers, dist[:, 1] ** model.d * psi * g, idx[:, 1]


def check_separation(family: BallFamily, exp, model: GreenModel, truncation=None, c0=None,
                     slope_tol=0.05):
    """Infimum of the separation quantity over nearest-neighbour pairs.

    With a threshold ``c0`` the check passes iff the infimum reaches it.
    Without one, the infimum per doubling window must not decay: the fitted
    log-log slope of the window infima has to stay above ``-slope_tol``.
    """
    if exp.d != model.d:
        raise ConfigError("dimension mismatch between exponent and Green model")
    T = family.max_norm() if truncation is None else float(truncation)
    centers, q, nn = separation_quantity(family, model, T)
    if len(q) == 0:
        raise DomainError("empty family")
    k = int(np.argmin(q))
    inf = float(q[k])
    witness = (int(k), int(nn[k])) if nn[k] >= 0 else None
    norms = np.linalg.norm(centers, axis=1)
    edges = []
    top = T
    while top >= max(norms.min(), 1e-300) and len(edges) < 64:
        edges.append(top)
        top /= 2
    edges = edges[::-1]
    window = []
    lo = 0.0
    for hi in edges:
        sel = (norms > lo) & (norms <= hi)
        if sel.any():
            window.append((hi, float(q[sel].min())))
        lo = hi
    slope = 0.0
    if len(window) >= 3 and all(np.isfinite(v) for _, v in window):
        x = np.log([w[0] for w in window])
        y = np.log([w[1] for w in window])
        slope = float(np.polyfit(x, y, 1)[0])
    if c0 is not None:
        passed = inf >= c0
    else:
        passed = np.isfinite(inf) and slope >= -slope_tol
    return SeparationReport(inf, witness, tuple(v for _, v in window), slope, bool(passed), c0)


@dataclass(frozen=True)
class RegularReport:
    separation_ok: bool
    density_ok: bool
    radius_ok: bool
    separation_witness: Optional[tuple]
    density_witness: Optional[tuple]
    radius_witness: Optional[int]
    net_spacing: float

    @property
    def passed(self):
        return self.separation_ok and self.density_ok and self.radius_ok

    def to_dict(self):
        return {"pass": self.passed, "separation": self.separation_ok, "density": self.density_ok,
                "radius": self.radius_ok, "separation_witness": self.separation_witness,
                "density_witness": self.density_witness, "radius_witness": self.radius_witness,
                "net_spacing": self.net_spacing}


def check_regular_located(family: BallFamily, spec: RegularSpec, window: Annulus):
    """Check separation, uniform density and the radius law inside ``window``.

    Density is tested on a net of spacing ``R/10``: every net point ``y``
    with ``B(y, R)`` inside the window must have a center within ``R``. This
    is a semi-decision; a gap narrower than the net can slip through.
    """
    if not math.isfinite(window.outer):
        raise DomainError("window must be bounded")
    centers, radii = family.balls_within(window.outer)
    inside = window.contains(centers) if len(radii) else np.zeros(0, bool)
    c, r = centers[inside], radii[inside]

    sep_w = None
    if len(r) >= 2:
        dist, idx = cKDTree(c).query(c, k=2)
        k = int(np.argmin(dist[:, 1]))
        if dist[k, 1] <= 2 * spec.eps:
            sep_w = (c[k].tolist(), c[idx[k, 1]].tolist())

    delta = NET_FRACTION * spec.R
    m = int(math.ceil(window.outer / delta))
    axis = np.arange(-m, m + 1) * delta
    den_w = None
    tree = cKDTree(centers) if len(centers) else None
    for chunk in _net_chunks(axis, family.d):
        norms = np.linalg.norm(chunk, axis=1)
        ok = (norms - spec.R >= window.inner) & (norms + spec.R <= window.outer)
        pts = chunk[ok]
        if not len(pts):
            continue
        if tree is None:
            den_w = (pts[0].tolist(), spec.R)
            break
        dist, _ = tree.query(pts)
        bad = np.nonzero(dist > spec.R)[0]
        if bad.size:
            den_w = (pts[bad[0]].tolist(), spec.R)
            break

    rad_w = None
    if len(r):
        want = spec.radius(np.linalg.norm(c, axis=1))
        bad = np.nonzero(np.abs(r - want) > RADIUS_RTOL * np.abs(want))[0]
        if bad.size:
            rad_w = int(bad[0])
    return RegularReport(sep_w is None, den_w is None, rad_w is None, sep_w, den_w, rad_w, delta)


def _net_chunks(axis, d, chunk=200_000):
    """Cartesian net ``axis**d`` in row blocks to bound memory."""
    n = axis.size
    rows = max(1, chunk // n ** (d - 1)) if d > 1 else n
    for start in range(0, n, rows):
        first = axis[start:start + rows]
        grids = np.meshgrid(first, *([axis] * (d - 1)), indexing="ij")
        yield np.stack(grids, axis=-1).reshape(-1, d)


@dataclass(frozen=True, order=True)
class WhitneyCube:
    """Cube of generation ``j`` with side ``3**(j-1)`` and center ``side * index``.

    Cubes are half-open on their upper faces so the decomposition is an exact
    partition of R^d minus the origin.
    """

    j: int
    index: tuple

    @property
    def d(self):
        return len(self.index)

    @property
    def side(self):
        return 3.0 ** (self.j - 1)

    @property
    def center(self):
        return self.side * np.asarray(self.index, float)

    @property
    def diameter(self):
        return self.side * math.sqrt(self.d)

    @property
    def lower_corner(self):
        return self.center - self.side / 2

    @property
    def upper_corner(self):
        return self.center + self.side / 2

    def dist_to_origin(self):
        gap = np.maximum(0.0, np.abs(self.center) - self.side / 2)
        return float(np.linalg.norm(gap))

    def far_norm(self):
        """Norm of the point of the closed cube farthest from the origin."""
        return float(np.linalg.norm(np.abs(self.center) + self.side / 2))

    def contains(self, points):
        p = np.atleast_2d(np.asarray(points, float))
        return np.all((p >= self.lower_corner) & (p < self.upper_corner), axis=1)


_OFFSETS = {}


def _generation_indices(d):
    if d not in _OFFSETS:
        _OFFSETS[d] = [t for t in itertools.product((-1, 0, 1), repeat=d) if any(t)]
    return _OFFSETS[d]


def whitney_decompose(d, j_min, j_max):
    """All cubes of generations ``j_min..j_max``, ``3**d - 1`` per generation."""
    if j_min > j_max:
        raise DomainError("need j_min <= j_max")
    return [WhitneyCube(j, idx) for j in range(j_min, j_max + 1) for idx in _generation_indices(d)]


def cube_generation(points):
    """Generation of the cube containing each point (points must be nonzero)."""
    p = np.atleast_2d(np.asarray(points, float))
    if np.any(np.all(p == 0, axis=1)):
        raise DomainError("the origin is not covered by the decomposition")
    # point lies in generation j iff it is in [-3^j/2, 3^j/2)^d but not in the generation j-1 block
    with np.errstate(divide="ignore"):
        need_pos = np.where(p >= 0, np.floor(np.log(2 * np.abs(p)) / math.log(3)) + 1, -np.inf)
        need_neg = np.where(p < 0, np.ceil(np.log(2 * np.abs(p)) / math.log(3)), -np.inf)
    j = np.max(np.maximum(need_pos, need_neg), axis=1).astype(np.int64)
    for _ in range(3):
        half = 3.0 ** j.astype(float)[:, None] / 2
        too_small = np.any((p < -half) | (p >= half), axis=1)
        half_prev = half / 3
        too_big = np.all((p >= -half_prev) & (p < half_prev), axis=1)
        if not (too_small.any() or too_big.any()):
            break
        j = j + too_small - too_big
    return j


def locate_arrays(points):
    """Generations and index rows of the Whitney cubes containing ``points``."""
    p = np.atleast_2d(np.asarray(points, float))
    j = cube_generation(p)
    side = 3.0 ** (j.astype(float) - 1)[:, None]
    idx = np.clip(np.floor(p / side + 0.5).astype(np.int64), -1, 1)
    return j, idx


def locate(points):
    """Whitney cube containing each point."""
    j, idx = locate_arrays(points)
    return [WhitneyCube(int(jj), tuple(int(v) for v in row)) for jj, row in zip(j, idx)]


def assign_balls_to_cubes(family_or_centers, cubes):
    """Map each cube to the indices of the balls whose center it contains.

    Membership uses the half-open cubes, so a center on a shared face goes to
    the cube for which that face is a lower face.
    """
    if isinstance(family_or_centers, BallFamily):
        if not family_or_centers.finite:
            raise ConfigError("truncate infinite families before assignment")
        centers = family_or_centers.centers
    else:
        centers = np.atleast_2d(np.asarray(family_or_centers, float))
    cube_set = set(cubes)
    out = {c: [] for c in sorted(cube_set)}
    strays = []
    if len(centers) == 0:
        return out
    nonzero = ~np.all(centers == 0, axis=1)
    owners = locate(centers[nonzero]) if nonzero.any() else []
    it = iter(owners)
    for i, ok in enumerate(nonzero):
        cube = next(it) if ok else None
        if cube is None or cube not in cube_set:
            strays.append(i)
        else:
            out[cube].append(i)
    if strays:
        raise AssignmentError(f"{len(strays)} centers lie outside the supplied cubes", strays=strays)
    return out


def count_balls_in_annulus(family: BallFamily, x, r):
    """Number of centers with ``r <= |x_n - x| <= 2r``."""
    if r <= 0:
        raise DomainError("r must be positive")
    x = np.asarray(x, float)
    if isinstance(family, LatticeFamily) and not np.any(x):
        norms, _, mult = family.radial_terms(2 * r)
        return int(mult[norms >= r].sum())
    centers, _ = family.balls_within(float(np.linalg.norm(x)) + 2 * r)
    dist = np.linalg.norm(centers - x, axis=1)
    return int(np.count_nonzero((dist >= r) & (dist <= 2 * r)))


def fit_density_band(family: BallFamily, radii):
    """``(N_2, N_1)``: min and max of ``count(0, r) / r**d`` over ``radii``."""
    vals = np.array([count_balls_in_annulus(family, np.zeros(family.d), r) / r**family.d for r in radii])
    return float(vals.min()), float(vals.max())


def write_family_csv(path, centers, radii):
    centers = np.atleast_2d(np.asarray(centers, float))
    d = centers.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(d)] + ["r"])
        for c, r in zip(centers, radii):
            w.writerow([repr(float(v)) for v in c] + [repr(float(r))])


def read_family_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[-1] != "r":
        raise ConfigError("ball CSV needs columns x1..xd, r")
    data = np.array([[float(v) for v in row] for row in body], float).reshape(-1, len(header))
    return ExplicitFamily(data[:, :-1], data[:, -1])


def write_whitney_csv(path, cubes):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "index", "center", "side"])
        for c in cubes:
            w.writerow([c.j, " ".join(map(str, c.index)), " ".join(repr(float(v)) for v in c.center),
                        repr(c.side)])


def truncate(family: BallFamily, T):
    """The finite family of balls with ``|x_n| <= T``."""
    c, r = family.balls_within(T)
    return ExplicitFamily(c, r, regular=family.regular, check=False)
