"""Avoidability classifiers built on truncated series, integrals and Wiener-type capacity sums.

Divergence cannot be read off finitely many terms, so every sum is
evaluated along a doubling schedule of truncation radii and its tail is
classified from the growth of the per-window increments.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.signal import fftconvolve
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .errors import ConfigError, DomainError, UnsupportedError
from .exponents import CharacteristicExponent
from .geometry import (
    BallFamily,
    RegularSpec,
    WhitneyCube,
    check_separation,
    lattice_shells,
    locate_arrays,
    whitney_decompose,
)
from .green import GreenModel, ball_capacity_bounds
from .interval import Interval

CONVERGES, DIVERGES, INDETERMINATE = "Converges", "Diverges", "Indeterminate"
AVOIDABLE, UNAVOIDABLE = "Avoidable", "Unavoidable"

DIVERGENCE_SLOPE = 0.05
DECAY_RATIO = 0.95
MIN_WINDOWS = 4
SATURATION_FRACTION = 0.25
PAIRWISE_LIMIT = 3000
AGGREGATION_CELLS = 48


@dataclass(frozen=True)
class Schedule:
    """Truncation radii ``start * 2**k`` for ``k = 0..doublings``."""

    start: float = 1.0
    doublings: int = 10

    def __post_init__(self):
        if self.doublings < MIN_WINDOWS:
            raise ConfigError(f"a schedule needs at least {MIN_WINDOWS} doubling steps")
        if self.start <= 0:
            raise ConfigError("schedule must start at a positive radius")

    @property
    def radii(self):
        return self.start * 2.0 ** np.arange(self.doublings + 1)

    @property
    def last(self):
        return float(self.radii[-1])


@dataclass(frozen=True)
class TailFit:
    classification: str
    exponent: float
    ratio: float
    window: int
    reason: str = ""


def classify_tail(radii, sums, eps_div=DIVERGENCE_SLOPE, decay_ratio=DECAY_RATIO):
    """Classify a nondecreasing sequence of partial sums from its tail increments.

    The tail holds the last ``max(4, K/2)`` windows (extended backwards until
    it contains four positive increments).  ``log(increment)`` is regressed on
    ``log(radius)``: slope above ``eps_div`` means Diverges, a per-doubling
    decay factor ``2**slope`` below ``decay_ratio`` means Converges.  An
    all-zero tail is a finished sum and Converges.
    """
    radii = np.asarray(radii, float)
    sums = np.asarray(sums, float)
    inc = np.diff(sums)
    K = inc.size
    if K < MIN_WINDOWS:
        raise ConfigError(f"need at least {MIN_WINDOWS} windows")
    scale = max(abs(sums[-1]), 1e-300)
    inc = np.where(np.abs(inc) <= 1e-13 * scale, 0.0, inc)
    if np.any(inc < 0):
        raise ValueError("partial sums must be nondecreasing")
    tail = max(MIN_WINDOWS, int(math.ceil(K / 2)))
    start = K - tail
    while start > 0 and np.count_nonzero(inc[start:] > 0) < MIN_WINDOWS:
        start -= 1
    window = inc[start:]
    x = np.log(radii[1:][start:])
    pos = window > 0
    if not np.any(inc[K - tail:] > 0):
        return TailFit(CONVERGES, -math.inf, 0.0, tail, "terminated")
    if np.count_nonzero(pos) < 2:
        return TailFit(INDETERMINATE, float("nan"), float("nan"), K - start, "too few increments")
    slope = float(np.polyfit(x[pos] / math.log(2), np.log2(window[pos]), 1)[0])
    ratio = 2.0**slope
    if slope > eps_div:
        cls = DIVERGES
    elif ratio < decay_ratio:
        cls = CONVERGES
    else:
        cls = INDETERMINATE
    return TailFit(cls, slope, ratio, K - start)


def classify_groups(scales, amounts, eps_div=DIVERGENCE_SLOPE, decay_ratio=DECAY_RATIO,
                    saturation=None, theta=SATURATION_FRACTION):
    """Tail classification from per-scale contributions instead of schedule windows.

    ``amounts[i]`` is the mass of the sum at ``scales[i]`` per doubling of
    radius (a Whitney generation or an annulus divided by its log2 width).
    Thresholds are those of :func:`classify_tail`.  ``saturation`` gives the
    largest possible amount per scale; amounts staying above ``theta`` times
    it over the last four scales also mean Diverges, since such a sum grows
    by a fixed fraction of its maximum at every scale.
    """
    scales = np.asarray(scales, float)
    amounts = np.asarray(amounts, float)
    n = amounts.size
    if n < MIN_WINDOWS:
        return TailFit(INDETERMINATE, float("nan"), float("nan"), n, "too few scales")
    top = max(float(amounts.max()), 1e-300)
    amounts = np.where(amounts <= 1e-13 * top, 0.0, amounts)
    tail = max(MIN_WINDOWS, int(math.ceil(n / 2)))
    start = n - tail
    while start > 0 and np.count_nonzero(amounts[start:] > 0) < MIN_WINDOWS:
        start -= 1
    if saturation is not None:
        sat = np.asarray(saturation, float)[-MIN_WINDOWS:]
        if np.all(sat > 0) and np.all(amounts[-MIN_WINDOWS:] >= theta * sat):
            return TailFit(DIVERGES, float("nan"), float("nan"), n - start, "saturated")
    if not np.any(amounts[n - tail:] > 0):
        return TailFit(CONVERGES, -math.inf, 0.0, tail, "terminated")
    w, x = amounts[start:], np.log2(scales[start:])
    pos = w > 0
    if np.count_nonzero(pos) < 2:
        return TailFit(INDETERMINATE, float("nan"), float("nan"), n - start, "too few increments")
    slope = float(np.polyfit(x[pos], np.log2(w[pos]), 1)[0])
    ratio = 2.0**slope
    if slope > eps_div:
        cls = DIVERGES
    elif ratio < decay_ratio:
        cls = CONVERGES
    else:
        cls = INDETERMINATE
    return TailFit(cls, slope, ratio, n - start)


@dataclass(frozen=True)
class SeriesVerdict:
    """Partial sums along a truncation schedule with their tail classification.

    ``partial_sums`` holds point values, or lower endpoints when
    ``upper_sums`` is present (envelope semantics).
    """

    radii: tuple
    partial_sums: tuple
    classification: str
    growth_exponent: float
    upper_sums: Optional[tuple] = None
    upper_growth: Optional[float] = None
    kind: str = "series"
    notes: tuple = ()

    def __post_init__(self):
        for seq in (self.partial_sums, self.upper_sums or ()):
            if any(b < a * (1 - 1e-12) for a, b in zip(seq, seq[1:])):
                raise ValueError("partial sums must be nondecreasing")

    @property
    def envelope(self):
        if self.upper_sums is None:
            return None
        return Interval(self.partial_sums[-1], self.upper_sums[-1])

    def to_dict(self):
        out = {
            "kind": self.kind,
            "classification": self.classification,
            "growth_exponent": _finite_or_none(self.growth_exponent),
            "radii": list(self.radii),
            "partial_sums": list(self.partial_sums),
            "notes": list(self.notes),
        }
        if self.upper_sums is not None:
            out["upper_sums"] = list(self.upper_sums)
            out["upper_growth"] = _finite_or_none(self.upper_growth)
            out["envelope"] = self.envelope.as_list()
        return out

    def csv_rows(self):
        upper = self.upper_sums or (None,) * len(self.radii)
        return [{"radius": r, "partial_sum": s, "upper_sum": "" if u is None else u}
                for r, s, u in zip(self.radii, self.partial_sums, upper)]


def _finite_or_none(x):
    return None if x is None or not math.isfinite(x) else x


def write_series_csv(path, verdict: SeriesVerdict):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["radius", "partial_sum", "upper_sum"])
        w.writeheader()
        w.writerows(verdict.csv_rows())


def _verdict(radii, lo, hi=None, kind="series", groups=None, notes=()):
    """Classify point sums, or both endpoints of interval sums.

    ``groups = (scales, lo_amounts, hi_amounts, saturation)`` switches the
    classification to per-scale contributions.
    """
    if groups is not None:
        scales, g_lo, g_hi, sat = groups
        lo_fit = classify_groups(scales, g_lo, saturation=sat)
    else:
        lo_fit = classify_tail(radii, lo)
    if hi is None:
        return SeriesVerdict(tuple(map(float, radii)), tuple(map(float, lo)), lo_fit.classification,
                             lo_fit.exponent, kind=kind, notes=tuple(notes) + _reason(lo_fit))
    hi_fit = classify_groups(scales, g_hi, saturation=sat) if groups is not None else classify_tail(radii, hi)
    cls = lo_fit.classification if lo_fit.classification == hi_fit.classification else INDETERMINATE
    # divergence of the lower endpoint or convergence of the upper one already settles the sum
    if lo_fit.classification == DIVERGES:
        cls = DIVERGES
    elif hi_fit.classification == CONVERGES:
        cls = CONVERGES
    return SeriesVerdict(tuple(map(float, radii)), tuple(map(float, lo)), cls, lo_fit.exponent,
                         tuple(map(float, hi)), hi_fit.exponent, kind,
                         tuple(notes) + _reason(lo_fit) + _reason(hi_fit))


def _reason(fit):
    return (fit.reason,) if fit.reason else ()


def _cumulative(norms, terms, radii):
    order = np.argsort(norms, kind="stable")
    csum = np.concatenate([[0.0], np.cumsum(terms[order])])
    k = np.searchsorted(norms[order], radii, side="right")
    return np.maximum.accumulate(csum[k])


def _schedule(schedule):
    return schedule if isinstance(schedule, Schedule) else Schedule(*schedule)


def series_criterion(family: BallFamily, model: GreenModel, schedule=Schedule()):
    """Partial sums of ``G(|x_n|) / G(r_n)`` along ``schedule``."""
    schedule = _schedule(schedule)
    radii = schedule.radii
    norms, r, mult = family.radial_terms(schedule.last)
    if model.is_exact:
        terms = mult * model.value(norms) / model.value(r) if len(r) else np.zeros(0)
        return _verdict(radii, _cumulative(norms, terms, radii))
    lo = mult * model.lower(norms) / model.upper(r) if len(r) else np.zeros(0)
    hi = mult * model.upper(norms) / model.lower(r) if len(r) else np.zeros(0)
    return _verdict(radii, _cumulative(norms, lo, radii), _cumulative(norms, hi, radii))


def psi_form_criterion(family: BallFamily, exp: CharacteristicExponent, schedule=Schedule()):
    """Partial sums of ``r_n**d psi(1/r_n) / (|x_n|**d psi(1/|x_n|))``."""
    schedule = _schedule(schedule)
    radii = schedule.radii
    norms, r, mult = family.radial_terms(schedule.last)
    if len(r):
        d = exp.d
        terms = mult * (r**d * exp(1.0 / r)) / (norms**d * exp(1.0 / norms))
    else:
        terms = np.zeros(0)
    return _verdict(radii, _cumulative(norms, terms, radii), kind="psi_form")


def _radius_law(spec_or_phi):
    if isinstance(spec_or_phi, RegularSpec):
        return spec_or_phi.phi
    if callable(spec_or_phi):
        return spec_or_phi
    raise ConfigError("expected a RegularSpec or a radius law")


def _check_decreasing(phi, lo, hi):
    r = np.logspace(math.log10(lo), math.log10(hi), 512)
    v = np.asarray(phi(r), float)
    if np.any(v <= 0) or np.any(np.diff(v) > 1e-12 * np.abs(v[:-1])):
        raise DomainError("radius law must be positive and nonincreasing")


def _window_integrals(f, radii):
    """``int f(r) dr`` over consecutive windows, integrated in ``log r``."""
    out = [0.0]
    for a, b in zip(radii[:-1], radii[1:]):
        val, _ = integrate.quad(lambda u: f(math.exp(u)) * math.exp(u), math.log(a), math.log(b),
                                epsabs=0.0, epsrel=1e-10, limit=200)
        out.append(val)
    return np.cumsum(out)


def integral_criterion(spec_or_phi, model: GreenModel, d=None, schedule=Schedule()):
    """``int_1^T r**(d-1) G(r) / G(phi(r)) dr`` along a schedule starting at 1."""
    schedule = _schedule(schedule)
    phi = _radius_law(spec_or_phi)
    d = model.d if d is None else d
    if d != model.d:
        raise ConfigError("dimension mismatch")
    radii = schedule.radii
    _check_decreasing(phi, radii[0], radii[-1])
    if model.is_exact:
        f = lambda r: r ** (d - 1) * float(model.value(r)) / float(model.value(float(phi(r))))
        return _verdict(radii, _window_integrals(f, radii), kind="integral")
    lo = lambda r: r ** (d - 1) * float(model.lower(r)) / float(model.upper(float(phi(r))))
    hi = lambda r: r ** (d - 1) * float(model.upper(r)) / float(model.lower(float(phi(r))))
    return _verdict(radii, _window_integrals(lo, radii), _window_integrals(hi, radii), kind="integral")


@dataclass(frozen=True)
class ConsistencyReport:
    windows: tuple
    sums: tuple
    integrals: tuple
    ratios: tuple
    band: float
    series_class: str
    integral_class: str

    @property
    def within(self):
        return lambda factor: self.band <= factor

    def to_dict(self):
        return {"windows": list(self.windows), "sums": list(self.sums), "integrals": list(self.integrals),
                "ratios": list(self.ratios), "band": self.band, "series": self.series_class,
                "integral": self.integral_class}


def series_integral_consistency(spec_or_phi, model: GreenModel, window=(5, 9), spacing=1.0, start=1.0):
    """Lattice sum of ``G(|x|)/G(phi(|x|))`` against the matching integral over ``[start, 2**k]``.

    Returns the ratio sum/integral per window and its band ``max/min``.
    """
    phi = _radius_law(spec_or_phi)
    k_lo, k_hi = window
    radii = start * 2.0 ** np.arange(0, k_hi + 1)
    norms, mult = lattice_shells(model.d, radii[-1], spacing, start)
    g = model.value if model.is_exact else model.reference
    terms = mult * g(norms) / g(np.asarray(phi(norms), float))
    sums = _cumulative(norms, terms, radii)
    f = lambda r: r ** (model.d - 1) * float(g(r)) / float(g(float(phi(r))))
    ints = _window_integrals(f, radii)
    sel = slice(k_lo, k_hi + 1)
    ratios = sums[sel] / ints[sel]
    s_cls = classify_tail(radii, sums).classification
    i_cls = classify_tail(radii, ints).classification
    return ConsistencyReport(tuple(radii[sel]), tuple(sums[sel]), tuple(ints[sel]), tuple(ratios),
                             float(ratios.max() / ratios.min()), s_cls, i_cls)


def union_capacity_bounds(model: GreenModel, centers, radii, inner_radii, container_radius=None):
    """Two-sided capacity of a union of (possibly clipped) balls.

    ``radii`` are the full ball radii (subadditive upper bound) and
    ``inner_radii`` the radii of balls known to lie inside the set (zero
    when unknown).  The lower bound is the larger of the best single piece
    and the energy bound ``(sum c)**2 / (sum c + E)``, where ``c`` are lower
    capacities of the inner balls and ``E`` bounds their mutual energy via
    ``G_hi`` of the gap between balls.  ``container_radius`` caps the upper
    bound by the capacity of an enclosing ball.
    """
    radii = np.asarray(radii, float)
    inner = np.asarray(inner_radii, float)
    if radii.size == 0:
        return 0.0, 0.0
    _, hi = ball_capacity_bounds(model, radii)
    upper = float(np.sum(hi))
    if container_radius is not None:
        upper = min(upper, float(ball_capacity_bounds(model, [container_radius])[1][0]))
    live = inner > 0
    if not live.any():
        return 0.0, upper
    c_lo, _ = ball_capacity_bounds(model, inner[live])
    best = float(c_lo.max())
    if live.sum() >= 2:
        energy = _cross_energy_bound(model, np.asarray(centers, float)[live], inner[live], c_lo)
        total = float(c_lo.sum())
        best = max(best, total * total / (total + energy))
    return min(best, upper), upper


def _min_gap(centers, radii):
    tree = cKDTree(centers)
    dist, _ = tree.query(centers, k=2)
    reach = float(dist[:, 1].min()) + 2 * float(radii.max())
    pairs = tree.query_pairs(reach, output_type="ndarray")
    gaps = np.linalg.norm(centers[pairs[:, 0]] - centers[pairs[:, 1]], axis=1) \
        - radii[pairs[:, 0]] - radii[pairs[:, 1]]
    return float(gaps.min())


def _cross_energy_bound(model, centers, radii, masses):
    """Upper bound on ``sum_{n != m} c_n c_m G(gap_nm)`` for disjoint balls."""
    k = len(radii)
    if k <= PAIRWISE_LIMIT:
        i, j = np.triu_indices(k, 1)
        gap = np.maximum(pdist(centers) - radii[i] - radii[j], 1e-300)
        return 2.0 * float(np.sum(masses[i] * masses[j] * model.upper(gap)))
    g_min = max(_min_gap(centers, radii), 1e-300)
    lo = centers.min(axis=0)
    span = float((centers.max(axis=0) - lo).max())
    h = max(span / (AGGREGATION_CELLS - 1), 1e-12)
    cell = np.floor((centers - lo) / h).astype(np.int64)
    shape = tuple(int(v) + 1 for v in cell.max(axis=0))
    mass = np.zeros(shape)
    np.add.at(mass, tuple(cell.T), masses)
    offs = np.meshgrid(*[np.arange(-(n - 1), n) for n in shape], indexing="ij")
    sep = h * np.sqrt(sum(np.maximum(0, np.abs(o) - 1) ** 2 for o in offs))
    kernel = model.upper(np.maximum(sep - 2 * float(radii.max()), g_min))
    total = float(np.sum(mass * fftconvolve(mass, kernel, mode="valid")))
    return max(0.0, total - float(np.sum(masses**2)) * float(model.upper(g_min)))


@dataclass(frozen=True)
class CubeUnion:
    """The set made of whole Whitney cubes selected by ``predicate(cube)``."""

    predicate: Callable = field(default=lambda cube: True, compare=False)
    d: int = 3


def _ball_cube_pieces(centers, radii):
    """Rows ``(ball, j, index..., inner radius)`` for every ball/cube intersection."""
    j, idx = locate_arrays(centers)
    side = 3.0 ** (j.astype(float) - 1)
    ctr = side[:, None] * idx
    face = np.min(side[:, None] / 2 - np.abs(centers - ctr), axis=1)
    inside = face >= radii
    rows = [np.column_stack([np.nonzero(inside)[0], j[inside], idx[inside], radii[inside]])]
    for b in np.nonzero(~inside)[0]:
        rows.append(_straddler_pieces(b, centers[b], radii[b]))
    return np.vstack(rows)


def _straddler_pieces(b, c, r):
    d = c.size
    spacing = 2 * r
    seen = {}
    for _ in range(12):
        m = max(1, int(math.ceil(2 * r / spacing)))
        axis = np.linspace(-r, r, m + 1)
        pts = c + np.stack(np.meshgrid(*([axis] * d), indexing="ij"), -1).reshape(-1, d)
        pts = pts[np.any(pts != 0, axis=1)]
        jj, ii = locate_arrays(pts)
        for a, row in zip(jj, ii):
            seen[(int(a), tuple(int(v) for v in row))] = None
        smallest = min(3.0 ** (a - 1) for a, _ in seen)
        if smallest >= spacing:
            break
        spacing = smallest
    out = []
    for a, row in sorted(seen):
        s = 3.0 ** (a - 1)
        ctr = s * np.asarray(row, float)
        gap = np.maximum(0.0, np.abs(c - ctr) - s / 2)
        if np.linalg.norm(gap) >= r:
            continue
        own = bool(np.all(np.abs(c - ctr) < s / 2))
        inner = min(r, float(np.min(s / 2 - np.abs(c - ctr)))) if own else 0.0
        out.append([b, a, *row, max(inner, 0.0)])
    return np.array(out, float).reshape(-1, d + 3)


def _check_subordinate(model):
    if not model.exp.is_subordinate:
        raise UnsupportedError("Wiener-type sums are defined here for subordinate Brownian motions")


def _family_balls(family, T):
    c, r = family.balls_within(T)
    if len(r):
        c, r = family.balls_within(T + float(r.max()))
    return np.asarray(c, float), np.asarray(r, float)


def _scale_groups(group_ids, lo, hi, sat, complete, width_log2, scale_of):
    """Per-scale totals (per doubling) for the complete groups, zero-filled."""
    if not len(group_ids):
        return None
    ids = np.asarray(group_ids, np.int64)
    first, last = int(ids.min()), int(complete)
    if last < first:
        return None
    span = np.arange(first, last + 1)
    out = []
    for vals in (lo, hi, sat):
        tot = np.zeros(span.size)
        sel = ids <= last
        np.add.at(tot, ids[sel] - first, np.asarray(vals, float)[sel])
        out.append(tot / width_log2)
    return (np.array([scale_of(k) for k in span]), *out)


def _interval_verdict(keys, lo, hi, radii, groups, kind):
    keys = np.asarray(keys, float)
    lo_s = _cumulative(keys, np.asarray(lo, float), radii)
    hi_s = _cumulative(keys, np.asarray(hi, float), radii)
    if groups is None:
        groups = (np.arange(1.0, MIN_WINDOWS + 1), *([np.zeros(MIN_WINDOWS)] * 3))
    return _verdict(radii, lo_s, hi_s, kind=kind, groups=groups)


def _complete_generation(d, T):
    """Largest generation whose cubes all lie in ``B(0, T)``."""
    return int(math.floor(math.log(T / (1.5 * math.sqrt(d)), 3) + 1 + 1e-12))


def wiener_whitney_sum(family_or_set, model: GreenModel, schedule=Schedule()):
    """Sum over Whitney cubes of ``G(diam Q) Cap(F intersect Q)``.

    Partial sums count a cube once its farthest point lies in ``B(0, T)``;
    the tail is classified per complete generation.  The capacity of each
    piece is bracketed by :func:`union_capacity_bounds`.
    """
    _check_subordinate(model)
    schedule = _schedule(schedule)
    radii = schedule.radii
    d = model.d
    if isinstance(family_or_set, CubeUnion):
        return _whitney_cube_union(family_or_set, model, radii)
    centers, balls = _family_balls(family_or_set, schedule.last)
    keys, gens, lo, hi, sat = [], [], [], [], []
    if len(balls):
        pieces = _ball_cube_pieces(centers, balls)
        cube_rows, inverse = np.unique(pieces[:, 1:2 + d].astype(np.int64), axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        order = np.argsort(inverse, kind="stable")
        bounds = np.searchsorted(inverse[order], np.arange(len(cube_rows) + 1))
        for g, row in enumerate(cube_rows):
            cube = WhitneyCube(int(row[0]), tuple(int(v) for v in row[1:]))
            far = cube.far_norm()
            if far > schedule.last:
                continue
            sel = order[bounds[g]:bounds[g + 1]]
            ball_idx = pieces[sel, 0].astype(np.int64)
            c_lo, c_hi = union_capacity_bounds(model, centers[ball_idx], balls[ball_idx], pieces[sel, -1],
                                               container_radius=cube.diameter / 2)
            diam = cube.diameter
            keys.append(far)
            gens.append(cube.j)
            lo.append(float(model.lower(diam)) * c_lo)
            hi.append(float(model.upper(diam)) * c_hi)
            sat.append(_cube_saturation(model, cube))
    groups = _scale_groups(gens, lo, hi, sat, _complete_generation(d, schedule.last), math.log2(3),
                           lambda j: 3.0 ** (j - 1))
    return _interval_verdict(keys, lo, hi, radii, groups, "wiener_whitney")


def _cube_saturation(model, cube):
    """Largest possible term of a cube: ``G_hi(diam)`` times the capacity of its circumscribed ball."""
    return float(model.upper(cube.diameter)) * float(ball_capacity_bounds(model, [cube.diameter / 2])[1][0])


def _whitney_cube_union(fset, model, radii):
    d = model.d
    j_max = _complete_generation(d, radii[-1])
    j_min = int(math.floor(math.log(radii[0] / (2 * math.sqrt(d)), 3)))
    keys, gens, lo, hi, sat = [], [], [], [], []
    for cube in whitney_decompose(d, j_min, j_max):
        diam = cube.diameter
        full = _cube_saturation(model, cube)
        keys.append(cube.far_norm())
        gens.append(cube.j)
        sat.append(full)
        if fset.predicate(cube):
            lo.append(float(model.lower(diam)) * float(ball_capacity_bounds(model, [cube.side / 2])[0][0]))
            hi.append(full)
        else:
            lo.append(0.0)
            hi.append(0.0)
    groups = _scale_groups(gens, lo, hi, sat, j_max, math.log2(3), lambda j: 3.0 ** (j - 1))
    return _interval_verdict(keys, lo, hi, radii, groups, "wiener_whitney")


def wiener_annuli_sum(family: BallFamily, model: GreenModel, lam=3.0, schedule=Schedule()):
    """Sum over annuli ``lam**n <= |x| < lam**(n+1)`` of ``G(lam**n) Cap(E intersect A_n)``.

    Annulus ``n`` counts towards truncation ``T`` once ``lam**(n+1) <= T``.
    """
    if lam <= 1:
        raise DomainError("lam must exceed 1")
    _check_subordinate(model)
    schedule = _schedule(schedule)
    radii = schedule.radii
    centers, balls = _family_balls(family, schedule.last)
    keys, ids, lo, hi, sat = [], [], [], [], []
    log_lam = math.log(lam)
    complete = int(math.floor(math.log(schedule.last) / log_lam + 1e-12)) - 1
    if len(balls):
        norms = np.linalg.norm(centers, axis=1)
        first = np.floor(np.log(np.maximum(norms - balls, 1e-300)) / log_lam + 1e-12).astype(np.int64)
        last = np.floor(np.log(norms + balls) / log_lam + 1e-12).astype(np.int64)
        own = np.floor(np.log(norms) / log_lam + 1e-12).astype(np.int64)
        for n in range(int(first.min()), min(int(last.max()), complete) + 1):
            sel = np.nonzero((first <= n) & (last >= n))[0]
            if not sel.size:
                continue
            outer = lam ** (n + 1)
            inner_r = np.where(own[sel] == n,
                               np.minimum.reduce([balls[sel], norms[sel] - lam**n, outer - norms[sel]]), 0.0)
            c_lo, c_hi = union_capacity_bounds(model, centers[sel], balls[sel], np.maximum(inner_r, 0.0),
                                               container_radius=outer)
            g_hi = float(model.upper(lam**n))
            keys.append(outer)
            ids.append(n)
            lo.append(float(model.lower(lam**n)) * c_lo)
            hi.append(g_hi * c_hi)
            sat.append(g_hi * float(ball_capacity_bounds(model, [outer])[1][0]))
    groups = _scale_groups(ids, lo, hi, sat, complete, math.log2(lam), lambda n: lam**n)
    return _interval_verdict(keys, lo, hi, radii, groups, f"wiener_annuli(lam={lam:g})")


def ratio_boundedness_test(spec_or_phi, model: GreenModel, d=None, window=(1.0, 2.0**16),
                           points_per_decade=20, eps=DIVERGENCE_SLOPE):
    """``Bounded`` or ``Unbounded`` for ``r**d G(r) / G(phi(r))`` on a log grid over ``window``.

    The lower envelope endpoint is used, so Unbounded is never claimed from
    the width of the envelope alone.
    """
    phi = _radius_law(spec_or_phi)
    d = model.d if d is None else d
    lo, hi = window
    r = np.logspace(math.log10(lo), math.log10(hi), int(points_per_decade * math.log10(hi / lo)) + 1)
    p = np.asarray(phi(r), float)
    vals = r**d * model.lower(r) / model.upper(p)
    half = r.size // 2
    slope = float(np.polyfit(np.log(r[half:]), np.log(vals[half:]), 1)[0])
    return ("Unbounded" if slope > eps else "Bounded"), slope


@dataclass(frozen=True)
class ClassifyOptions:
    schedule: Schedule = Schedule(1.0, 12)
    separation_radius: float = 64.0
    c0: Optional[float] = None
    integral_schedule: Schedule = Schedule(1.0, 16)


@dataclass(frozen=True)
class AvoidabilityVerdict:
    verdict: str
    basis: str
    series: Optional[SeriesVerdict] = None
    separation: Optional[object] = None
    integral: Optional[SeriesVerdict] = None
    ratio: Optional[tuple] = None

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "basis": self.basis,
            "series": self.series.to_dict() if self.series else None,
            "separation": self.separation.to_dict() if self.separation else None,
            "integral": self.integral.to_dict() if self.integral else None,
            "ratio": list(self.ratio) if self.ratio else None,
        }


def classify(family: BallFamily, exp: CharacteristicExponent, model: GreenModel,
             options: ClassifyOptions = ClassifyOptions()):
    """Avoidability verdict from the series, the integral test and the separation check.

    Unavoidable needs a divergent series with passing separation, a regular
    family with divergent integral, or an unbounded ratio for a regular
    family.  Avoidable needs a convergent series (or, for regular families,
    a convergent integral).  Anything else is Indeterminate.
    """
    if not (family.d == exp.d == model.d):
        raise ConfigError("dimension mismatch between family, exponent and Green model")
    series = series_criterion(family, model, options.schedule)
    integral = ratio = None
    if family.regular is not None:
        integral = integral_criterion(family.regular, model, schedule=options.integral_schedule)
        ratio = ratio_boundedness_test(family.regular, model)
    if series.classification == CONVERGES:
        return AvoidabilityVerdict(AVOIDABLE, "convergent_series", series, None, integral, ratio)
    if integral is not None:
        if integral.classification == DIVERGES:
            return AvoidabilityVerdict(UNAVOIDABLE, "regular_family_divergent_integral", series, None,
                                       integral, ratio)
        if ratio[0] == "Unbounded":
            return AvoidabilityVerdict(UNAVOIDABLE, "unbounded_ratio", series, None, integral, ratio)
        if integral.classification == CONVERGES:
            return AvoidabilityVerdict(AVOIDABLE, "regular_family_convergent_integral", series, None,
                                       integral, ratio)
    if series.classification == DIVERGES:
        T = min(options.separation_radius, options.schedule.last)
        sep = check_separation(family, exp, model, truncation=T, c0=options.c0)
        if sep.passed:
            return AvoidabilityVerdict(UNAVOIDABLE, "divergent_series_with_separation", series, sep,
                                       integral, ratio)
        return AvoidabilityVerdict(INDETERMINATE, "divergent_series_separation_fails", series, sep,
                                   integral, ratio)
    return AvoidabilityVerdict(INDETERMINATE, "no_certificate", series, None, integral, ratio)


def locate_threshold(values, classify_fn):
    """Midpoint between the last Diverges and the first Converges along increasing ``values``.

    Returns ``(flip, table)``; ``flip`` is ``None`` when the sweep does not
    show a Diverges-then-Converges pattern.
    """
    table = [(float(v), classify_fn(v)) for v in values]
    last_div = [v for v, c in table if c == DIVERGES]
    first_conv = [v for v, c in table if c == CONVERGES]
    if not last_div or not first_conv:
        return None, table
    a, b = max(last_div), min(first_conv)
    if a >= b:
        return None, table
    return 0.5 * (a + b), table
