"""Green functions, ball capacities and hitting envelopes.

A :class:`GreenModel` is either *exact* (isotropic stable with ``beta < d``,
where ``G(r) = A(d, beta) r**(beta - d)``) or an *envelope*
``[C_G^-1, C_G] / (r**d psi*(1/r))`` whose constant is fitted against a
numerically computed Green function.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import mpmath
import numpy as np
from scipy import integrate, special

from .errors import ConfigError, DomainError, NumericError, UnsupportedError
from .exponents import CharacteristicExponent
from .interval import Interval

QUAD_ATOL = 1e-9
QUAD_RTOL = 1e-8


def riesz_constant(d, beta):
    """Normalising constant of the Riesz kernel ``|x|**(beta - d)``."""
    if not 0 < beta < d:
        raise DomainError("the Riesz kernel needs 0 < beta < d")
    return math.gamma((d - beta) / 2) / (2**beta * math.pi ** (d / 2) * math.gamma(beta / 2))


def riesz_capacity_factor(d, beta):
    """``Cap(B(0, 1)) * A(d, beta)`` for the stable Green function ``A r**(beta - d)``; 1 when ``beta = 2``."""
    return math.gamma(d / 2) / (math.gamma(d / 2 + 1 - beta / 2) * math.gamma(beta / 2))


def ball_volume(d, r=1.0):
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * r**d


def sphere_area(d, r=1.0):
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2) * r ** (d - 1)


def numeric_green(exp: CharacteristicExponent, r):
    """Green function from the inverse Fourier transform of ``1/psi``.

    Implemented for ``d <= 3`` as a one-dimensional oscillatory integral.
    """
    r = float(r)
    if r <= 0:
        raise DomainError("r must be positive")
    if exp.d == 3:
        first = _sine_transform(exp, r, 1)
        second = _sine_transform(exp, r, 2)
        if abs(first - second) <= 1e-7 * abs(first) and first > 0:
            return first / (2 * math.pi**2 * r)
        val = mpmath.quadosc(lambda t: mpmath.sin(t * r) * t / float(exp(float(t))),
                             [0, mpmath.inf], omega=r)
        return float(val) / (2 * math.pi**2 * r)
    if exp.d == 1:
        val = mpmath.quadosc(lambda t: mpmath.cos(t * r) / float(exp(float(t))),
                             [0, mpmath.inf], omega=r)
        return float(val) / math.pi
    if exp.d == 2:
        val = mpmath.quadosc(lambda t: mpmath.besselj(0, t * r) * t / float(exp(float(t))),
                             [0, mpmath.inf], zeros=lambda n: mpmath.besseljzero(0, n) / r)
        return float(val) / (2 * math.pi)
    raise UnsupportedError("numerical Green functions are implemented for d <= 3")


def _sine_transform(exp, r, periods):
    cut = periods * math.pi / r

    def head(t):
        return math.sin(r * t) * t / float(exp(t)) if t > 0 else 0.0

    v1, _ = integrate.quad(head, 0.0, cut, limit=400)
    v2, _ = integrate.quad(lambda t: t / float(exp(t)), cut, np.inf, weight="sin", wvar=r,
                           limlst=200)
    return v1 + v2


def _fit_constant(exp, green, r_min=1e-3, r_max=1e3, per_decade=4):
    r = np.logspace(math.log10(r_min), math.log10(r_max),
                    int(round(math.log10(r_max / r_min) * per_decade)) + 1)
    ref = r ** exp.d * exp.psi_star(1.0 / r)
    g = np.array([green(x) for x in r])
    ratio = g * ref
    return float(max(ratio.max(), (1.0 / ratio).max()) * (1 + 1e-9))


@dataclass(frozen=True)
class GreenModel:
    """Green function of the process with exponent ``exp``.

    ``parent``/``a`` describe the rescaled process whose Green function is
    ``a**-d psi*(a) G(x / a)``; ``C_E`` is the hitting-envelope constant when
    one is known or has been fitted.
    """

    exp: CharacteristicExponent
    mode: str
    C_G: float = 1.0
    C_E: Optional[float] = None
    parent: Optional["GreenModel"] = field(default=None, repr=False)
    a: float = 1.0

    def __post_init__(self):
        if self.mode not in ("exact", "envelope"):
            raise ConfigError("mode must be 'exact' or 'envelope'")
        if self.C_G < 1:
            raise ConfigError("C_G must be at least 1")

    @classmethod
    def exact(cls, exp, C_E=None):
        if not (exp.is_stable and exp.params[0] < exp.d):
            raise ConfigError("exact mode needs a stable exponent with beta < d")
        if C_E is None and exp.is_brownian:
            C_E = 1.0
        return cls(exp, "exact", 1.0, C_E)

    @classmethod
    def envelope(cls, exp, C_G=None, C_E=None):
        """Envelope model; ``C_G`` is fitted over six decades when omitted."""
        if C_G is None:
            C_G = fitted_green_constant(exp)
        return cls(exp, "envelope", float(C_G), C_E)

    @classmethod
    def for_exponent(cls, exp, mode="auto", **kw):
        if mode == "auto":
            mode = "exact" if exp.is_stable and exp.params[0] < exp.d else "envelope"
        return cls.exact(exp, **kw) if mode == "exact" else cls.envelope(exp, **kw)

    @property
    def d(self):
        return self.exp.d

    @property
    def is_exact(self):
        return self.mode == "exact"

    @property
    def riesz_index(self):
        """Stability index of the exact kernel."""
        base = self
        while base.parent is not None:
            base = base.parent
        return base.exp.params[0]

    def _scale_factor(self):
        return self.a ** (-self.d) * float(self.parent.exp.psi_star(self.a))

    def value(self, r):
        """Point value of ``G``; only available in exact mode."""
        r = _positive(r)
        if self.parent is not None:
            return self._scale_factor() * self.parent.value(r / self.a)
        if not self.is_exact:
            raise UnsupportedError("envelope models have no point value; use bounds()")
        beta = self.exp.params[0]
        return riesz_constant(self.d, beta) * r ** (beta - self.d)

    def lower(self, r):
        r = _positive(r)
        if self.parent is not None:
            return self._scale_factor() * self.parent.lower(r / self.a)
        if self.is_exact:
            return self.value(r)
        return 1.0 / (self.C_G * r**self.d * self.exp.psi_star(1.0 / r))

    def upper(self, r):
        r = _positive(r)
        if self.parent is not None:
            return self._scale_factor() * self.parent.upper(r / self.a)
        if self.is_exact:
            return self.value(r)
        return self.C_G / (r**self.d * self.exp.psi_star(1.0 / r))

    def bounds(self, r):
        return Interval(float(self.lower(r)), float(self.upper(r)))

    def scaled(self, a):
        """Green model of the rescaled process with exponent ``psi(a xi)/psi*(a)``."""
        if a <= 0:
            raise DomainError("scale must be positive")
        return GreenModel(self.exp.scaled(a), self.mode, self.C_G, self.C_E, parent=self, a=float(a))

    @cached_property
    def increment_c(self):
        return _increment_constant(self)

    @cached_property
    def _numeric_table(self):
        if self.is_exact:
            return None
        r = np.logspace(-4, 4, 97)
        try:
            g = np.array([numeric_green(self.exp, x) for x in r])
        except UnsupportedError:
            return None
        return np.log(r), np.log(g)

    def reference(self, r):
        """Best available point value: exact, numerical, or the envelope midpoint."""
        if self.is_exact:
            return self.value(r)
        table = self._numeric_table
        r = _positive(r)
        if table is not None and self.parent is None:
            return np.exp(np.interp(np.log(r), *table))
        return np.sqrt(self.lower(r) * self.upper(r))


_FITTED = {}


def fitted_green_constant(exp: CharacteristicExponent):
    """Smallest ``C_G`` putting ``G`` inside its envelope for ``r`` in [1e-3, 1e3]."""
    # custom exponents compare equal regardless of their function, so only named kinds are cached
    if exp.kind != "custom":
        if exp not in _FITTED:
            _FITTED[exp] = _fitted_green_constant(exp)
        return _FITTED[exp]
    return _fitted_green_constant(exp)


def _fitted_green_constant(exp):
    if exp.is_stable and exp.params[0] < exp.d:
        beta = exp.params[0]
        A = riesz_constant(exp.d, beta)
        return _fit_constant(exp, lambda r: A * r ** (beta - exp.d))
    if exp.d > 3:
        raise ConfigError("supply C_G explicitly for d > 3")
    return _fit_constant(exp, lambda r: numeric_green(exp, r))


def _positive(r):
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("radius must be positive")
    return r if r.ndim else float(r)


def green_eval(model: GreenModel, r):
    """``G(r)`` in exact mode, ``Interval(G_lo, G_hi)`` in envelope mode."""
    if model.is_exact:
        return float(model.value(r))
    return model.bounds(r)


def green_scaling_bounds(model: GreenModel, lam, r):
    """Bracket for ``G(lam r)`` in terms of ``G(r)`` for ``0 < lam <= 1``."""
    if not 0 < lam <= 1:
        raise DomainError("lam must lie in (0, 1]; use the reciprocal form otherwise")
    exp = model.exp
    g = model.bounds(r)
    C_G = model.C_G
    if exp.d <= 2:
        C_U = exp.C_U if exp.C_U is not None else 1.0
        lo = lam ** (exp.upper_index - exp.d) / (2 * C_U * C_G**2)
    else:
        lo = lam ** (2 - exp.d) / (4 * C_G**2)
    hi = C_G**2 / exp.C_L * lam ** (exp.alpha - exp.d)
    return Interval(lo * g.lo, hi * g.hi)


@dataclass(frozen=True)
class CapacityEstimate:
    lower: float
    upper: float
    exact: Optional[float] = None

    def __post_init__(self):
        if not (0 < self.lower <= self.upper):
            raise ValueError("capacity bounds must satisfy 0 < lower <= upper")
        if self.exact is not None and not (self.lower * (1 - 1e-12) <= self.exact <= self.upper * (1 + 1e-12)):
            raise ValueError("exact capacity outside its envelope")

    @property
    def best(self):
        if self.exact is not None:
            return Interval.point(self.exact)
        return Interval(self.lower, self.upper)

    def to_dict(self):
        return {"lower": self.lower, "upper": self.upper, "exact": self.exact}


def _green_mass_bound(model, r):
    """Upper bound for ``int_{B(0,r)} G`` from a dyadic decomposition of the ball."""
    r = np.asarray(r, dtype=float)
    if model.is_exact:
        beta = model.riesz_index
        k = float(model.value(1.0))
        return sphere_area(model.d) * k * r**beta / beta
    # on the shell r 2^-k-1 < t < r 2^-k: t^d G_hi(t) <= C_G / psi*(2^k / r)
    total = np.zeros_like(r, dtype=float)
    for k in range(400):
        t = r * 2.0 ** (-k)
        term = model.upper(t) * t**model.d
        total = total + term
        if np.all(term <= 1e-14 * total):
            break
    return sphere_area(model.d) * math.log(2) * total


def capacity_ball(model: GreenModel, r):
    """Two-sided capacity of the closed ball of radius ``r``.

    The lower bound is ``|B| / int_B G`` (uniform test measure) and the upper
    bound ``1 / G(2r)`` (the equilibrium potential is 1 on the ball).  Exact
    models also report the Riesz capacity, ``r**(d - beta) / A`` times
    :func:`riesz_capacity_factor`.
    """
    r = float(_positive(r))
    d = model.d
    lower = ball_volume(d, r) / float(_green_mass_bound(model, r))
    upper = 1.0 / float(model.lower(2 * r))
    exact = None
    if model.is_exact:
        beta = model.riesz_index
        exact = riesz_capacity_factor(d, beta) * r ** (d - beta) / float(model.value(1.0))
    return CapacityEstimate(lower, upper, exact)


def ball_capacity_bounds(model: GreenModel, radii):
    """Vectorised ``(lower, upper)`` capacities; exact models return the exact value twice."""
    radii = np.asarray(radii, dtype=float)
    if model.is_exact:
        beta = model.riesz_index
        cap = riesz_capacity_factor(model.d, beta) * radii ** (model.d - beta) / float(model.value(1.0))
        return cap, cap
    lower = ball_volume(model.d, 1.0) * radii**model.d / _green_mass_bound(model, radii)
    upper = 1.0 / model.lower(2 * radii)
    return lower, upper


def capacity_scaling_identity(model: GreenModel, a, radius=1.0):
    """Both sides of ``Cap^a(aB) = a**d psi*(a)**-1 Cap(B)`` for ``B = B(0, radius)``.

    The left side is computed from the rescaled Green function alone, the
    right side from the original model.
    """
    if a <= 0:
        raise DomainError("scale must be positive")
    left = capacity_ball(model.scaled(a), a * radius)
    right = capacity_ball(model, radius)
    factor = a**model.d / float(model.exp.psi_star(a))
    if model.is_exact:
        return left.exact, factor * right.exact
    return Interval(left.lower, left.upper), Interval(factor * right.lower, factor * right.upper)


@dataclass(frozen=True)
class HittingEnvelope:
    lower: float
    upper: float
    C_E: Optional[float]

    def __post_init__(self):
        if not 0 <= self.lower <= self.upper <= 1:
            raise ValueError("need 0 <= lower <= upper <= 1")

    def to_dict(self):
        return {"lower": self.lower, "upper": self.upper, "C_E": self.C_E}


def hitting_envelope(model: GreenModel, x0, r, x, C_E=None):
    """Envelope for ``P_x(hit B(x0, r))``; a missing ``C_E`` gives lower bound 0."""
    if r <= 0:
        raise DomainError("radius must be positive")
    dist = float(np.linalg.norm(np.asarray(x, float) - np.asarray(x0, float)))
    C_E = model.C_E if C_E is None else C_E
    if dist <= r:
        return HittingEnvelope(1.0, 1.0, C_E)
    upper = min(1.0, float(model.upper(dist) / model.lower(r)))
    lower = 0.0 if C_E is None else min(upper, C_E * float(model.lower(dist) / model.upper(r)))
    return HittingEnvelope(lower, upper, C_E)


def capacity_equivalent_radius(model: GreenModel, r):
    """Radius ``eta`` of the Euclidean ball whose volume equals ``Cap(B(0, r))``."""
    cap = capacity_ball(model, r)
    unit = ball_volume(model.d)
    if cap.exact is not None:
        return (cap.exact / unit) ** (1.0 / model.d)
    return Interval((cap.lower / unit) ** (1.0 / model.d), (cap.upper / unit) ** (1.0 / model.d))


def increment_constant(model: GreenModel):
    """Smallest ``c`` with ``|G(u)-G(v)| <= c min(1/2, |u-v|/min(u,v)) G(min(u,v))`` on a grid."""
    return model.increment_c


def _increment_constant(model):
    u = np.logspace(-2, 2, 81)
    U, V = np.meshgrid(u, u, indexing="ij")
    m = np.minimum(U, V)
    gu, gv = model.reference(U), model.reference(V)
    scale = np.minimum(0.5, np.abs(U - V) / m) * model.reference(m)
    mask = scale > 0
    return float(np.max(np.abs(gu - gv)[mask] / scale[mask]) * (1 + 1e-9))


def green_increment_bound(model: GreenModel, x, y, c=None):
    """Bound on ``|G(x) - G(y)|``; defined for subordinate Brownian motions."""
    if not model.exp.is_subordinate:
        raise UnsupportedError("the increment bound is stated for subordinate Brownian motions")
    x, y = np.asarray(x, float), np.asarray(y, float)
    nx, ny = float(np.linalg.norm(x)), float(np.linalg.norm(y))
    if nx == 0 or ny == 0:
        raise DomainError("points must differ from the origin")
    c = increment_constant(model) if c is None else c
    m = min(nx, ny)
    return c * min(0.5, float(np.linalg.norm(x - y)) / m) * float(model.reference(m))


def _cap_fraction(d, t, dist, r):
    """Fraction of the sphere of radius ``t`` lying inside ``B(x, r)`` with ``|x| = dist``."""
    if dist == 0:
        return 1.0 if t <= r else 0.0
    if t <= r - dist:
        return 1.0
    if t >= r + dist or t <= dist - r:
        return 0.0
    cos_t = (t * t + dist * dist - r * r) / (2 * t * dist)
    cos_t = min(1.0, max(-1.0, cos_t))
    if d == 1:
        return 0.5
    s2 = 1 - cos_t * cos_t
    half = 0.5 * special.betainc((d - 1) / 2, 0.5, s2)
    return half if cos_t >= 0 else 1 - half


def m_psi_ball(exp: CharacteristicExponent, x, r):
    """``int_{B(x,r)} psi*(1/|y|) dy`` by radial quadrature around the origin."""
    if r <= 0:
        raise DomainError("radius must be positive")
    x = np.asarray(x, float)
    dist = float(np.linalg.norm(x))
    d = exp.d
    area = sphere_area(d)

    def integrand(t):
        if t <= 0:
            return 0.0
        return area * t ** (d - 1) * float(exp.psi_star(1.0 / t)) * _cap_fraction(d, t, dist, r)

    lo, hi = max(0.0, dist - r), dist + r
    points = sorted({p for p in (abs(r - dist), dist) if lo < p < hi})
    val, err = integrate.quad(integrand, lo, hi, points=points or None, epsabs=QUAD_ATOL,
                              epsrel=QUAD_RTOL, limit=500)
    if err > max(QUAD_ATOL, QUAD_RTOL * abs(val)) * 10:
        raise NumericError(f"m_psi quadrature reached only {err:.2e}", achieved=err)
    return val


GREEN_CSV_COLUMNS = ("r", "G_lo", "G", "G_hi", "Cap_lo", "Cap", "Cap_hi")


def green_table(model: GreenModel, radii):
    rows = []
    for r in radii:
        cap = capacity_ball(model, r)
        g = model.bounds(r)
        rows.append({
            "r": float(r),
            "G_lo": g.lo,
            "G": float(model.value(r)) if model.is_exact else "",
            "G_hi": g.hi,
            "Cap_lo": cap.lower,
            "Cap": cap.exact if cap.exact is not None else "",
            "Cap_hi": cap.upper,
        })
    return rows


def write_green_csv(path, model: GreenModel, radii):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=GREEN_CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(green_table(model, radii))
