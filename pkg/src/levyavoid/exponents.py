"""Characteristic exponents of isotropic unimodal Levy processes.

An exponent is stored through its radial profile ``psi(r)``, ``r = |xi|``,
together with the lower-scaling metadata ``(alpha, C_L)`` and, when known,
an upper index ``beta`` with constant ``C_U``.  The Brownian motion used
throughout has generator the Laplacian, so its exponent is ``r**2``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, EvaluationError

KINDS = ("stable", "brownian_plus_stable", "stable_sum", "subordinate_bm", "custom")

MONOTONE_SAMPLES = 1024
MONOTONE_SLACK = 1e-12
ENVELOPE_GRID = 100_000
ENVELOPE_REFINEMENTS = 3


@dataclass(frozen=True)
class GridSpec:
    """Log-spaced sweep grid for scaling checks."""

    lam_max: float = 1e4
    r_min: float = 1e-4
    r_max: float = 1e4
    per_decade: int = 200

    def __post_init__(self):
        if self.lam_max <= 1 or self.r_min <= 0 or self.r_max <= self.r_min:
            raise ConfigError("grid needs lam_max > 1 and 0 < r_min < r_max")
        if min(self.lam_decades, self.r_decades) < 2:
            raise ConfigError(
                f"grid spans {self.lam_decades:.2f} decades in lambda and "
                f"{self.r_decades:.2f} in r; at least 2 are required"
            )

    @property
    def lam_decades(self):
        return math.log10(self.lam_max)

    @property
    def r_decades(self):
        return math.log10(self.r_max / self.r_min)

    def lam_grid(self):
        n = int(round(self.lam_decades * self.per_decade)) + 1
        return np.logspace(0.0, math.log10(self.lam_max), n)

    def r_grid(self):
        n = int(round(self.r_decades * self.per_decade)) + 1
        return np.logspace(math.log10(self.r_min), math.log10(self.r_max), n)


@dataclass(frozen=True)
class ScalingReport:
    check: str
    passed: bool
    worst_ratio: float
    witness: dict
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "check": self.check,
            "pass": bool(self.passed),
            "worst_ratio": float(self.worst_ratio),
            "witness": self.witness,
            **self.details,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class BernsteinSpec:
    """Laplace exponent ``f`` of a subordinator with its (H1)/(H2) indices.

    ``a1..a4`` may be left as ``None``; :func:`verify_H1_H2` then fits them
    from the sweep.
    """

    f: Callable
    delta1: float
    delta2: float
    delta3: float
    delta4: float
    a1: Optional[float] = None
    a2: Optional[float] = None
    a3: Optional[float] = None
    a4: Optional[float] = None
    label: str = "f"

    def __post_init__(self):
        if self.delta1 > self.delta2 or self.delta3 > self.delta4:
            raise ConfigError("need delta1 <= delta2 and delta3 <= delta4")

    @property
    def alpha(self):
        return 2.0 * min(self.delta1, self.delta3)

    @property
    def beta(self):
        return 2.0 * max(self.delta2, self.delta4)

    def deltas_valid(self):
        return all(0.0 < x < 1.0 for x in (self.delta1, self.delta2, self.delta3, self.delta4))

    def __call__(self, t):
        return np.asarray(self.f(np.asarray(t, dtype=float)), dtype=float)

    @cached_property
    def global_constants(self):
        """Fitted ``(a5, a6)`` with ``a5 l^lo <= f(l t)/f(t) <= a6 l^hi`` for l >= 1."""
        lo, hi = self.alpha / 2.0, self.beta / 2.0
        lam = np.logspace(0, 4, 161)[:, None]
        t = np.logspace(-8, 8, 641)[None, :]
        ratio = self(lam * t) / self(t)
        a5 = float(np.min(ratio / lam**lo))
        a6 = float(np.max(ratio / lam**hi))
        return a5, a6


@dataclass(frozen=True)
class CharacteristicExponent:
    """Radial characteristic exponent with declared scaling metadata.

    Use the module-level constructors (:func:`stable`, :func:`brownian`, ...)
    rather than instantiating this class directly.
    """

    d: int
    kind: str
    params: tuple
    alpha: float
    C_L: float = 1.0
    beta: Optional[float] = None
    C_U: Optional[float] = None
    bernstein: Optional[BernsteinSpec] = None
    func: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown exponent kind {self.kind!r}")
        if self.d < 1:
            raise ConfigError("dimension must be a positive integer")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if not 0 < self.C_L <= 1:
            raise ConfigError("C_L must lie in (0, 1]")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        k, p = self.kind, self.params
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            if k == "stable":
                out = r ** p[0]
            elif k == "brownian_plus_stable":
                out = r**2 + r ** p[0]
            elif k == "stable_sum":
                out = r ** p[0] + r ** p[1]
            elif k == "subordinate_bm":
                out = np.where(r > 0, self.bernstein(np.where(r > 0, r * r, 1.0)), 0.0)
            else:
                out = np.asarray(self.func(r), dtype=float)
        if not np.all(np.isfinite(out)):
            raise EvaluationError(f"psi returned non-finite values for {self.describe()}")
        return out

    @property
    def is_stable(self):
        return self.kind == "stable"

    @property
    def is_brownian(self):
        return self.kind == "stable" and self.params[0] == 2.0

    @property
    def is_subordinate(self):
        """Whether the process is a subordinate Brownian motion."""
        return self.kind in ("stable", "brownian_plus_stable", "stable_sum", "subordinate_bm")

    @property
    def upper_index(self):
        return self.beta if self.beta is not None else 2.0

    def describe(self):
        if self.kind == "custom":
            return f"custom(d={self.d})"
        args = ", ".join(f"{x:g}" for x in self.params if isinstance(x, (int, float)))
        return f"{self.kind}({args}; d={self.d})"

    @cached_property
    def envelope(self):
        return MonotoneEnvelope(self)

    def psi_star(self, r):
        return self.envelope(r)

    def scaled(self, a):
        """The exponent ``xi -> psi(a xi) / psi*(a)`` of the rescaled process."""
        a = float(a)
        norm = float(self.psi_star(a))
        base = self
        return custom(
            lambda r: base(a * np.asarray(r, dtype=float)) / norm,
            d=self.d,
            alpha=self.alpha,
            C_L=self.C_L,
            beta=self.beta,
            C_U=self.C_U,
        )

    def to_dict(self):
        return {
            "kind": self.kind,
            "d": self.d,
            "params": [x for x in self.params if isinstance(x, (int, float))],
            "alpha": self.alpha,
            "C_L": self.C_L,
            "beta": self.beta,
            "C_U": self.C_U,
        }


class MonotoneEnvelope:
    """The nondecreasing envelope ``psi*(r) = sup_{s <= r} psi(s)``."""

    def __init__(self, source: CharacteristicExponent):
        self.source = source
        self.monotone = _detect_monotone(source)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise ValueError("psi* is defined for r >= 0")
        if self.monotone:
            return self.source(r)
        flat = np.atleast_1d(r).ravel()
        out = np.array([self._sup(x) for x in flat])
        return out.reshape(r.shape) if r.ndim else out[0]

    def _sup(self, r):
        psi = self.source
        if r == 0:
            return 0.0
        grid = np.logspace(math.log10(r) - 10, math.log10(r), ENVELOPE_GRID)
        vals = psi(grid)
        k = int(np.argmax(vals))
        best = float(vals[k])
        lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
        for _ in range(ENVELOPE_REFINEMENTS):
            sub = np.linspace(lo, hi, 65)
            sv = psi(sub)
            j = int(np.argmax(sv))
            best = max(best, float(sv[j]))
            lo, hi = sub[max(j - 1, 0)], sub[min(j + 1, sub.size - 1)]
        return max(best, float(psi(r)))


def _detect_monotone(exp):
    if exp.kind in ("stable", "brownian_plus_stable", "stable_sum"):
        return True
    r = np.logspace(-6, 6, MONOTONE_SAMPLES)
    v = exp(r)
    return bool(np.all(np.diff(v) >= -MONOTONE_SLACK * np.abs(v[:-1])))


def stable(beta, d=3):
    """Isotropic beta-stable exponent ``r**beta``; ``beta = 2`` is Brownian motion."""
    beta = float(beta)
    if not 0 < beta <= 2:
        raise ConfigError("stability index must lie in (0, 2]")
    return CharacteristicExponent(d, "stable", (beta,), alpha=beta, C_L=1.0, beta=beta, C_U=1.0)


def brownian(d=3):
    return stable(2.0, d)


def brownian_plus_stable(beta, d=3):
    """Independent sum of Brownian motion and a beta-stable process: ``r**2 + r**beta``."""
    beta = float(beta)
    if not 0 < beta < 2:
        raise ConfigError("stable part needs beta in (0, 2)")
    return CharacteristicExponent(d, "brownian_plus_stable", (beta,), alpha=beta, C_L=1.0,
                                  beta=2.0, C_U=1.0)


def stable_sum(a, b, d=3):
    """Sum of independent stable processes: ``r**a + r**b`` with ``a <= b``."""
    a, b = float(a), float(b)
    if not 0 < a <= b <= 2:
        raise ConfigError("need 0 < a <= b <= 2")
    return CharacteristicExponent(d, "stable_sum", (a, b), alpha=a, C_L=1.0, beta=b, C_U=1.0)


def subordinate_bm(spec: BernsteinSpec, d=3, C_L=None):
    """Subordinate Brownian motion with ``psi(r) = f(r**2)``."""
    a5, a6 = spec.global_constants
    C_L = min(1.0, a5) if C_L is None else C_L
    return CharacteristicExponent(d, "subordinate_bm", (spec.label,), alpha=spec.alpha, C_L=C_L,
                                  beta=spec.beta, C_U=max(1.0, a6), bernstein=spec)


def custom(func, d, alpha, C_L=1.0, beta=None, C_U=None):
    return CharacteristicExponent(d, "custom", (), alpha=float(alpha), C_L=float(C_L), beta=beta,
                                  C_U=C_U, func=func)


def eval_psi_star(exp: CharacteristicExponent, r):
    """Evaluate ``sup_{[0, r]} psi``; raises ``ValueError`` for negative ``r``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("r must be nonnegative")
    out = exp.psi_star(r)
    return float(out) if np.ndim(out) == 0 else out


def verify_lower_scaling(exp: CharacteristicExponent, grid: GridSpec = GridSpec()):
    """Sweep ``psi(l r) / (l**alpha psi(r))`` over the grid and compare with ``C_L``."""
    lam = grid.lam_grid()
    r = grid.r_grid()
    pr = exp(r)
    ratios = np.empty((lam.size, r.size))
    for i, l in enumerate(lam):
        ratios[i] = exp(l * r) / pr
    scaled = ratios / lam[:, None] ** exp.alpha
    i, j = np.unravel_index(np.argmin(scaled), scaled.shape)
    worst = float(scaled[i, j])
    # effective lower index: slope of the worst-case growth against lambda
    tail = lam > 1
    fitted = float(np.polyfit(np.log(lam[tail]), np.log(ratios[tail].min(axis=1)), 1)[0])
    return ScalingReport(
        check="lower_scaling",
        passed=worst >= exp.C_L * (1 - 1e-12),
        worst_ratio=worst,
        witness={"lambda": float(lam[i]), "r": float(r[j]), "ratio": worst},
        details={"fitted_alpha": fitted, "declared_alpha": exp.alpha, "C_L": exp.C_L},
    )


@dataclass(frozen=True)
class H1H2Report:
    reports: tuple
    alpha: float
    beta: float
    C_L: float
    C_U: float

    @property
    def passed(self):
        return all(r.passed for r in self.reports)

    def to_dict(self):
        return {
            "pass": self.passed,
            "reports": [r.to_dict() for r in self.reports],
            "alpha": self.alpha,
            "beta": self.beta,
            "C_L": self.C_L,
            "C_U": self.C_U,
        }


def verify_H1_H2(spec: BernsteinSpec, grid: GridSpec = GridSpec()):
    """Check the two-sided scaling of ``f`` above and below ``t = 1``.

    Missing constants ``a1..a4`` are fitted from the sweep, so the report then
    carries the smallest constants that work on the grid.
    """
    if not spec.deltas_valid():
        bad = ScalingReport("delta_range", False, float("nan"),
                            {"deltas": [spec.delta1, spec.delta2, spec.delta3, spec.delta4]},
                            {"reason": "every delta must lie in (0, 1)"})
        return H1H2Report((bad,), spec.alpha, spec.beta, float("nan"), float("nan"))
    lam_up = grid.lam_grid()
    t_up = np.logspace(0, math.log10(grid.r_max), int(round(math.log10(grid.r_max) * grid.per_decade)) + 1)
    lam_dn = 1.0 / lam_up
    t_dn = 1.0 / t_up

    def sweep(lam, t):
        return spec(lam[:, None] * t[None, :]) / spec(t)[None, :], lam

    reports = []
    ratio, lam = sweep(lam_up, t_up)
    reports.append(_bound_report("H1_lower", ratio, lam, t_up, spec.delta1, spec.a1, lower=True))
    reports.append(_bound_report("H1_upper", ratio, lam, t_up, spec.delta2, spec.a2, lower=False))
    ratio, lam = sweep(lam_dn, t_dn)
    reports.append(_bound_report("H2_lower", ratio, lam, t_dn, spec.delta4, spec.a3, lower=True))
    reports.append(_bound_report("H2_upper", ratio, lam, t_dn, spec.delta3, spec.a4, lower=False))
    a5, a6 = spec.global_constants
    return H1H2Report(tuple(reports), spec.alpha, spec.beta, a5, a6)


def _bound_report(name, ratio, lam, t, delta, const, lower):
    normed = ratio / lam[:, None] ** delta
    idx = np.argmin(normed) if lower else np.argmax(normed)
    i, j = np.unravel_index(idx, normed.shape)
    worst = float(normed[i, j])
    if const is None:
        passed = np.isfinite(worst) and worst > 0
        const = worst
    else:
        passed = worst >= const * (1 - 1e-12) if lower else worst <= const * (1 + 1e-12)
    return ScalingReport(name, bool(passed), worst,
                         {"lambda": float(lam[i]), "t": float(t[j]), "ratio": worst},
                         {"constant": float(const), "delta": delta})


@dataclass(frozen=True)
class TransienceReport:
    status: str
    d: int
    beta: Optional[float]
    reason: str

    def to_dict(self):
        return {"status": self.status, "d": self.d, "beta": self.beta, "reason": self.reason}


def validate_transience(exp: CharacteristicExponent):
    """Transient for ``d >= 3``; for ``d <= 2`` transient iff ``d > beta``."""
    if exp.d >= 3:
        return TransienceReport("Transient", exp.d, exp.beta, "d >= 3")
    if exp.kind == "subordinate_bm":
        beta = exp.bernstein.beta
    elif exp.is_subordinate:
        # stable kinds are subordinate with f(t) = t**(beta/2)
        beta = exp.upper_index
    else:
        raise ConfigError("d <= 2 needs a Bernstein-function description of the exponent")
    if exp.d > beta:
        return TransienceReport("Transient", exp.d, beta, f"d={exp.d} > beta={beta:g}")
    return TransienceReport("Unsupported", exp.d, beta, f"d={exp.d} <= beta={beta:g}")
