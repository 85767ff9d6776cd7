"""Closed-form reference values computed independently of the package."""
import math

import mpmath
from scipy import special


def newton_annulus_hit(x, r, R):
    """Brownian motion in R^3 from radius ``x``: hit ``B(0, r)`` before leaving ``B(0, R)``."""
    return (1 / x - 1 / R) / (1 / r - 1 / R)


def stable_ball_hit(x, r, beta, d=3):
    """Symmetric stable process from radius ``x``: ever hit ``B(0, r)``."""
    return float(special.betainc((d - beta) / 2, beta / 2, (r / x) ** 2))


def stable_overshoot_from_center(r, s, beta):
    """From the centre of ``B(0, r)``: first exit lands outside ``B(0, s)``."""
    return float(special.betainc(beta / 2, 1 - beta / 2, (r / s) ** 2))


def riesz_green(r, beta, d=3):
    """Green function of the stable process, computed in mpmath."""
    A = mpmath.gamma((d - beta) / 2) / (mpmath.mpf(2) ** beta * mpmath.pi ** (mpmath.mpf(d) / 2)
                                        * mpmath.gamma(mpmath.mpf(beta) / 2))
    return float(A * mpmath.mpf(r) ** (beta - d))


def riesz_ball_capacity(r, beta, d=3):
    """Capacity of ``B(0, r)`` for the stable process via its equilibrium density.

    The density is ``c (1 - |y|**2)**(-beta/2)`` on the unit ball; ``c`` makes
    the potential at the centre equal to one.
    """
    b = mpmath.mpf(beta)
    A = mpmath.gamma((d - b) / 2) / (2 ** b * mpmath.pi ** (mpmath.mpf(d) / 2) * mpmath.gamma(b / 2))
    v_half = mpmath.mpf(0.5) ** mpmath.mpf(0.25)

    def radial(k):
        # integral of t**k (1 - t*t)**(-b/2) over [0, 1]; t = 1 - v**4 removes the endpoint singularity
        head = mpmath.quad(lambda t: t ** k * (1 - t * t) ** (-b / 2), [0, mpmath.mpf(0.5)])
        tail = mpmath.quad(lambda v: 4 * (1 - v ** 4) ** k * v ** (3 - 2 * b) * (2 - v ** 4) ** (-b / 2),
                           [0, v_half])
        return head + tail

    at_center = A * radial(b - 1)
    mass = radial(d - 1)
    return float(mass / at_center * mpmath.mpf(r) ** (d - beta))


def stable_threshold(beta, d=3):
    """Smallest ``gamma`` with a convergent power integral for ``phi = r**-gamma``."""
    return beta / (d - beta)


def poisson_growth_exponent(gamma, s, beta, d=3):
    """Growth exponent in ``T`` of the percolation integral for density ``r**-s`` and radii ``r**-gamma``.

    The integrand is ``r**(d-1) r**(beta-d) r**-s r**(-gamma (d-beta))``.
    """
    return d - s - (gamma + 1) * (d - beta)


def cauchy_median_norm_1d():
    """Median of ``|X|`` for a standard Cauchy variable."""
    return math.tan(math.pi / 4)
