"""Internal quadrature helpers.

Finite pieces go through QUADPACK (which copes with integrable endpoint
singularities); infinite tails are summed over dyadic blocks with an
explicit remainder bound, which is far more robust than QAGI for the
slowly decaying, possibly oscillatory integrands that jump kernels
produce.
"""
from __future__ import annotations

import warnings
from functools import lru_cache

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from .errors import QuadratureFailure


@lru_cache(maxsize=None)
def gauss_legendre(n: int):
    """Nodes/weights on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


@lru_cache(maxsize=None)
def gauss_legendre_01(n: int):
    """Nodes/weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def quad_checked(f, a, b, tol=1e-8, limit=400, points=None):
    """scipy.integrate.quad with an error check.

    QUADPACK's own warnings are suppressed: the returned error estimate is
    checked instead.  It fails when the estimate exceeds the tolerance by
    more than two orders of magnitude (the estimator is routinely
    pessimistic near integrable singularities, so a strict comparison
    would produce false alarms).
    """
    kwargs = {"epsabs": tol, "epsrel": tol, "limit": limit}
    if points is not None and np.isfinite(a) and np.isfinite(b):
        pts = [p for p in points if a < p < b]
        if pts:
            kwargs["points"] = pts
    try:
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", IntegrationWarning)
            value, err = quad(f, a, b, **kwargs)
    except Exception as exc:  # pragma: no cover - scipy internal failures
        raise QuadratureFailure(f"quad failed on [{a}, {b}]: {exc}") from exc
    if not np.isfinite(value):
        raise QuadratureFailure(f"integral on [{a}, {b}] is not finite")
    if err > max(100.0 * tol, 1e-3 * max(1.0, abs(value))):
        raise QuadratureFailure(
            f"integral on [{a}, {b}] reached error {err:.2e} > tol {tol:.2e}"
        )
    return value


def dyadic_tail(f, a, tail_mass, tol=1e-8, sup_bound=None, max_blocks=200):
    """Sum int_a^inf f over blocks [a 2^k, a 2^(k+1)].

    ``tail_mass(r)`` must return the total absolute mass of the underlying
    measure beyond radius r; together with a bound on |g| (declared via
    ``sup_bound`` or estimated from the blocks already seen) it yields a
    rigorous stopping criterion.
    """
    if a <= 0:
        raise ValueError("dyadic tail needs a positive starting radius")
    total = 0.0
    lo = a
    observed = 0.0
    for _ in range(max_blocks):
        hi = 2.0 * lo
        block = quad_checked(f, lo, hi, tol=tol)
        total += block
        mid = 0.5 * (lo + hi)
        dens_scale = max(tail_mass(lo) - tail_mass(hi), 1e-300)
        observed = max(observed, abs(block) / dens_scale)
        bound = sup_bound if sup_bound is not None else 2.0 * max(observed, 1e-12)
        remainder = bound * tail_mass(hi)
        if abs(block) < 0.25 * tol and remainder < 0.5 * tol:
            return total
        lo = hi
    raise QuadratureFailure(f"tail integral from {a} did not converge")
