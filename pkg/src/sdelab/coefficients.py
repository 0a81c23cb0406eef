"""Construction of the scale transform for SDEs with irregular drift.

The drift enters only through a continuous antiderivative ``beta``; the
actual drift may be a genuine distribution.  Everything is built from the
mollified drift potential

    Sigma_w(x) = 2 * int_0^x (beta * rho'_w)(y) / (sigma * rho_w)(y)^2 dy,

evaluated at a ladder of decreasing widths ``w``.  The derivative always
lands on the mollifier, never on ``beta``.  The limit table defines the
strictly increasing scale transform ``h`` with ``h' = exp(-Sigma)``, and
generator evaluations are conjugated through ``h`` so that the merely
Hoelder-continuous potential is never differentiated.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from ._quad import gauss_legendre, quad_checked
from .errors import NonConvergent, QuadratureFailure, RangeError

_MOLL_NODES = 48
_SEG_NODES = 8


def _pchip(x, y):
    """Monotone cubic; silences the harmonic-mean overflow that scipy's
    construction emits on near-flat (noise-scale) segments."""
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return PchipInterpolator(x, y)


# ---------------------------------------------------------------------------
# specs
# ---------------------------------------------------------------------------

@dataclass
class DriftSpec:
    """Drift given through its continuous antiderivative.

    ``beta_prime`` is optional and only present when the drift happens to
    be a classical function; it is used for cross-checks, never for the
    potential construction.
    """

    beta: Callable[[np.ndarray], np.ndarray]
    beta_prime: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "drift"

    def validate(self, probes=(-1.0, 0.0, 0.7), tol=1e-3):
        for p in probes:
            v = float(np.asarray(self.beta(np.asarray(p))))
            if not np.isfinite(v):
                raise ValueError(f"beta not finite at {p}")
        if self.beta_prime is not None:
            eps = 1e-6
            for p in probes:
                num = (float(self.beta(np.asarray(p + eps)))
                       - float(self.beta(np.asarray(p - eps)))) / (2 * eps)
                ref = float(np.asarray(self.beta_prime(np.asarray(p))))
                if abs(num - ref) > tol * (1.0 + abs(ref)):
                    raise ValueError(
                        f"beta_prime inconsistent with beta at {p}: {num} vs {ref}"
                    )


@dataclass
class DiffusionSpec:
    sigma: Callable[[np.ndarray], np.ndarray]
    sigma_min: float
    sigma_max: float
    name: str = "diffusion"

    def validate_on(self, grid):
        vals = np.asarray(self.sigma(np.asarray(grid, dtype=float)))
        if self.sigma_min <= 0:
            raise ValueError("sigma_min must be positive")
        if np.any(vals < self.sigma_min - 1e-12) or np.any(vals > self.sigma_max + 1e-12):
            raise ValueError("sigma leaves its declared [sigma_min, sigma_max] band")


@dataclass
class MollifierConfig:
    widths: tuple = (0.02, 0.01, 0.005)
    quadrature_tol: float = 1e-8
    convergence_tol: float = 1e-4
    shape: str = "gaussian"  # or "bump"

    def __post_init__(self):
        w = tuple(float(v) for v in self.widths)
        if len(w) == 0 or any(v <= 0 for v in w):
            raise ValueError("widths must be a nonempty positive sequence")
        if any(b >= a for a, b in zip(w, w[1:])):
            raise ValueError("widths must be strictly decreasing")
        if self.quadrature_tol <= 0 or self.convergence_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.shape not in ("gaussian", "bump"):
            raise ValueError(f"unknown mollifier shape {self.shape!r}")
        self.widths = w


# ---------------------------------------------------------------------------
# mollifiers
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _bump_norm():
    # normalisation of exp(-1/(1-t^2)) on (-1, 1)
    val = quad_checked(lambda t: np.exp(-1.0 / (1.0 - t * t)), -1.0, 1.0, tol=1e-13)
    return val


def _mollifier_tables(shape: str, width: float):
    """Positive-axis nodes with even rho and odd rho' values.

    Convolutions are folded onto u > 0, which kills the catastrophic
    cancellation that a raw quadrature of f * rho' suffers from (rho'
    integrates to zero against constants only up to quadrature error).
    """
    x, w01 = gauss_legendre(_MOLL_NODES)
    if shape == "gaussian":
        half = 8.0 * width
        u = 0.5 * half * (x + 1.0)
        qw = 0.5 * half * w01
        rho = np.exp(-0.5 * (u / width) ** 2) / (width * np.sqrt(2.0 * np.pi))
        rho_p = -(u / width**2) * rho
    else:
        half = width
        u = 0.5 * half * (x + 1.0)
        qw = 0.5 * half * w01
        t = np.clip(u / width, 0.0, 1.0 - 1e-12)
        core = np.exp(-1.0 / (1.0 - t * t)) / (_bump_norm() * width)
        rho = core
        rho_p = core * (-2.0 * t / (1.0 - t * t) ** 2) / width
    return u, qw, rho, rho_p


def mollified_drift_derivative(beta, x, width, shape="gaussian"):
    """(beta * rho'_w)(x) on an array of points."""
    u, qw, _, rho_p = _mollifier_tables(shape, width)
    X = np.asarray(x, dtype=float)[..., None]
    vals = (beta(X - u) - beta(X + u)) * rho_p
    return vals @ qw


def mollified_function(fn, x, width, shape="gaussian"):
    """(fn * rho_w)(x) on an array of points."""
    u, qw, rho, _ = _mollifier_tables(shape, width)
    X = np.asarray(x, dtype=float)[..., None]
    vals = (fn(X - u) + fn(X + u)) * rho
    return vals @ qw


def smooth_cutoff(a):
    """C-infinity transition equal to 1 for a <= -1 and 0 for a >= 0."""
    a = np.asarray(a, dtype=float)

    def psi(t):
        out = np.zeros_like(t)
        pos = t > 0
        out[pos] = np.exp(-1.0 / t[pos])
        return out

    num = psi(-a)
    den = num + psi(1.0 + a)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)
    return out


def plateau_cutoff(x, n):
    """Smooth cutoff equal to 1 on [-n, n] and 0 outside [-(n+1), n+1]."""
    return smooth_cutoff(np.abs(x) - n - 1.0)


# ---------------------------------------------------------------------------
# potential table
# ---------------------------------------------------------------------------

def _cumulative_table(integrand, grid, nodes=_SEG_NODES):
    """Cumulative integral of ``integrand`` along ``grid``, anchored at 0."""
    gx, gw = gauss_legendre(nodes)
    mid = 0.5 * (grid[1:] + grid[:-1])
    half = 0.5 * np.diff(grid)
    pts = mid[:, None] + half[:, None] * gx[None, :]
    vals = integrand(pts)
    seg = (vals * gw[None, :]).sum(axis=1) * half
    csum = np.concatenate([[0.0], np.cumsum(seg)])
    i0 = int(np.argmin(np.abs(grid)))
    return csum - csum[i0]


def _holder_fit(grid, values):
    """Exponent/constant fit from the dyadic modulus of continuity."""
    n = len(grid)
    diffs = np.diff(grid)
    dx = float(diffs[0])
    uniform = np.allclose(diffs, dx, rtol=1e-9, atol=1e-12)
    lags, moduli = [], []
    lag = 1
    while lag <= max(1, n // 4):
        gap = np.max(np.abs(values[lag:] - values[:-lag]))
        scale = lag * dx if uniform else np.max(grid[lag:] - grid[:-lag]) / 1.0
        if gap > 0:
            lags.append(scale)
            moduli.append(gap)
        lag *= 2
    if len(moduli) < 2:
        return 1.0, 0.0
    ls, lm = np.log(np.asarray(lags)), np.log(np.asarray(moduli))
    slope, _ = np.polyfit(ls, lm, 1)
    alpha = float(np.clip(slope, 0.0, 1.0))
    # constant over all pairs at the fitted exponent
    const = 0.0
    for lag in range(1, n):
        gap = np.abs(values[lag:] - values[:-lag])
        sep = np.abs(grid[lag:] - grid[:-lag])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(sep > 0, gap / sep**alpha, 0.0)
        const = max(const, float(np.max(ratio, initial=0.0)))
    return alpha, const


@dataclass
class DriftPotential:
    """Tabulated drift potential at the finest mollifier width."""

    grid: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    alpha: float = 1.0
    holder_const: float = 0.0
    sup_bound: float = 0.0
    converged: bool = True
    level_gap: float = 0.0
    widths: tuple = ()

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        i0 = int(np.argmin(np.abs(self.grid)))
        if abs(self.grid[i0]) > 1e-12:
            raise ValueError("potential grid must contain 0")
        if abs(self.values[i0]) > 1e-12:
            raise ValueError("potential must vanish at 0")
        self._interp = _pchip(self.grid, self.values)

    def __call__(self, x):
        return self._interp(x)

    @classmethod
    def zero(cls, grid):
        grid = np.asarray(grid, dtype=float)
        return cls(grid=grid, values=np.zeros_like(grid))


def compute_drift_potential(drift: DriftSpec, diffusion: DiffusionSpec,
                            moll: MollifierConfig, grid, strict=True,
                            shape=None) -> DriftPotential:
    """Tabulate the potential at the finest width of the mollifier ladder.

    Convergence is judged by the sup-grid gap between the two finest
    levels; in strict mode a gap above ``convergence_tol`` raises
    NonConvergent (the construction is then not trustworthy for these
    coefficients).
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 3 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be a sorted 1-d array with >= 3 nodes")
    if np.min(np.abs(grid)) > 1e-12:
        raise ValueError("grid must contain 0")
    shape = shape or moll.shape
    diffusion.validate_on(grid)

    def integrand_for(width):
        def integrand(pts):
            num = mollified_drift_derivative(drift.beta, pts, width, shape)
            den = mollified_function(diffusion.sigma, pts, width, shape)
            return 2.0 * num / den**2
        return integrand

    tables = []
    for width in moll.widths:
        integ = integrand_for(width)
        tab = _cumulative_table(integ, grid, nodes=_SEG_NODES)
        if not np.all(np.isfinite(tab)):
            raise QuadratureFailure("potential table is not finite")
        tables.append(tab)
    # segment-quadrature self check at the finest width
    fine = _cumulative_table(integrand_for(moll.widths[-1]), grid, nodes=2 * _SEG_NODES)
    disc = float(np.max(np.abs(fine - tables[-1])))
    if disc > max(moll.quadrature_tol, 1e-12 * (1.0 + np.max(np.abs(fine)))):
        raise QuadratureFailure(
            f"segment quadrature of the potential off by {disc:.2e}"
        )

    if len(tables) >= 2:
        gap = float(np.max(np.abs(tables[-1] - tables[-2])))
    else:
        gap = 0.0
    converged = gap < moll.convergence_tol
    if strict and not converged:
        raise NonConvergent(
            f"mollification levels differ by {gap:.3e} > {moll.convergence_tol:.1e}"
        )
    values = tables[-1]
    alpha, const = _holder_fit(grid, values)
    return DriftPotential(
        grid=grid, values=values, alpha=alpha, holder_const=const,
        sup_bound=float(np.max(np.abs(values))), converged=converged,
        level_gap=gap, widths=moll.widths,
    )


# ---------------------------------------------------------------------------
# scale transform
# ---------------------------------------------------------------------------

@dataclass
class ScaleTransform:
    """Strictly increasing transform with derivative exp(-potential).

    The derivative table equals exp(-potential) at every node by
    construction; values are cumulative quadrature of the interpolated
    derivative.  Inversion brackets through the value table, bisects and
    finishes with Newton steps on the monotone interpolant.
    """

    grid: Optional[np.ndarray] = field(default=None, repr=False)
    h_values: Optional[np.ndarray] = field(default=None, repr=False)
    hprime_values: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.grid is None:
            self._h = self._hp = self._inv = None
            return
        self.grid = np.asarray(self.grid, dtype=float)
        self.h_values = np.asarray(self.h_values, dtype=float)
        self.hprime_values = np.asarray(self.hprime_values, dtype=float)
        if np.any(np.diff(self.h_values) <= 0):
            raise ValueError("transform values must be strictly increasing")
        self._h = _pchip(self.grid, self.h_values)
        self._hp = _pchip(self.grid, self.hprime_values)
        # monotone interpolant of the inverse: the Newton starting guess
        self._inv = _pchip(self.h_values, self.grid)

    # -- identity ----------------------------------------------------------
    @classmethod
    def identity(cls):
        return cls(grid=None, h_values=None, hprime_values=None)

    @property
    def is_identity(self):
        return self.grid is None

    # -- ranges -------------------------------------------------------------
    @property
    def domain(self):
        if self.is_identity:
            return (-np.inf, np.inf)
        return float(self.grid[0]), float(self.grid[-1])

    @property
    def image(self):
        if self.is_identity:
            return (-np.inf, np.inf)
        return float(self.h_values[0]), float(self.h_values[-1])

    def _check_domain(self, x):
        lo, hi = self.domain
        if np.any(np.asarray(x) < lo - 1e-12) or np.any(np.asarray(x) > hi + 1e-12):
            raise RangeError(f"point outside tabulated domain [{lo}, {hi}]")

    def _check_image(self, y):
        lo, hi = self.image
        if np.any(np.asarray(y) < lo - 1e-12) or np.any(np.asarray(y) > hi + 1e-12):
            raise RangeError(f"point outside tabulated image [{lo}, {hi}]")

    # -- evaluation ----------------------------------------------------------
    def forward(self, x):
        if self.is_identity:
            return np.asarray(x, dtype=float)
        self._check_domain(x)
        return self._h(x)

    def deriv(self, x):
        if self.is_identity:
            return np.ones_like(np.asarray(x, dtype=float))
        self._check_domain(x)
        return self._hp(x)

    def inverse(self, y, newton_iters=3, bisect_iters=30):
        """Monotone inversion: interpolated starting guess, Newton polish
        inside the bracketing table cell, bisection fallback for stragglers."""
        if self.is_identity:
            return np.asarray(y, dtype=float)
        self._check_image(y)
        y = np.asarray(y, dtype=float)
        scalar = y.ndim == 0
        yq = np.atleast_1d(y).astype(float).ravel()
        idx = np.clip(np.searchsorted(self.h_values, yq) - 1, 0, len(self.grid) - 2)
        lo = self.grid[idx]
        hi = self.grid[idx + 1]
        x = np.clip(self._inv(yq), lo, hi)
        for _ in range(newton_iters):
            x = x - (self._h(x) - yq) / np.maximum(self._hp(x), 1e-300)
            x = np.clip(x, lo, hi)
        res = np.abs(self._h(x) - yq)
        scale = 1e-10 * (1.0 + np.abs(yq))
        bad = np.flatnonzero(res > scale)
        if len(bad):
            blo, bhi = lo[bad].copy(), hi[bad].copy()
            yb = yq[bad]
            for _ in range(bisect_iters):
                mid = 0.5 * (blo + bhi)
                below = self._h(mid) < yb
                blo = np.where(below, mid, blo)
                bhi = np.where(below, bhi, mid)
            xb = 0.5 * (blo + bhi)
            xb = xb - (self._h(xb) - yb) / np.maximum(self._hp(xb), 1e-300)
            x = x.copy()
            x[bad] = np.clip(xb, blo, bhi)
        x = x.reshape(np.atleast_1d(y).shape)
        return float(x.ravel()[0]) if scalar else x

    def inverse_deriv(self, y):
        """Derivative of the inverse, i.e. exp(+potential) at the preimage."""
        if self.is_identity:
            return np.ones_like(np.asarray(y, dtype=float))
        return 1.0 / self.deriv(self.inverse(y))

    def jump_image(self, x, w):
        """Transformed jump size h(x + w) - h(x)."""
        return self.forward(np.asarray(x) + np.asarray(w)) - self.forward(x)

    @property
    def inv_deriv_sup(self):
        """Upper bound on the inverse derivative over the table."""
        if self.is_identity:
            return 1.0
        return float(np.max(1.0 / self.hprime_values))


def build_scale_transform(potential: DriftPotential, grid=None) -> ScaleTransform:
    """Tabulate h = cumulative integral of exp(-potential), anchored at 0."""
    if not potential.converged:
        raise NonConvergent("potential did not converge; refusing to build transform")
    grid = potential.grid if grid is None else np.asarray(grid, dtype=float)
    if grid is potential.grid:
        pv = potential.values
    else:
        pv = potential(grid)
    h_vals = _cumulative_table(lambda pts: np.exp(-potential(pts)), grid)
    return ScaleTransform(grid=grid, h_values=h_vals, hprime_values=np.exp(-pv))


# ---------------------------------------------------------------------------
# conjugated test functions and generator pieces
# ---------------------------------------------------------------------------

@dataclass
class ConjugateTestFunction:
    """Bounded C^2 profile phi; the working test function is phi o h."""

    phi: Callable
    phi_prime: Callable
    phi_second: Callable
    bound: float
    name: str = "phi"

    def f(self, transform: ScaleTransform, x):
        return self.phi(transform.forward(x))

    def f_prime(self, transform: ScaleTransform, x):
        return self.phi_prime(transform.forward(x)) * transform.deriv(x)

    def as_x_callables(self, transform: ScaleTransform):
        """(f, f') as plain functions of the original variable."""
        return (lambda u: self.phi(transform.forward(u)),
                lambda u: self.phi_prime(transform.forward(u)) * transform.deriv(u))


def identity_profile(span=50.0):
    """phi(y) = y, declared bounded on the working range of width ``span``."""
    return ConjugateTestFunction(
        phi=lambda y: np.asarray(y, dtype=float),
        phi_prime=lambda y: np.ones_like(np.asarray(y, dtype=float)),
        phi_second=lambda y: np.zeros_like(np.asarray(y, dtype=float)),
        bound=span, name="identity",
    )


def local_generator(f: ConjugateTestFunction, transform: ScaleTransform,
                    diffusion: DiffusionSpec, x):
    """Local generator value of f = phi o h at x.

    Evaluated through the conjugate as half * (sigma(x) h'(x))^2 *
    phi''(h(x)); the potential is never differentiated.
    """
    x = np.asarray(x, dtype=float)
    s0 = diffusion.sigma(x) * transform.deriv(x)
    return 0.5 * s0**2 * f.phi_second(transform.forward(x))


def transformed_diffusion(transform: ScaleTransform, diffusion: DiffusionSpec, y):
    """Diffusion coefficient of the transformed state: (sigma h') o h^{-1}."""
    x = transform.inverse(y)
    return diffusion.sigma(np.asarray(x)) * transform.deriv(x)


def square_identity_residual(f: ConjugateTestFunction, transform: ScaleTransform,
                             diffusion: DiffusionSpec, sample_points):
    """max |L(f^2) - 2 f Lf - (f' sigma)^2| over the sample points.

    L(f^2) is computed through the conjugate phi^2, using
    (phi^2)'' = 2 phi'^2 + 2 phi phi''.
    """
    x = np.asarray(sample_points, dtype=float)
    y = transform.forward(x)
    hp = transform.deriv(x)
    sig = diffusion.sigma(x)
    s0sq = (sig * hp) ** 2
    lf = 0.5 * s0sq * f.phi_second(y)
    lf2 = 0.5 * s0sq * (2.0 * f.phi_prime(y) ** 2 + 2.0 * f.phi(y) * f.phi_second(y))
    carre = (f.phi_prime(y) * hp * sig) ** 2
    return float(np.max(np.abs(lf2 - 2.0 * f.phi(y) * lf - carre)))


# ---------------------------------------------------------------------------
# C1 approximants inside the operator domain
# ---------------------------------------------------------------------------

@dataclass
class TestFunctionApproximant:
    """Smooth compact-derivative approximant of a C^1 target.

    f_n' = h' * ((target' / h') * cutoff_n) convolved with a compactly
    supported mollifier of width 1/n, so that both f_n' and the generator
    value are available without differentiating the potential.
    """

    n: int
    grid: np.ndarray = field(repr=False)
    f_values: np.ndarray = field(repr=False)
    fprime_values: np.ndarray = field(repr=False)
    lf_core_values: np.ndarray = field(repr=False)  # h' * (weighted conv with rho')

    def __post_init__(self):
        self._f = _pchip(self.grid, self.f_values)
        self._fp = _pchip(self.grid, self.fprime_values)
        self._lc = _pchip(self.grid, self.lf_core_values)

    def f(self, x):
        return self._f(x)

    def f_prime(self, x):
        return self._fp(x)

    def generator_value(self, diffusion: DiffusionSpec, x):
        """Local generator of the approximant at x."""
        x = np.asarray(x, dtype=float)
        return 0.5 * diffusion.sigma(x) ** 2 * self._lc(x)


def domain_approximant(target, target_prime, transform: ScaleTransform,
                       n: int, grid=None) -> TestFunctionApproximant:
    """Build the n-th approximant of a C^1 target inside the domain."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if grid is None:
        if transform.is_identity:
            raise ValueError("an explicit grid is required with the identity transform")
        grid = transform.grid
    grid = np.asarray(grid, dtype=float)
    width = 1.0 / n
    lo, hi = transform.domain
    if np.isfinite(lo):
        # keep the mollifier window inside the tabulated domain
        grid = grid[(grid >= lo + width) & (grid <= hi - width)]
        if len(grid) < 3 or grid[0] > 0 or grid[-1] < 0:
            raise ValueError("transform table too narrow for this smoothing width")

    def weighted(u):
        # target' * exp(potential) * cutoff, with exp(potential) = 1/h'
        return target_prime(u) / _deriv_or_one(transform, u) * plateau_cutoff(u, n)

    conv = mollified_function(weighted, grid, width, shape="bump")
    hp = _deriv_or_one(transform, grid)
    fprime = hp * conv
    # generator core: h' * d/dx[(weighted) * rho_w] via the mollifier derivative
    u, qw, _, rho_p = _mollifier_tables("bump", width)
    X = grid[..., None]
    core = ((weighted(X - u) - weighted(X + u)) * rho_p) @ qw
    lf_core = hp * core
    f_vals = _cumulative_table(lambda pts: _pchip(grid, fprime)(pts), grid)
    f_vals = f_vals + float(np.asarray(target(np.zeros(1)))[0])
    return TestFunctionApproximant(
        n=n, grid=grid, f_values=f_vals, fprime_values=fprime, lf_core_values=lf_core,
    )


def _deriv_or_one(transform: ScaleTransform, u):
    if transform.is_identity:
        return np.ones_like(np.asarray(u, dtype=float))
    return transform.deriv(u)


# ---------------------------------------------------------------------------
# hypothesis diagnostics
# ---------------------------------------------------------------------------

@dataclass
class PotentialHypothesisReport:
    sup_norm: float
    alpha: float
    holder_const: float
    converged: bool
    level_gap: float
    half_range_sup: float
    sup_saturating: bool
    divergence_levels: np.ndarray = field(repr=False)
    divergence_pos: np.ndarray = field(repr=False)
    divergence_neg: np.ndarray = field(repr=False)
    slope_lower: float = 0.0

    def to_dict(self):
        return {
            "sup_norm": self.sup_norm,
            "alpha": self.alpha,
            "holder_const": self.holder_const,
            "converged": bool(self.converged),
            "level_gap": self.level_gap,
            "sup_saturating": bool(self.sup_saturating),
            "divergence_levels": [float(v) for v in self.divergence_levels],
            "divergence_pos": [float(v) for v in self.divergence_pos],
            "divergence_neg": [float(v) for v in self.divergence_neg],
            "slope_lower": self.slope_lower,
        }


def check_hypotheses(potential: DriftPotential, truncation_range=1000.0,
                     n_levels=6) -> PotentialHypothesisReport:
    """Growth/regularity diagnostics for the potential.

    Divergence of the scale integrals on half lines cannot be certified
    from a finite table; this reports the growth of int_0^M exp(-potential)
    at increasing M as evidence, nothing more.
    """
    grid, vals = potential.grid, potential.values
    sup = float(np.max(np.abs(vals)))
    half = (grid >= grid[0] / 2) & (grid <= grid[-1] / 2)
    half_sup = float(np.max(np.abs(vals[half]))) if np.any(half) else sup
    saturating = sup <= 1.2 * half_sup + 1e-12

    m_hi = min(float(truncation_range), float(min(-grid[0], grid[-1])))
    levels = np.geomspace(max(m_hi / 2**(n_levels - 1), 1e-3), m_hi, n_levels)
    pos, neg = [], []
    interp = potential._interp
    for m in levels:
        sub = np.linspace(0.0, m, 257)
        ev = np.exp(-interp(sub))
        pos.append(float(np.trapezoid(ev, sub)))
        sub = np.linspace(-m, 0.0, 257)
        ev = np.exp(-interp(sub))
        neg.append(float(np.trapezoid(ev, sub)))
    pos, neg = np.asarray(pos), np.asarray(neg)
    slope = float(np.min(np.concatenate([pos / levels, neg / levels])))
    return PotentialHypothesisReport(
        sup_norm=sup, alpha=potential.alpha, holder_const=potential.holder_const,
        converged=potential.converged, level_gap=potential.level_gap,
        half_range_sup=half_sup, sup_saturating=saturating,
        divergence_levels=levels, divergence_pos=pos, divergence_neg=neg,
        slope_lower=slope,
    )


# ---------------------------------------------------------------------------
# bundle
# ---------------------------------------------------------------------------

@dataclass
class CoefficientSet:
    """Drift/diffusion pair with the derived potential and transform."""

    drift: DriftSpec
    diffusion: DiffusionSpec
    mollifier: Optional[MollifierConfig]
    potential: DriftPotential
    transform: ScaleTransform

    @classmethod
    def build(cls, drift, diffusion, mollifier, grid, strict=True):
        drift.validate()
        pot = compute_drift_potential(drift, diffusion, mollifier, grid, strict=strict)
        return cls(drift=drift, diffusion=diffusion, mollifier=mollifier,
                   potential=pot, transform=build_scale_transform(pot))

    @classmethod
    def unit(cls):
        """sigma == 1, beta == 0 with the exact identity transform."""
        drift = DriftSpec(beta=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                          beta_prime=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                          name="zero")
        diffusion = DiffusionSpec(sigma=lambda x: np.ones_like(np.asarray(x, dtype=float)),
                                  sigma_min=1.0, sigma_max=1.0, name="unit")
        return cls(drift=drift, diffusion=diffusion, mollifier=None,
                   potential=DriftPotential.zero(np.linspace(-1, 1, 3)),
                   transform=ScaleTransform.identity())

    def table(self):
        """Columns (x, sigma_value, h, hprime) for export."""
        if self.transform.is_identity:
            g = self.potential.grid
            return np.column_stack([g, self.potential.values, g, np.ones_like(g)])
        g = self.transform.grid
        return np.column_stack([
            g, self.potential(g), self.transform.h_values, self.transform.hprime_values,
        ])
