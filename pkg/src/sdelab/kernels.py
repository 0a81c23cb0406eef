"""State-dependent jump kernels and the induced operators.

A kernel assigns to every state y a measure Q(y, dx) on the jump sizes,
with no mass at 0.  Three families are provided: a two-sided power tail,
finite-activity kernels (rate times a jump law), and tabulated discrete
families.  On top of these sit the moment/total-variation diagnostics,
the pushforward through a scale transform, the induced drift correction,
and the nonlocal generator term.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from ._quad import dyadic_tail, gauss_legendre, gauss_legendre_01, quad_checked
from .coefficients import DiffusionSpec, ScaleTransform, transformed_diffusion
from .errors import DivergentMoment, QuadratureFailure, RangeError

_INNER_NODES = 16


def _open_above(a):
    return float(np.nextafter(a, np.inf))


# ---------------------------------------------------------------------------
# truncation function
# ---------------------------------------------------------------------------

@dataclass
class TruncationFunction:
    """Bounded function equal to the identity near 0 (default: clamp)."""

    radius: float = 1.0
    cap: float = 1.0
    fn: Optional[Callable] = None

    def __post_init__(self):
        if self.radius <= 0 or self.cap < self.radius:
            raise ValueError("need 0 < radius <= cap")

    def __call__(self, x):
        if self.fn is not None:
            return self.fn(np.asarray(x, dtype=float))
        return np.clip(np.asarray(x, dtype=float), -self.cap, self.cap)

    def validate(self, probes=None):
        probes = np.linspace(-3 * self.cap, 3 * self.cap, 41) if probes is None else probes
        vals = self(probes)
        if np.any(np.abs(vals) > self.cap + 1e-12):
            raise ValueError("truncation exceeds its cap")
        inner = np.abs(probes) <= self.radius
        if not np.allclose(vals[inner], probes[inner], atol=1e-12):
            raise ValueError("truncation is not the identity inside its radius")


# ---------------------------------------------------------------------------
# jump laws (for finite-activity kernels)
# ---------------------------------------------------------------------------

@dataclass
class DiscreteLaw:
    """Finitely many atoms (position, probability); no atom at 0."""

    atoms: tuple

    def __post_init__(self):
        pos = np.asarray([a[0] for a in self.atoms], dtype=float)
        prob = np.asarray([a[1] for a in self.atoms], dtype=float)
        if np.any(pos == 0.0):
            raise ValueError("jump laws must not charge 0")
        if np.any(prob < 0) or abs(prob.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        self.positions = pos
        self.probs = prob

    def expect(self, g, lo=-np.inf, hi=np.inf, **_):
        sel = (self.positions >= lo) & (self.positions <= hi)
        if not np.any(sel):
            return 0.0
        return float(np.sum(self.probs[sel] * np.asarray(g(self.positions[sel]))))

    def mass(self, lo=-np.inf, hi=np.inf):
        sel = (self.positions >= lo) & (self.positions <= hi)
        return float(np.sum(self.probs[sel]))

    @property
    def support_radius(self):
        return float(np.max(np.abs(self.positions)))

    def is_symmetric(self, tol=1e-12):
        for w, p in zip(self.positions, self.probs):
            mirror = np.isclose(self.positions, -w, atol=tol)
            if not np.any(mirror) or abs(self.probs[mirror].sum() - p) > tol:
                return False
        return True


@dataclass
class DensityLaw:
    """Absolutely continuous jump law with a sampler."""

    pdf: Callable
    support: tuple
    sampler: Callable  # sampler(rng, size) -> draws

    def expect(self, g, lo=-np.inf, hi=np.inf, tol=1e-8, breakpoints=()):
        a = max(lo, self.support[0])
        b = min(hi, self.support[1])
        if a >= b:
            return 0.0
        pieces = sorted({a, b, *(p for p in breakpoints if a < p < b),
                         *( (0.0,) if a < 0.0 < b else () )})
        total = 0.0
        for u, v in zip(pieces[:-1], pieces[1:]):
            total += quad_checked(
                lambda x: float(np.asarray(g(x)).reshape(-1)[0]) * float(self.pdf(x)),
                u, v, tol=tol)
        return total

    def mass(self, lo=-np.inf, hi=np.inf, tol=1e-10):
        return self.expect(lambda x: np.ones_like(np.asarray(x, dtype=float)),
                           lo, hi, tol=tol)

    @property
    def support_radius(self):
        return float(max(abs(self.support[0]), abs(self.support[1])))

    def is_symmetric(self, tol=1e-9):
        probes = np.linspace(0.05, self.support_radius, 17)
        return bool(np.all(np.abs(self.pdf(probes) - self.pdf(-probes)) <= tol))


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@dataclass
class StableTailKernel:
    """Two-sided power-tail kernel: density scale * |x|^(-1-gamma) per side.

    The intensity of jumps beyond any positive radius is finite, total
    activity is infinite.  The moment hypothesis holds iff the declared
    exponent alpha exceeds gamma - 1.
    """

    gamma: float
    scale: float = 1.0
    alpha: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 2.0:
            raise ValueError("gamma must lie in (0, 2)")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    # density of one side, as a function of |x|
    def _dens(self, r):
        return self.scale * r ** (-1.0 - self.gamma)

    def one_tail_mass(self, a):
        """Mass of (a, inf) on one side, a > 0 (closed form)."""
        a = np.asarray(a, dtype=float)
        return self.scale * a ** (-self.gamma) / self.gamma

    def region_mass(self, y, lo, hi):
        """Q(y, (lo, hi)); infinite when the region touches 0."""
        del y
        lo, hi = float(lo), float(hi)
        if lo >= hi:
            return 0.0
        if lo <= 0.0 <= hi:
            return np.inf
        a, b = sorted((abs(lo), abs(hi)))
        tail_b = 0.0 if np.isinf(b) else float(self.one_tail_mass(b))
        return float(self.one_tail_mass(a)) - tail_b

    def region_mass_vec(self, y, intervals):
        y = np.asarray(y, dtype=float)
        total = 0.0
        for lo, hi in intervals:
            total += self.region_mass(0.0, lo, hi)
        return np.full_like(y, total)

    def two_tail_mass(self, y, w_lo, w_hi):
        """Q(y, (-inf, w_lo] u [w_hi, inf)) with w_lo < 0 < w_hi."""
        del y
        return self.one_tail_mass(np.abs(w_lo)) + self.one_tail_mass(np.abs(w_hi))

    def sample_two_tail(self, u_side, u_mag, w_lo, w_hi):
        """Exact inverse-CDF draw from the two-sided tail restriction."""
        m_neg = self.one_tail_mass(np.abs(w_lo))
        m_pos = self.one_tail_mass(np.abs(w_hi))
        go_pos = u_side < m_pos / (m_pos + m_neg)
        mag_pos = np.abs(w_hi) * (1.0 - u_mag) ** (-1.0 / self.gamma)
        mag_neg = np.abs(w_lo) * (1.0 - u_mag) ** (-1.0 / self.gamma)
        return np.where(go_pos, mag_pos, -mag_neg)

    def integral(self, y, g, lo=-np.inf, hi=np.inf, tol=1e-8, breakpoints=(),
                 g_bound=None):
        del y  # the family is state independent
        total = 0.0
        if hi > 0 and max(lo, 0.0) < hi:
            total += self._side(g, max(lo, 0.0), hi, +1.0, tol, breakpoints, g_bound)
        if lo < 0 and min(hi, 0.0) > lo:
            total += self._side(g, max(-min(hi, 0.0), 0.0), -lo, -1.0, tol,
                                breakpoints, g_bound)
        return total

    def _side(self, g, a, b, sign, tol, breakpoints, g_bound):
        # integrate over radii (a, b), actual points sign * r
        def f(r):
            return float(np.asarray(g(sign * r)).reshape(-1)[0]) * self._dens(r)

        cuts = sorted({a, min(b, max(a, 1.0)),
                       *(abs(p) for p in breakpoints if a < abs(p) < min(b, 1e300)
                         and np.sign(p) == sign)})
        total = 0.0
        if not np.isfinite(b):
            fin = max(cuts[-1], 1.0)
            cuts = sorted(set(cuts) | {fin})
            for u, v in zip(cuts[:-1], cuts[1:]):
                if v > u:
                    total += quad_checked(f, u, v, tol=tol)
            total += dyadic_tail(
                f, fin, tail_mass=lambda r: float(self.one_tail_mass(r)),
                tol=tol, sup_bound=g_bound,
            )
        else:
            cuts = sorted(set(cuts) | {b})
            for u, v in zip(cuts[:-1], cuts[1:]):
                if v > u:
                    total += quad_checked(f, u, v, tol=tol)
        return total

    @property
    def support_radius(self):
        return np.inf

    def is_symmetric(self):
        return True


def _as_rate(rate) -> Callable:
    if callable(rate):
        return rate
    return lambda y, _c=float(rate): np.full_like(np.asarray(y, dtype=float), _c)


@dataclass
class FiniteActivityKernel:
    """Kernel rate(y) * law(dx) with a finite total rate."""

    rate: Union[float, Callable]
    law: Union[DiscreteLaw, DensityLaw]
    alpha: float = 1.0

    def __post_init__(self):
        self._rate = _as_rate(self.rate)

    def rate_at(self, y):
        return np.asarray(self._rate(np.asarray(y, dtype=float)))

    def integral(self, y, g, lo=-np.inf, hi=np.inf, tol=1e-8, breakpoints=(),
                 g_bound=None):
        del g_bound
        r = float(self.rate_at(np.asarray(y, dtype=float)))
        if r == 0.0:
            return 0.0
        return r * self.law.expect(g, lo, hi, tol=tol, breakpoints=breakpoints)

    def region_mass(self, y, lo, hi):
        return float(self.rate_at(y)) * self.law.mass(lo, hi)

    def region_mass_vec(self, y, intervals):
        y = np.asarray(y, dtype=float)
        p = sum(self.law.mass(lo, hi) for lo, hi in intervals)
        return self.rate_at(y) * p

    def two_tail_mass(self, y, w_lo, w_hi):
        p = self.law.mass(-np.inf, w_lo) + self.law.mass(w_hi, np.inf)
        return self.rate_at(y) * p

    @property
    def support_radius(self):
        return self.law.support_radius

    def is_symmetric(self):
        return self.law.is_symmetric()


@dataclass
class TabulatedKernel:
    """Per-state discrete measures on a grid of states (nearest lookup)."""

    y_grid: np.ndarray
    measures: tuple  # per grid state: tuple of (position, mass)
    alpha: float = 1.0

    def __post_init__(self):
        self.y_grid = np.asarray(self.y_grid, dtype=float)
        if len(self.measures) != len(self.y_grid):
            raise ValueError("one measure per grid state required")
        parsed = []
        for m in self.measures:
            pos = np.asarray([a[0] for a in m], dtype=float)
            mass = np.asarray([a[1] for a in m], dtype=float)
            if np.any(pos == 0.0) or np.any(mass < 0):
                raise ValueError("invalid tabulated measure")
            parsed.append((pos, mass))
        self._parsed = parsed

    def _at(self, y):
        idx = int(np.argmin(np.abs(self.y_grid - float(np.asarray(y)))))
        return self._parsed[idx]

    def integral(self, y, g, lo=-np.inf, hi=np.inf, tol=1e-8, breakpoints=(),
                 g_bound=None):
        del tol, breakpoints, g_bound
        pos, mass = self._at(y)
        sel = (pos >= lo) & (pos <= hi)
        if not np.any(sel):
            return 0.0
        return float(np.sum(mass[sel] * np.asarray(g(pos[sel]))))

    def region_mass(self, y, lo, hi):
        pos, mass = self._at(y)
        sel = (pos >= lo) & (pos <= hi)
        return float(np.sum(mass[sel]))

    def region_mass_vec(self, y, intervals):
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        flat = out.ravel()
        yf = y.ravel()
        for i in range(len(yf)):
            flat[i] = sum(self.region_mass(yf[i], lo, hi) for lo, hi in intervals)
        return out

    def two_tail_mass(self, y, w_lo, w_hi):
        return (self.region_mass(y, -np.inf, w_lo)
                + self.region_mass(y, w_hi, np.inf))

    @property
    def support_radius(self):
        return max(float(np.max(np.abs(p))) for p, _ in self._parsed)

    def is_symmetric(self, tol=1e-12):
        for pos, mass in self._parsed:
            for w, m in zip(pos, mass):
                mirror = np.isclose(pos, -w, atol=tol)
                if not np.any(mirror) or abs(mass[mirror].sum() - m) > tol:
                    return False
        return True


Kernel = Union[StableTailKernel, FiniteActivityKernel, TabulatedKernel]


# ---------------------------------------------------------------------------
# moment / total-variation diagnostics
# ---------------------------------------------------------------------------

@dataclass
class TiltedKernelReport:
    y_grid: np.ndarray = field(repr=False)
    moments: np.ndarray = field(repr=False)
    m1: np.ndarray = field(repr=False)  # |x|^(1+alpha) mass inside the radius
    m2: np.ndarray = field(repr=False)  # plain mass outside the radius
    radius: float = 1.0
    alpha: float = 0.0
    tv_modulus: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def sup(self):
        return float(np.max(self.moments))

    def rows(self):
        tv = self.tv_modulus
        for i, y in enumerate(self.y_grid):
            mod = "" if tv is None or i >= len(tv) else float(tv[i])
            yield (float(y), float(self.moments[i]), float(self.m1[i]),
                   float(self.m2[i]), mod)


def moment_bound(kernel: Kernel, y_grid, radius=1.0, tol=1e-8) -> TiltedKernelReport:
    """Certify the tilted-mass hypothesis sup_y int (1 ^ |x|^(1+alpha)) Q(y, dx).

    Raises DivergentMoment when the integral cannot be finite (power-tail
    kernels with alpha <= gamma - 1, or quadrature blow-up).
    """
    alpha = kernel.alpha
    if isinstance(kernel, StableTailKernel) and alpha <= kernel.gamma - 1.0:
        raise DivergentMoment(
            f"alpha={alpha} <= gamma-1={kernel.gamma - 1.0}: tilted mass diverges"
        )
    y_grid = np.atleast_1d(np.asarray(y_grid, dtype=float))

    def tilt(x):
        return np.minimum(1.0, np.abs(x) ** (1.0 + alpha))

    moments, m1s, m2s = [], [], []
    for y in y_grid:
        try:
            mom = kernel.integral(y, tilt, tol=tol, breakpoints=(-1.0, 1.0), g_bound=1.0)
            m1 = kernel.integral(y, lambda x: np.abs(x) ** (1.0 + alpha),
                                 lo=-radius, hi=radius, tol=tol)
            m2 = kernel.integral(y, lambda x: np.ones_like(np.asarray(x, dtype=float)),
                                 lo=_open_above(radius), hi=np.inf, tol=tol, g_bound=1.0)
            m2 += kernel.integral(y, lambda x: np.ones_like(np.asarray(x, dtype=float)),
                                  lo=-np.inf, hi=-_open_above(radius), tol=tol, g_bound=1.0)
        except QuadratureFailure as exc:
            raise DivergentMoment(f"tilted mass at y={y} diverges: {exc}") from exc
        if not np.isfinite(mom):
            raise DivergentMoment(f"tilted mass at y={y} is not finite")
        moments.append(mom)
        m1s.append(m1)
        m2s.append(m2)
    return TiltedKernelReport(
        y_grid=y_grid, moments=np.asarray(moments), m1=np.asarray(m1s),
        m2=np.asarray(m2s), radius=radius, alpha=alpha,
    )


def geometric_partition(inner, outer, n_cells=128):
    """Symmetric cell edges, geometric towards 0, covering [-outer, outer]."""
    if not 0 < inner < outer:
        raise ValueError("need 0 < inner < outer")
    n_half = max((n_cells - 1) // 2, 8)
    pos = np.geomspace(inner, outer, n_half + 1)
    return np.concatenate([-pos[::-1], pos])


@dataclass
class TVModulusReport:
    y_pairs: list
    values: np.ndarray = field(repr=False)

    @property
    def max(self):
        return float(np.max(self.values)) if len(self.values) else 0.0


def tv_continuity_modulus(kernel: Kernel, alpha, y_grid, x_partition,
                          tol=1e-8) -> TVModulusReport:
    """Partition lower bound on the tilted total-variation distance.

    For each adjacent pair of states the cellwise absolute differences of
    the tilted masses are summed; this bounds the true distance from
    below, which is the useful direction for falsifying continuity.
    """
    edges = np.asarray(x_partition, dtype=float)
    if len(edges) < 65:
        raise ValueError("partition must have at least 64 cells")
    y_grid = np.asarray(y_grid, dtype=float)

    def tilt(x):
        return np.minimum(1.0, np.abs(x) ** (1.0 + alpha))

    def cell_vector(y):
        out = np.empty(len(edges) - 1)
        for i, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
            out[i] = kernel.integral(y, tilt, lo=a, hi=np.nextafter(b, -np.inf),
                                     tol=tol, g_bound=1.0)
        return out

    vectors = [cell_vector(y) for y in y_grid]
    pairs, vals = [], []
    for i in range(len(y_grid) - 1):
        pairs.append((float(y_grid[i]), float(y_grid[i + 1])))
        vals.append(float(np.sum(np.abs(vectors[i + 1] - vectors[i]))))
    return TVModulusReport(y_pairs=pairs, values=np.asarray(vals))


# ---------------------------------------------------------------------------
# pushforward, drift correction, nonlocal operator
# ---------------------------------------------------------------------------

def _scalarized(fn):
    """Allow a scalar-only integrand to accept arrays (discrete kernels)."""
    def wrapped(x):
        arr = np.asarray(x, dtype=float)
        if arr.ndim == 0:
            return fn(float(arr))
        return np.array([fn(float(v)) for v in arr.ravel()]).reshape(arr.shape)
    return wrapped


def _guard_support(kernel: Kernel, transform: ScaleTransform, x):
    if transform.is_identity:
        return
    lo, hi = transform.domain
    sr = kernel.support_radius
    if sr > min(x - lo, hi - x):
        raise RangeError(
            "kernel support exceeds the tabulated transform range around the state"
        )


def pushforward_integral(kernel: Kernel, transform: ScaleTransform, y, g,
                         tol=1e-8, g_bound=None, z_breakpoints=()):
    """Integral of g against the transformed kernel at the image state y.

    The transformed measure is the pushforward of Q at the preimage state
    through w -> h(x + w) - h(x); the integral is carried out in the
    original jump variable.
    """
    x = float(np.asarray(transform.inverse(y)))
    _guard_support(kernel, transform, x)
    y0 = float(np.asarray(transform.forward(x)))

    def integrand(w):
        return g(transform.forward(x + np.asarray(w)) - y0)

    w_breaks = []
    lo_im, hi_im = transform.image
    for zb in z_breakpoints:
        target = y0 + zb
        if lo_im < target < hi_im:
            w_breaks.append(float(np.asarray(transform.inverse(target))) - x)
    return kernel.integral(x, integrand, tol=tol, breakpoints=tuple(w_breaks),
                           g_bound=g_bound)


def drift_correction(kernel: Kernel, transform: ScaleTransform,
                     trunc: TruncationFunction, y, method="definition",
                     tol=1e-8):
    """Drift generated by transporting the truncation through the transform.

    Identically zero for the identity transform.  ``method`` selects the
    defining integral or the split into an exactly cancelling core and a
    bounded tail; the two must agree and their comparison is a standing
    self-check.
    """
    if transform.is_identity:
        return 0.0
    x = float(np.asarray(transform.inverse(y)))
    _guard_support(kernel, transform, x)
    y0 = float(np.asarray(transform.forward(x)))
    hp_x = float(np.asarray(transform.deriv(x)))
    lo_im, hi_im = transform.image

    if method == "definition":
        def integrand(w):
            z = transform.forward(x + np.asarray(w)) - y0
            return trunc(z) - hp_x * trunc(np.asarray(w))

        breaks = [trunc.radius, -trunc.radius]
        for zb in (trunc.radius, -trunc.radius):
            tgt = y0 + zb
            if lo_im < tgt < hi_im:
                breaks.append(float(np.asarray(transform.inverse(tgt))) - x)
        return kernel.integral(x, integrand, tol=tol, breakpoints=tuple(breaks),
                               g_bound=trunc.cap * (1.0 + hp_x))

    if method != "expansion":
        raise ValueError(f"unknown method {method!r}")

    a_nodes, a_wts = gauss_legendre_01(_INNER_NODES)
    c1bar = transform.inv_deriv_sup
    r_in = trunc.radius / c1bar
    inv_dy = 1.0 / hp_x  # derivative of the inverse at y

    def inv_deriv(u):
        return 1.0 / np.asarray(transform.deriv(transform.inverse(u)))

    def core(w):
        z = float(np.asarray(transform.forward(x + w))) - y0
        if abs(z) > r_in:
            return 0.0
        vals = inv_dy - inv_deriv(y0 + a_nodes * z)
        return float(np.sum(vals * a_wts)) * z

    def tail(w):
        z = float(np.asarray(transform.forward(x + w))) - y0
        if abs(z) <= r_in:
            return 0.0
        psi_bar = float(np.sum(inv_deriv(y0 + a_nodes * z) * a_wts))
        return inv_dy * float(trunc(z)) - float(trunc(z * psi_bar))

    breaks = []
    for zb in (r_in, -r_in):
        tgt = y0 + zb
        if lo_im < tgt < hi_im:
            breaks.append(float(np.asarray(transform.inverse(tgt))) - x)
    val = kernel.integral(x, _scalarized(lambda w: core(w) + tail(w)), tol=tol,
                          breakpoints=tuple(breaks),
                          g_bound=trunc.cap * (1.0 + inv_dy))
    return hp_x * val


# ---------------------------------------------------------------------------
# vectorized panel quadrature for power-tail kernels
# ---------------------------------------------------------------------------

_PANEL_NODES = 24


def _stable_panel_sum(kernel: StableTailKernel, values_on_panel, start, direction,
                      tol, far_bound=None, slope=0.0, subpanel_budget=4096,
                      max_panels=64):
    """Sum of panel integrals of a kernel-weighted profile along one ray.

    ``values_on_panel(x_nodes)`` returns the profile at signed nodes
    (shape (m, p) for m states).  Panels are dyadic: outward from
    ``start`` for direction "out", inward (geometric refinement towards 0)
    for direction "in".  Outward panels are subdivided so that the
    profile's declared slope stays resolvable by the Gauss rule.

    The outward walk stops when the closed-form mass bound certifies the
    remainder, when three consecutive panels fall below tol/8, or when
    the next panel would exceed the resolution budget.  On termination
    the remainder is extrapolated as (kernel-weighted mean of the profile
    over the last resolved octave) times the exact remaining tail mass:
    exact for profiles that have settled to a constant, and the cancelled
    residue of an oscillatory profile averages out of the panel mean, so
    the extrapolation error is of the order of the resolved decay.
    """
    gx, gw = gauss_legendre(_PANEL_NODES)
    total = None
    quiet = 0
    a = start
    last_mean = None
    for k in range(max_panels):
        lo, hi = (a, 2.0 * a) if direction == "out" else (0.5 * a, a)
        width = hi - lo
        m = 1
        if direction == "out" and slope > 0:
            m = int(np.ceil(width * slope / 12.0))
            if m > subpanel_budget:
                break
        edges = np.linspace(lo, hi, m + 1)
        mids = 0.5 * (edges[1:] + edges[:-1])
        halves = 0.5 * np.diff(edges)
        r = (mids[:, None] + halves[:, None] * gx[None, :]).ravel()
        wq = (halves[:, None] * gw[None, :]).ravel() * kernel._dens(r)
        vals = values_on_panel(r)
        contrib = vals @ wq
        total = contrib if total is None else total + contrib
        peak = float(np.max(np.abs(contrib)))
        a = hi if direction == "out" else lo
        if direction == "out":
            panel_mass = float(kernel.one_tail_mass(lo) - kernel.one_tail_mass(hi))
            last_mean = contrib / panel_mass
            remainder = ((far_bound if far_bound else 1.0)
                         * float(kernel.one_tail_mass(a)))
            if remainder < 0.5 * tol:
                return total
        quiet = quiet + 1 if peak < 0.125 * tol else 0
        if quiet >= 3:
            break
    else:
        if direction == "out" and last_mean is None:
            raise QuadratureFailure("power-tail panel walk did not converge")
    if direction == "out" and last_mean is not None:
        return total + last_mean * float(kernel.one_tail_mass(a))
    return total if total is not None else 0.0
    # inward walk exhausted its depth: the remaining mass-weighted
    # contribution decays like x^(1+alpha-gamma) and is below resolution


_DIRECT_DEPTH = 10  # inward panels evaluated in direct form before the
# Taylor form takes over (float cancellation of f(y+x)-f(y) below R 2^-10)


def _stable_nonlocal(kernel: StableTailKernel, trunc: TruncationFunction, y,
                     fx, fpx, tol=1e-8, split=True, f_sup=None,
                     subpanel_budget=4096):
    """Compensated nonlocal integral for a power-tail kernel, vector in y.

    Returns (near, far) in split mode -- the near part via the
    Taylor-remainder form with an inner Gauss integral, the far part as
    the direct compensated difference -- or (total, None) for the unsplit
    direct evaluation (which switches to the Taylor form only below the
    cancellation depth).
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))[:, None]
    R = trunc.radius
    a_nodes, a_wts = gauss_legendre_01(_INNER_NODES)
    fy = np.asarray(fx(y))
    fpy = np.asarray(fpx(y))
    sup_est = f_sup if f_sup is not None else float(np.max(np.abs(fy))) + 1.0
    far_bound = 2.0 * sup_est + trunc.cap * float(np.max(np.abs(fpy)))
    probes = np.linspace(np.min(y) - 3.0, np.max(y) + 3.0, 41)
    slope = float(np.max(np.abs(fpx(probes)))) + 1e-12

    def direct(x_nodes):
        x = x_nodes[None, :]
        return (np.asarray(fx(y + x)) - fy
                - np.asarray(trunc(np.broadcast_to(x, (y.shape[0], len(x_nodes)))))
                * fpy)

    def taylor(x_nodes):
        x = x_nodes[None, :, None]
        shifted = y[:, :, None] + a_nodes[None, None, :] * x
        inner = ((np.asarray(fpx(shifted)) - fpy[:, :, None]) * a_wts).sum(axis=-1)
        return x_nodes[None, :] * inner

    def near_sum(fn, sign):
        return _stable_panel_sum(kernel, lambda r: fn(sign * r), R, "in", tol)

    if split:
        near = near_sum(taylor, +1.0) + near_sum(taylor, -1.0)
    else:
        # direct over the top panels, Taylor below the cancellation depth
        switch = R * 2.0 ** (-_DIRECT_DEPTH)
        gx, gw = gauss_legendre(_PANEL_NODES)
        near = None
        for sign in (+1.0, -1.0):
            a = R
            part = None
            for _ in range(_DIRECT_DEPTH):
                lo, hi = 0.5 * a, a
                mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
                r = mid + half * gx
                wq = half * gw * kernel._dens(r)
                c = direct(sign * r) @ wq
                part = c if part is None else part + c
                a = lo
            deep = _stable_panel_sum(kernel, lambda r: taylor(sign * r), switch,
                                     "in", tol)
            part = part + deep
            near = part if near is None else near + part
    far = (_stable_panel_sum(kernel, lambda r: direct(r), R, "out", tol,
                             far_bound=far_bound, slope=slope,
                             subpanel_budget=subpanel_budget)
           + _stable_panel_sum(kernel, lambda r: direct(-r), R, "out", tol,
                               far_bound=far_bound, slope=slope,
                               subpanel_budget=subpanel_budget))
    if split:
        return near, far
    return near + far, None


def stable_threshold_expectation(kernel: StableTailKernel, x_states, g, threshold,
                                 g_bound, g_slope, tol=1e-8, subpanel_budget=256):
    """Vectorized int over {|w| > threshold} of g(x, w) against the kernel.

    ``g(x_col, w_row)`` must broadcast to shape (m, p); ``g_slope`` bounds
    its w-derivative (resolution control for oscillatory profiles).
    """
    x = np.atleast_1d(np.asarray(x_states, dtype=float))[:, None]
    out = (_stable_panel_sum(kernel, lambda r: np.asarray(g(x, r[None, :])),
                             threshold, "out", tol, far_bound=g_bound,
                             slope=g_slope, subpanel_budget=subpanel_budget)
           + _stable_panel_sum(kernel, lambda r: np.asarray(g(x, -r[None, :])),
                               threshold, "out", tol, far_bound=g_bound,
                               slope=g_slope, subpanel_budget=subpanel_budget))
    return out


@dataclass
class JumpOperatorValue:
    value: float
    local_part: float
    tail_part: float
    bound: float
    fprime_norm: float


def _holder_norm(f_prime, alpha, radius, n=161):
    """Hoelder norm of f' over [-radius, radius] from a probe grid.

    With alpha = 0 the seminorm degenerates to the sup of increments
    (uniform-continuity convention).
    """
    u = np.linspace(-radius, radius, n)
    v = np.asarray(f_prime(u), dtype=float)
    du = np.abs(u[:, None] - u[None, :])
    dv = np.abs(v[:, None] - v[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(du > 0, dv / np.where(du > 0, du**alpha, 1.0), 0.0)
    return float(np.max(ratio)) + float(np.max(np.abs(v)))


def jump_operator(f, f_prime, kernel: Kernel, trunc: TruncationFunction, y,
                  alpha=None, tol=1e-8, f_sup=None, split=True) -> JumpOperatorValue:
    """Nonlocal generator term at y, with its working bound.

    The near part uses the first-order Taylor remainder in integral form
    (inner integral by fixed Gauss quadrature), weighted so that only the
    tilted mass of the kernel enters; the far part is the plain
    compensated difference.  ``split=False`` evaluates the unsplit
    integral instead, which exists for cross-checking the decomposition.
    """
    alpha = kernel.alpha if alpha is None else alpha
    R = trunc.radius
    y = float(y)
    a_nodes, a_wts = gauss_legendre_01(_INNER_NODES)

    fy = float(np.asarray(f(np.asarray(y))))
    fpy = float(np.asarray(f_prime(np.asarray(y))))
    sup_est = f_sup if f_sup is not None else abs(fy) + 1.0
    far_bound = 2.0 * sup_est + trunc.cap * abs(fpy)

    if isinstance(kernel, StableTailKernel):
        if alpha <= kernel.gamma - 1.0:
            raise DivergentMoment("alpha <= gamma - 1: nonlocal term diverges")
        if not split:
            total, _ = _stable_nonlocal(kernel, trunc, y, f, f_prime, tol=tol,
                                        split=False, f_sup=sup_est)
            return JumpOperatorValue(value=float(total[0]), local_part=np.nan,
                                     tail_part=np.nan, bound=np.nan,
                                     fprime_norm=np.nan)
        near_v, far_v = _stable_nonlocal(kernel, trunc, y, f, f_prime, tol=tol,
                                         split=True, f_sup=sup_est)
        f1, f2 = float(near_v[0]), float(far_v[0])
        s, g = kernel.scale, kernel.gamma
        m1 = 2.0 * s * R ** (1.0 + alpha - g) / (1.0 + alpha - g)
        m2 = 2.0 * float(kernel.one_tail_mass(R))
    else:
        def far(x):
            x = np.asarray(x, dtype=float)
            return f(y + x) - fy - np.asarray(trunc(x)) * fpy

        if not split:
            val = kernel.integral(y, far, tol=tol, breakpoints=(-R, R),
                                  g_bound=far_bound)
            return JumpOperatorValue(value=val, local_part=np.nan, tail_part=np.nan,
                                     bound=np.nan, fprime_norm=np.nan)

        def near(x):
            x = np.asarray(x, dtype=float)
            shifted = y + a_nodes[None, :] * x[..., None]
            inner = ((np.asarray(f_prime(shifted)) - fpy) * a_wts).sum(axis=-1)
            return x * inner.reshape(x.shape)

        f1 = kernel.integral(y, near, lo=-R, hi=R, tol=tol)
        f2 = kernel.integral(y, far, lo=_open_above(R), hi=np.inf, tol=tol,
                             g_bound=far_bound)
        f2 += kernel.integral(y, far, lo=-np.inf, hi=-_open_above(R), tol=tol,
                              g_bound=far_bound)
        m1 = kernel.integral(y, lambda x: np.abs(x) ** (1.0 + alpha),
                             lo=-R, hi=R, tol=tol)
        m2 = (kernel.integral(y, lambda x: np.ones_like(np.asarray(x, dtype=float)),
                              lo=_open_above(R), hi=np.inf, tol=tol, g_bound=1.0)
              + kernel.integral(y, lambda x: np.ones_like(np.asarray(x, dtype=float)),
                                lo=-np.inf, hi=-_open_above(R), tol=tol, g_bound=1.0))

    window = abs(y) + R + 1.0
    norm = _holder_norm(f_prime, alpha, window)
    sup_fp = float(np.max(np.abs(f_prime(np.linspace(y - window, y + window, 101)))))
    bound = norm * m1 + (2.0 * sup_est + trunc.cap * sup_fp) * m2
    return JumpOperatorValue(value=f1 + f2, local_part=f1, tail_part=f2,
                             bound=bound, fprime_norm=norm)


def diffusion_coefficient(transform: ScaleTransform, diffusion: DiffusionSpec, y):
    """Squared transformed diffusion coefficient (strictly positive)."""
    return np.asarray(transformed_diffusion(transform, diffusion, y)) ** 2
