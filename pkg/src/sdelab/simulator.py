"""Monte Carlo engine for the transformed equation.

The transformed state is advanced by an Euler step carrying drift
(including the truncation-compensator correction for jumps that are
simulated explicitly), the transformed diffusion, and big jumps produced
by thinning a dominating Poisson stream.  Jumps below the cutoff are
either dropped or replaced by a variance-matched Gaussian.  Paths map
back through the inverse transform.  Every path owns a counter-derived
random stream, so ensembles are reproducible path by path and safe to
generate in parallel.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.interpolate import PchipInterpolator

from .coefficients import CoefficientSet, ScaleTransform, transformed_diffusion
from .errors import (DegenerateWeights, IntensityBoundViolated,
                     MissingDriverRecord, RangeError, ValidationError)
from .generator import PathFunctional
from .kernels import (DensityLaw, DiscreteLaw, FiniteActivityKernel, Kernel,
                      StableTailKernel, TabulatedKernel, TruncationFunction,
                      drift_correction)


def _as_vec(fn_or_const):
    if callable(fn_or_const):
        return lambda y: np.asarray(fn_or_const(np.asarray(y, dtype=float)), dtype=float)
    c = float(fn_or_const)
    return lambda y: np.full_like(np.asarray(y, dtype=float), c)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class SimConfig:
    horizon: float = 1.0
    n_steps: int = 256
    n_paths: int = 1000
    master_seed: int = 0
    small_jump_cutoff: float = 0.05
    small_jump_mode: str = "gaussian_match"  # or "drop"
    big_jump_intensity_bound: float = 1.0
    max_exclusion_fraction: float = 0.01

    def __post_init__(self):
        if self.horizon <= 0 or self.n_steps < 1 or self.n_paths < 1:
            raise ValidationError("horizon, n_steps and n_paths must be positive")
        if self.small_jump_cutoff <= 0:
            raise ValidationError("small_jump_cutoff must be positive")
        if self.small_jump_mode not in ("gaussian_match", "drop"):
            raise ValidationError(f"unknown small_jump_mode {self.small_jump_mode!r}")
        if self.big_jump_intensity_bound < 0:
            raise ValidationError("big_jump_intensity_bound must be >= 0")

    def replace(self, **kw):
        d = self.__dict__.copy()
        d.update(kw)
        return SimConfig(**d)


def path_rng(master_seed: int, path_index: int) -> np.random.Generator:
    """Counter-derived stream: (seed, path index) fully determines a path."""
    ss = np.random.SeedSequence(entropy=int(master_seed),
                                spawn_key=(int(path_index),))
    return np.random.default_rng(ss)


def event_rng(master_seed: int, path_index: int, event_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(master_seed),
                                spawn_key=(int(path_index), 1 + int(event_index)))
    return np.random.default_rng(ss)


# ---------------------------------------------------------------------------
# jump measures of the transformed state
# ---------------------------------------------------------------------------

class EmptyJumpMeasure:
    """No jumps at all."""

    is_empty = True

    def prepare(self, delta, trunc, transform, master_seed):
        return _EmptyOps()

    def x_margin(self):
        return 0.0

    def z_margin(self):
        return 0.0


class _EmptyOps:
    def big_rate(self, y):
        return np.zeros_like(np.asarray(y, dtype=float))

    kdelta = big_rate
    small_var = big_rate

    def sample(self, y_pre, u1, u2, path_idx, cand_idx):
        raise RuntimeError("no jumps to sample from the empty measure")


@dataclass
class AtomJumpMeasure:
    """Finitely many jump sizes in transformed coordinates, constant rates.

    Meant for synthetic experiments directly on the transformed state
    (no original-variable kernel behind it).
    """

    atoms: tuple  # of (size z, rate)

    is_empty = False

    def prepare(self, delta, trunc, transform, master_seed):
        z = np.asarray([a[0] for a in self.atoms], dtype=float)
        r = np.asarray([a[1] for a in self.atoms], dtype=float)
        if np.any(z == 0.0) or np.any(r < 0):
            raise ValidationError("atom sizes must avoid 0 and rates be nonnegative")
        big = np.abs(z) > delta
        return _AtomOps(z[big], r[big], float(np.sum(trunc(z[big]) * r[big])),
                        float(np.sum(z[~big] ** 2 * r[~big])), transform)

    def x_margin(self):
        return 0.0

    def z_margin(self):
        return max(abs(a[0]) for a in self.atoms)


class _AtomOps:
    def __init__(self, z_big, r_big, kdelta_const, small_var_const, transform):
        self.z_big = z_big
        self.r_big = r_big
        self.rate_const = float(np.sum(r_big))
        self.kdelta_const = kdelta_const
        self.small_var_const = small_var_const
        self.transform = transform
        self.cum = (np.cumsum(r_big) / max(self.rate_const, 1e-300)
                    if len(r_big) else np.asarray([]))

    def big_rate(self, y):
        return np.full_like(np.asarray(y, dtype=float), self.rate_const)

    def kdelta(self, y):
        return np.full_like(np.asarray(y, dtype=float), self.kdelta_const)

    def small_var(self, y):
        return np.full_like(np.asarray(y, dtype=float), self.small_var_const)

    def sample(self, y_pre, u1, u2, path_idx, cand_idx):
        idx = np.searchsorted(self.cum, np.asarray(u1))
        z = self.z_big[np.clip(idx, 0, len(self.z_big) - 1)]
        if self.transform is None or self.transform.is_identity:
            w = z.copy()
        else:
            w = (self.transform.inverse(np.asarray(y_pre) + z)
                 - self.transform.inverse(np.asarray(y_pre)))
        return z, w


@dataclass
class PushforwardJumpMeasure:
    """Image of a state-dependent kernel under the scale transform."""

    kernel: Kernel
    transform: ScaleTransform

    is_empty = False

    def x_margin(self):
        return float(self.kernel.support_radius)

    def z_margin(self):
        return 0.0

    def prepare(self, delta, trunc, transform, master_seed):
        del transform  # the measure carries its own
        k, tr = self.kernel, self.transform
        if isinstance(k, StableTailKernel):
            if not tr.is_identity:
                raise RangeError(
                    "power-tail kernels need the identity transform: their support "
                    "exceeds any finite transform table"
                )
            return _StableOps(k, delta, trunc)
        if isinstance(k, FiniteActivityKernel) and isinstance(k.law, DiscreteLaw):
            return _DiscretePushOps(k, tr, delta, trunc)
        if isinstance(k, FiniteActivityKernel) and isinstance(k.law, DensityLaw):
            return _DensityPushOps(k, tr, delta, trunc, master_seed)
        if isinstance(k, TabulatedKernel):
            return _TabulatedPushOps(k, tr, delta, trunc)
        raise ValidationError(f"unsupported kernel type {type(k).__name__}")


class _StableOps:
    """Identity transform: everything is state independent and closed form."""

    def __init__(self, kernel: StableTailKernel, delta, trunc):
        self.kernel = kernel
        self.delta = float(delta)
        rate = 2.0 * float(kernel.one_tail_mass(self.delta))
        kneg = kernel.integral(0.0, lambda z: np.asarray(trunc(z)),
                               lo=-np.inf, hi=-self.delta, tol=1e-10,
                               g_bound=trunc.cap)
        kpos = kernel.integral(0.0, lambda z: np.asarray(trunc(z)),
                               lo=self.delta, hi=np.inf, tol=1e-10,
                               g_bound=trunc.cap)
        svar = kernel.integral(0.0, lambda z: np.asarray(z, dtype=float) ** 2,
                               lo=-self.delta, hi=self.delta, tol=1e-10)
        self._rate, self._kdelta, self._svar = rate, kneg + kpos, svar

    def big_rate(self, y):
        return np.full_like(np.asarray(y, dtype=float), self._rate)

    def kdelta(self, y):
        return np.full_like(np.asarray(y, dtype=float), self._kdelta)

    def small_var(self, y):
        return np.full_like(np.asarray(y, dtype=float), self._svar)

    def sample(self, y_pre, u1, u2, path_idx, cand_idx):
        z = self.kernel.sample_two_tail(np.asarray(u1), np.asarray(u2),
                                        -self.delta, self.delta)
        return z, z.copy()


class _DiscretePushOps:
    """Finite-activity discrete law through a (possibly nontrivial) transform.

    When the big/small classification of every atom is uniform over the
    working range, the three state profiles are smooth, so they are
    tabulated once and interpolated (the per-step exact evaluation costs
    three transform inversions, which dominates the whole engine).  Size
    sampling is always exact.
    """

    def __init__(self, kernel: FiniteActivityKernel, transform, delta, trunc):
        self.kernel = kernel
        self.transform = transform
        self.delta = float(delta)
        self.trunc = trunc
        self.w = kernel.law.positions
        self.p = kernel.law.probs
        self._tab = None
        if not transform.is_identity:
            ys = _shrunk_image_grid(transform, kernel.law.support_radius, 257)
            _, z = self._images(ys)
            big = np.abs(z) > self.delta
            uniform = np.all(big == big[:1, :])
            if uniform:
                self._tab = (PchipInterpolator(ys, self._exact_big_rate(ys)),
                             PchipInterpolator(ys, self._exact_kdelta(ys)),
                             PchipInterpolator(ys, self._exact_small_var(ys)))

    def _images(self, y):
        y = np.asarray(y, dtype=float)
        x = self.transform.inverse(y)
        z = np.stack([np.asarray(self.transform.forward(x + w)) - y
                      for w in self.w], axis=-1)
        return x, z

    def _exact_big_rate(self, y):
        x, z = self._images(y)
        pbig = np.sum(np.where(np.abs(z) > self.delta, self.p, 0.0), axis=-1)
        return self.kernel.rate_at(x) * pbig

    def _exact_kdelta(self, y):
        x, z = self._images(y)
        kz = np.asarray(self.trunc(z))
        vals = np.sum(np.where(np.abs(z) > self.delta, self.p * kz, 0.0), axis=-1)
        return self.kernel.rate_at(x) * vals

    def _exact_small_var(self, y):
        x, z = self._images(y)
        vals = np.sum(np.where(np.abs(z) <= self.delta, self.p * z**2, 0.0), axis=-1)
        return self.kernel.rate_at(x) * vals

    def big_rate(self, y):
        if self._tab is not None:
            return np.asarray(self._tab[0](np.asarray(y, dtype=float)))
        return self._exact_big_rate(y)

    def kdelta(self, y):
        if self._tab is not None:
            return np.asarray(self._tab[1](np.asarray(y, dtype=float)))
        return self._exact_kdelta(y)

    def small_var(self, y):
        if self._tab is not None:
            return np.asarray(self._tab[2](np.asarray(y, dtype=float)))
        return self._exact_small_var(y)

    def sample(self, y_pre, u1, u2, path_idx, cand_idx):
        _, z = self._images(y_pre)
        pbig = np.where(np.abs(z) > self.delta, self.p, 0.0)
        tot = np.sum(pbig, axis=-1, keepdims=True)
        cum = np.cumsum(pbig, axis=-1) / np.maximum(tot, 1e-300)
        idx = np.sum(cum < np.asarray(u1)[..., None], axis=-1)
        idx = np.clip(idx, 0, len(self.w) - 1)
        z_out = np.take_along_axis(z, idx[..., None], axis=-1)[..., 0]
        w_out = self.w[idx]
        return z_out, w_out


class _DensityPushOps:
    """Finite-activity continuous law; state profile tabulated, sizes rejected."""

    def __init__(self, kernel: FiniteActivityKernel, transform, delta, trunc,
                 master_seed, nodes=129):
        self.kernel = kernel
        self.transform = transform
        self.delta = float(delta)
        self.trunc = trunc
        self.master_seed = master_seed
        law = kernel.law
        if transform.is_identity:
            d = self.delta
            pbig = law.mass(-np.inf, -np.nextafter(d, np.inf)) + law.mass(
                np.nextafter(d, np.inf), np.inf)
            kdel = (law.expect(lambda z: np.asarray(trunc(z)), -np.inf, -d)
                    + law.expect(lambda z: np.asarray(trunc(z)), d, np.inf))
            svar = law.expect(lambda z: np.asarray(z) ** 2, -d, d)
            self._tab = None
            self._const = (pbig, kdel, svar)
        else:
            ys = _shrunk_image_grid(transform, kernel.law.support_radius, nodes)
            pb, kd, sv = [], [], []
            for yv in ys:
                pb.append(self._exact_pbig(yv))
                kd.append(self._exact_kdelta(yv))
                sv.append(self._exact_small_var(yv))
            self._tab = (PchipInterpolator(ys, np.asarray(pb)),
                         PchipInterpolator(ys, np.asarray(kd)),
                         PchipInterpolator(ys, np.asarray(sv)))
            self._const = None

    def _z_of(self, y, w):
        x = self.transform.inverse(y)
        return np.asarray(self.transform.forward(x + np.asarray(w))) - y

    def _exact_pbig(self, y):
        return self.kernel.law.expect(
            lambda w: (np.abs(self._z_of(y, w)) > self.delta).astype(float))

    def _exact_kdelta(self, y):
        def g(w):
            z = self._z_of(y, w)
            return np.where(np.abs(z) > self.delta, np.asarray(self.trunc(z)), 0.0)
        return self.kernel.law.expect(g)

    def _exact_small_var(self, y):
        def g(w):
            z = self._z_of(y, w)
            return np.where(np.abs(z) <= self.delta, z**2, 0.0)
        return self.kernel.law.expect(g)

    def _profile(self, y, which):
        y = np.asarray(y, dtype=float)
        if self._const is not None:
            return np.full_like(y, self._const[which])
        return np.asarray(self._tab[which](y))

    def big_rate(self, y):
        x = self.transform.inverse(np.asarray(y, dtype=float))
        return self.kernel.rate_at(x) * self._profile(y, 0)

    def kdelta(self, y):
        x = self.transform.inverse(np.asarray(y, dtype=float))
        return self.kernel.rate_at(x) * self._profile(y, 1)

    def small_var(self, y):
        x = self.transform.inverse(np.asarray(y, dtype=float))
        return self.kernel.rate_at(x) * self._profile(y, 2)

    def sample(self, y_pre, u1, u2, path_idx, cand_idx):
        y_pre = np.atleast_1d(np.asarray(y_pre, dtype=float))
        z_out = np.empty_like(y_pre)
        w_out = np.empty_like(y_pre)
        for i in range(len(y_pre)):
            rng = event_rng(self.master_seed, int(path_idx[i]), int(cand_idx[i]))
            for _ in range(10000):
                w = float(self.kernel.law.sampler(rng, 1)[0])
                z = float(self._z_of(y_pre[i], w))
                if abs(z) > self.delta:
                    z_out[i], w_out[i] = z, w
                    break
            else:
                raise IntensityBoundViolated(
                    "rejection sampling of a big jump failed 10000 times; "
                    "cutoff too large for this law"
                )
        return z_out, w_out


class _TabulatedPushOps:
    """Tabulated discrete kernels; everything evaluated exactly per state."""

    def __init__(self, kernel: TabulatedKernel, transform, delta, trunc):
        self.kernel = kernel
        self.transform = transform
        self.delta = float(delta)
        self.trunc = trunc

    def _rows(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        x = np.asarray(self.transform.inverse(y))
        out = []
        for xi, yi in zip(np.atleast_1d(x), y):
            pos, mass = self.kernel._at(xi)
            z = np.asarray(self.transform.forward(xi + pos)) - yi
            out.append((z, mass))
        return out

    def _reduce(self, y, fn):
        y_arr = np.asarray(y, dtype=float)
        rows = self._rows(y_arr)
        vals = np.asarray([fn(z, m) for z, m in rows])
        return vals.reshape(np.atleast_1d(y_arr).shape) if y_arr.ndim else float(vals[0])

    def big_rate(self, y):
        out = self._reduce(y, lambda z, m: float(np.sum(m[np.abs(z) > self.delta])))
        return np.asarray(out)

    def kdelta(self, y):
        return np.asarray(self._reduce(
            y, lambda z, m: float(np.sum(
                np.asarray(self.trunc(z)) * m * (np.abs(z) > self.delta)))))

    def small_var(self, y):
        return np.asarray(self._reduce(
            y, lambda z, m: float(np.sum(z**2 * m * (np.abs(z) <= self.delta)))))

    def sample(self, y_pre, u1, u2, path_idx, cand_idx):
        y_pre = np.atleast_1d(np.asarray(y_pre, dtype=float))
        u1 = np.atleast_1d(np.asarray(u1, dtype=float))
        z_out = np.empty_like(y_pre)
        w_out = np.empty_like(y_pre)
        rows = self._rows(y_pre)
        x = np.asarray(self.transform.inverse(y_pre))
        for i, (z, m) in enumerate(rows):
            big = np.abs(z) > self.delta
            zb, mb = z[big], m[big]
            cum = np.cumsum(mb) / np.sum(mb)
            j = int(np.clip(np.searchsorted(cum, u1[i]), 0, len(zb) - 1))
            z_out[i] = zb[j]
            pos, _ = self.kernel._at(float(np.atleast_1d(x)[i]))
            w_out[i] = pos[big][j]
        return z_out, w_out


# ---------------------------------------------------------------------------
# characteristics of the transformed state
# ---------------------------------------------------------------------------

def _shrunk_image_grid(transform: ScaleTransform, support_radius, nodes):
    """Image grid kept clear of the domain edges by the kernel support."""
    dlo, dhi = transform.domain
    sr = float(support_radius)
    if not np.isfinite(sr) or 2.0 * sr >= dhi - dlo:
        raise RangeError("kernel support exceeds the tabulated transform range")
    lo = float(np.asarray(transform.forward(np.asarray(dlo + sr))))
    hi = float(np.asarray(transform.forward(np.asarray(dhi - sr))))
    return np.linspace(lo, hi, nodes)


@dataclass
class CharacteristicsY:
    """Evaluators of the transformed equation: drift, diffusion, jump measure."""

    b: Callable
    sigma0: Callable
    measure: object

    def c(self, y):
        return np.asarray(self.sigma0(y)) ** 2


def build_characteristics(coeffs: CoefficientSet, kernel: Optional[Kernel],
                          trunc: TruncationFunction, tol=1e-8,
                          table_nodes=257) -> CharacteristicsY:
    """Characteristics induced by (transform, diffusion, kernel).

    For a nontrivial transform the state profiles (drift correction and
    transformed diffusion) are tabulated on the image and interpolated by
    monotone cubics; the residual interpolation error sits far below the
    Monte Carlo resolution these evaluators feed.
    """
    transform = coeffs.transform
    diffusion = coeffs.diffusion

    if transform.is_identity:
        def sigma0(y):
            return np.asarray(transformed_diffusion(transform, diffusion, y))
    else:
        lo, hi = transform.image
        ys_full = np.linspace(lo, hi, max(table_nodes, 2 * len(transform.grid) - 1))
        s_tab = PchipInterpolator(
            ys_full, np.asarray(transformed_diffusion(transform, diffusion, ys_full)))
        sigma0 = lambda y: np.asarray(s_tab(np.asarray(y, dtype=float)))

    if kernel is None:
        return CharacteristicsY(b=_as_vec(0.0), sigma0=sigma0,
                                measure=EmptyJumpMeasure())

    if transform.is_identity:
        b = _as_vec(0.0)  # the correction vanishes identically
    elif isinstance(kernel, FiniteActivityKernel) and isinstance(kernel.law, DiscreteLaw):
        w_atoms = kernel.law.positions
        p_atoms = kernel.law.probs

        def b_exact(y):
            y = np.asarray(y, dtype=float)
            x = transform.inverse(y)
            hp = np.asarray(transform.deriv(x))
            acc = np.zeros_like(y)
            for w, p in zip(w_atoms, p_atoms):
                z = np.asarray(transform.forward(x + w)) - y
                acc += p * (np.asarray(trunc(z)) - hp * float(trunc(w)))
            return kernel.rate_at(x) * acc

        ys = _shrunk_image_grid(transform, kernel.law.support_radius, table_nodes)
        interp = PchipInterpolator(ys, b_exact(ys))
        b = lambda y: np.asarray(interp(np.asarray(y, dtype=float)))
    else:
        ys = _shrunk_image_grid(transform, kernel.support_radius, table_nodes)
        vals = np.asarray([
            drift_correction(kernel, transform, trunc, float(yv), tol=tol)
            for yv in ys
        ])
        interp = PchipInterpolator(ys, vals)
        b = lambda y: np.asarray(interp(np.asarray(y, dtype=float)))

    return CharacteristicsY(b=b, sigma0=sigma0,
                            measure=PushforwardJumpMeasure(kernel, transform))


# ---------------------------------------------------------------------------
# paths and ensembles
# ---------------------------------------------------------------------------

@dataclass
class SamplePath:
    """One discretized path with its driving records."""

    times: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    brownian_increments: Optional[np.ndarray] = field(default=None, repr=False)
    jump_times: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    jump_y_pre: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    jump_x_pre: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    jump_z: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    jump_w: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    seed: int = 0
    excluded: bool = False

    @property
    def values(self):  # CagladPath-compatible alias
        return self.x

    @classmethod
    def deterministic(cls, times, values, jump_times=(), jump_sizes=()):
        """Handmade fixture path; pre-jump values read off the grid."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        jt = np.asarray(jump_times, dtype=float)
        jw = np.asarray(jump_sizes, dtype=float)
        x_pre = np.empty_like(jt)
        for i, t in enumerate(jt):
            idx = int(np.searchsorted(times, t - 1e-12)) - 1
            x_pre[i] = values[max(idx, 0)]
        return cls(times=times, y=values.copy(), x=values,
                   brownian_increments=None, jump_times=jt, jump_y_pre=x_pre.copy(),
                   jump_x_pre=x_pre, jump_z=jw.copy(), jump_w=jw)


@dataclass
class Ensemble:
    """Structure-of-arrays ensemble; rows are paths, last axis is time."""

    times: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    dW: np.ndarray = field(repr=False)
    active: np.ndarray = field(repr=False)
    jump_path: np.ndarray = field(repr=False)
    jump_time: np.ndarray = field(repr=False)
    jump_y_pre: np.ndarray = field(repr=False)
    jump_x_pre: np.ndarray = field(repr=False)
    jump_z: np.ndarray = field(repr=False)
    jump_w: np.ndarray = field(repr=False)
    config: SimConfig
    y0: float
    x0: float

    @property
    def n_paths(self):
        return self.y.shape[0]

    @property
    def excluded_count(self):
        return int(np.sum(~self.active))

    def path(self, i) -> SamplePath:
        sel = self.jump_path == i
        return SamplePath(
            times=self.times, y=self.y[i], x=self.x[i],
            brownian_increments=self.dW[i],
            jump_times=self.jump_time[sel], jump_y_pre=self.jump_y_pre[sel],
            jump_x_pre=self.jump_x_pre[sel], jump_z=self.jump_z[sel],
            jump_w=self.jump_w[sel], seed=i, excluded=not bool(self.active[i]),
        )

    def terminal_x(self):
        return self.x[self.active, -1]

    def terminal_y(self):
        return self.y[self.active, -1]


# ---------------------------------------------------------------------------
# the engine
# ---------------------------------------------------------------------------

def simulate_y(chars: CharacteristicsY, hbar: Optional[PathFunctional],
               config: SimConfig, y0: float,
               transform: Optional[ScaleTransform] = None,
               trunc: Optional[TruncationFunction] = None) -> Ensemble:
    """Simulate the transformed state; see the module docstring.

    ``trunc`` must be the same truncation that entered the drift of
    ``chars``; it feeds the compensator correction for explicitly
    simulated jumps.
    """
    transform = transform if transform is not None else ScaleTransform.identity()
    trunc = trunc if trunc is not None else TruncationFunction()
    if config.small_jump_cutoff >= trunc.radius:
        raise ValidationError("small_jump_cutoff must stay below the truncation radius")

    n, P = config.n_steps, config.n_paths
    T = config.horizon
    dt = T / n
    sq_dt = np.sqrt(dt)
    times = np.linspace(0.0, T, n + 1)
    lam_max = config.big_jump_intensity_bound

    ops = chars.measure.prepare(config.small_jump_cutoff, trunc, transform,
                                config.master_seed)
    has_jumps = not getattr(chars.measure, "is_empty", False)

    # effective exclusion bounds: evaluating the jump machinery at a state
    # requires the kernel support (and the transformed atom sizes) to stay
    # inside the tabulated ranges
    img_lo, img_hi = transform.image
    if not transform.is_identity:
        dlo, dhi = transform.domain
        xm = float(chars.measure.x_margin()) if has_jumps else 0.0
        zm = float(chars.measure.z_margin()) if has_jumps else 0.0
        if not np.isfinite(xm) or 2.0 * xm >= dhi - dlo:
            raise RangeError("kernel support exceeds the tabulated transform range")
        img_lo = float(np.asarray(transform.forward(np.asarray(dlo + xm)))) + zm
        img_hi = float(np.asarray(transform.forward(np.asarray(dhi - xm)))) - zm
        if not img_lo < y0 < img_hi:
            raise RangeError("initial state outside the effective range")

    # start-up validation of the dominating intensity on a scan grid
    if has_jumps:
        if transform.is_identity:
            span = max(8.0 * abs(float(np.asarray(chars.sigma0(np.asarray(y0)))))
                       * np.sqrt(T), 1.0)
            scan = np.linspace(y0 - span, y0 + span, 65)
        else:
            scan = np.linspace(img_lo, img_hi, 129)
        sup_rate = float(np.max(ops.big_rate(scan)))
        if sup_rate > lam_max * (1.0 + 1e-9):
            raise IntensityBoundViolated(
                f"dominating intensity {lam_max} below scanned supremum {sup_rate:.6g}"
            )

    # per-path noise blocks (fixed draw order: normals, small normals,
    # candidate count, candidate times, acceptance u, size u1, size u2)
    normals = np.empty((P, n))
    small_normals = np.empty((P, n))
    cand_records = []  # (step, path, time, u_accept, u1, u2, cand_idx)
    for i in range(P):
        rng = path_rng(config.master_seed, i)
        normals[i] = rng.standard_normal(n)
        small_normals[i] = rng.standard_normal(n)
        n_cand = rng.poisson(lam_max * T) if lam_max > 0 else 0
        t_cand = rng.uniform(0.0, T, size=n_cand)
        u_acc = rng.uniform(size=n_cand)
        u1 = rng.uniform(size=n_cand)
        u2 = rng.uniform(size=n_cand)
        for j in range(n_cand):
            step = min(int(t_cand[j] / dt), n - 1)
            cand_records.append((step, i, t_cand[j], u_acc[j], u1[j], u2[j], j))
    cand_records.sort(key=lambda r: (r[0], r[1], r[2]))
    cand_steps = np.asarray([r[0] for r in cand_records], dtype=int)

    Y = np.empty((P, n + 1))
    Y[:, 0] = y0
    active = np.ones(P, dtype=bool)
    stepper = hbar.make_stepper(None) if hbar is not None else None
    use_gauss = config.small_jump_mode == "gaussian_match"

    marks = {"path": [], "time": [], "y_pre": [], "z": [], "w": []}
    ptr = 0
    n_cand_total = len(cand_records)
    for s in range(n):
        y = Y[:, s]
        hv = stepper.update(y) if stepper is not None else 0.0
        drift = np.asarray(chars.b(y)) + np.asarray(chars.sigma0(y)) * hv
        jump_add = np.zeros(P)
        if has_jumps:
            drift = drift - np.asarray(ops.kdelta(y))
        if n_cand_total:
            lo = ptr
            while ptr < n_cand_total and cand_steps[ptr] == s:
                ptr += 1
            batch = cand_records[lo:ptr]
            if batch:
                p_idx = np.asarray([r[1] for r in batch], dtype=int)
                rate = np.asarray(ops.big_rate(y[p_idx]), dtype=float)
                ratio = rate / lam_max
                if np.any(ratio > 1.0 + 1e-12):
                    raise IntensityBoundViolated(
                        f"acceptance probability {float(np.max(ratio)):.6g} > 1 "
                        f"at step {s}"
                    )
                u_acc = np.asarray([r[3] for r in batch])
                acc = (u_acc < ratio) & active[p_idx]
                if np.any(acc):
                    pa = p_idx[acc]
                    z, w = ops.sample(
                        y[pa],
                        np.asarray([r[4] for r in batch])[acc],
                        np.asarray([r[5] for r in batch])[acc],
                        pa, np.asarray([r[6] for r in batch], dtype=int)[acc],
                    )
                    np.add.at(jump_add, pa, z)
                    marks["path"].extend(pa.tolist())
                    marks["time"].extend(np.asarray([r[2] for r in batch])[acc].tolist())
                    marks["y_pre"].extend(y[pa].tolist())
                    marks["z"].extend(np.asarray(z).tolist())
                    marks["w"].extend(np.asarray(w).tolist())
        incr = drift * dt + np.asarray(chars.sigma0(y)) * sq_dt * normals[:, s]
        if use_gauss and has_jumps:
            sv = np.asarray(ops.small_var(y))
            incr = incr + np.sqrt(np.maximum(sv, 0.0) * dt) * small_normals[:, s]
        y_next = y + incr + jump_add
        if not transform.is_identity:
            out = (y_next < img_lo) | (y_next > img_hi)
            newly = out & active
            if np.any(newly):
                active &= ~newly
            y_next = np.where(active, y_next, y)
        Y[:, s + 1] = y_next

    frac = 1.0 - float(np.mean(active))
    if frac > config.max_exclusion_fraction:
        raise RangeError(
            f"{frac:.2%} of paths left the tabulated range "
            f"(limit {config.max_exclusion_fraction:.2%}); widen the grid"
        )

    X = np.asarray(transform.inverse(Y)) if not transform.is_identity else Y.copy()
    jp = np.asarray(marks["path"], dtype=int)
    order = np.lexsort((np.asarray(marks["time"]), jp)) if len(jp) else np.empty(0, int)
    jt = np.asarray(marks["time"])[order] if len(jp) else np.empty(0)
    jy = np.asarray(marks["y_pre"])[order] if len(jp) else np.empty(0)
    jz = np.asarray(marks["z"])[order] if len(jp) else np.empty(0)
    jw = np.asarray(marks["w"])[order] if len(jp) else np.empty(0)
    jp = jp[order] if len(jp) else jp
    jx = (np.asarray(transform.inverse(jy)) if not transform.is_identity
          else jy.copy()) if len(jy) else np.empty(0)

    x0 = float(np.asarray(transform.inverse(np.asarray(y0))))
    return Ensemble(times=times, y=Y, x=X, dW=normals * sq_dt, active=active,
                    jump_path=jp, jump_time=jt, jump_y_pre=jy, jump_x_pre=jx,
                    jump_z=jz, jump_w=jw, config=config, y0=float(y0), x0=x0)


def simulate_x_markovian(coeffs: CoefficientSet, kernel: Optional[Kernel],
                         trunc: TruncationFunction, config: SimConfig,
                         x0: float) -> Ensemble:
    """Simulate the original state through its transformed characteristics."""
    chars = build_characteristics(coeffs, kernel, trunc)
    y0 = float(np.asarray(coeffs.transform.forward(np.asarray(x0))))
    return simulate_y(chars, None, config, y0, transform=coeffs.transform,
                      trunc=trunc)


def simulate_euler_direct(drift, sigma, config: SimConfig, x0: float) -> Ensemble:
    """Plain Euler reference for classical-coefficient cross-checks."""
    chars = CharacteristicsY(b=_as_vec(drift), sigma0=_as_vec(sigma),
                             measure=EmptyJumpMeasure())
    return simulate_y(chars, None, config, x0)


# ---------------------------------------------------------------------------
# reweighting
# ---------------------------------------------------------------------------

@dataclass
class GirsanovWeight:
    kappa: np.ndarray = field(repr=False)
    log_increments: np.ndarray = field(repr=False)

    @property
    def final(self):
        return float(self.kappa[..., -1]) if self.kappa.ndim == 1 else self.kappa[..., -1]


def _weight_core(times, x_values, dW, functional: PathFunctional):
    if dW is None:
        raise MissingDriverRecord("Brownian increments are required for reweighting")
    dt = np.diff(times)
    h = functional.grid_values(times, x_values)[..., :-1]
    log_inc = h * dW - 0.5 * h**2 * dt
    log_k = np.cumsum(log_inc, axis=-1)
    pad = np.zeros(x_values.shape[:-1] + (1,))
    kappa = np.exp(np.concatenate([pad, log_k], axis=-1))
    return kappa, log_inc


def girsanov_weight(path: SamplePath, functional: PathFunctional,
                    coeffs=None) -> GirsanovWeight:
    """Exponential reweighting along one path.

    Multiplying terminal values by the final weight realises the law in
    which the bounded functional acts as an extra drift through the
    diffusion coefficient.
    """
    del coeffs  # the weight only needs the path records
    kappa, log_inc = _weight_core(path.times, path.x, path.brownian_increments,
                                  functional)
    return GirsanovWeight(kappa=kappa, log_increments=log_inc)


def girsanov_weight_ensemble(ensemble: Ensemble,
                             functional: PathFunctional) -> GirsanovWeight:
    kappa, log_inc = _weight_core(ensemble.times, ensemble.x, ensemble.dW, functional)
    return GirsanovWeight(kappa=kappa, log_increments=log_inc)


@dataclass
class WeightedEstimate:
    value: float
    se: float
    ess: float


def weighted_expectation(ensemble: Ensemble, weights, g) -> WeightedEstimate:
    """Weighted Monte Carlo mean of a path functional with its standard error.

    ``g`` maps the ensemble to one value per path (active paths only are
    used) or may already be an array of per-path values.
    """
    w = np.asarray(weights, dtype=float)
    gv = np.asarray(g(ensemble) if callable(g) else g, dtype=float)
    if w.shape != gv.shape:
        raise ValidationError("weights and functional values are misaligned")
    ess = float(np.sum(w) ** 2 / np.sum(w**2))
    if ess < 10.0:
        raise DegenerateWeights(f"effective sample size {ess:.2f} < 10")
    prod = w * gv
    n = len(prod)
    value = float(np.mean(prod))
    se = float(np.std(prod, ddof=1) / np.sqrt(n))
    return WeightedEstimate(value=value, se=se, ess=ess)


# ---------------------------------------------------------------------------
# compensator and canonical-decomposition diagnostics
# ---------------------------------------------------------------------------

@dataclass
class ResidualStats:
    mean: float
    se: float
    per_path: np.ndarray = field(repr=False)

    @property
    def zscore(self):
        return self.mean / self.se if self.se > 0 else 0.0


def compensator_residual(ensemble: Ensemble, region, kernel: Kernel) -> ResidualStats:
    """Per-path N_T(A) minus the time integral of the kernel mass of A.

    ``region`` is a list of (lo, hi) intervals in original jump
    coordinates at positive distance from 0; the distance must exceed the
    image of the simulation cutoff so that every jump into A was
    simulated explicitly.
    """
    intervals = [(float(lo), float(hi)) for lo, hi in region]
    for lo, hi in intervals:
        if lo <= 0.0 <= hi:
            raise ValidationError("the region must stay away from 0")
    P = ensemble.n_paths
    counts = np.zeros(P)
    if len(ensemble.jump_path):
        inside = np.zeros(len(ensemble.jump_path), dtype=bool)
        for lo, hi in intervals:
            inside |= (ensemble.jump_w >= lo) & (ensemble.jump_w <= hi)
        np.add.at(counts, ensemble.jump_path[inside], 1.0)
    dt = float(ensemble.times[1] - ensemble.times[0])
    mass = np.asarray(kernel.region_mass_vec(ensemble.x[:, :-1], intervals))
    integral = mass.sum(axis=-1) * dt
    res = (counts - integral)[ensemble.active]
    return ResidualStats(mean=float(np.mean(res)),
                         se=float(np.std(res, ddof=1) / np.sqrt(len(res))),
                         per_path=res)


@dataclass
class DecompositionDiagnostics:
    levels: list
    sup_gap_mean: np.ndarray
    sup_gap_max: np.ndarray
    finest_integrals: np.ndarray = field(repr=False)  # per path, full grid


def canonical_decomposition_residual(ensemble: Ensemble, coeffs: CoefficientSet,
                                     approximants) -> DecompositionDiagnostics:
    """Stabilisation of int_0^t (local generator of f_n)(X_s) ds across levels.

    The gap between consecutive approximation levels, sup over the grid
    and averaged over paths, is the observable proxy for the convergence
    of the drift term in the canonical decomposition.
    """
    dt = float(ensemble.times[1] - ensemble.times[0])
    X = ensemble.x[ensemble.active]
    integrals = []
    for ap in approximants:
        gen = ap.generator_value(coeffs.diffusion, X[:, :-1])
        integ = np.cumsum(gen * dt, axis=-1)
        integ = np.concatenate([np.zeros((integ.shape[0], 1)), integ], axis=-1)
        integrals.append(integ)
    gap_mean, gap_max = [], []
    for a, b in zip(integrals[:-1], integrals[1:]):
        sup = np.max(np.abs(b - a), axis=-1)
        gap_mean.append(float(np.mean(sup)))
        gap_max.append(float(np.max(sup)))
    return DecompositionDiagnostics(
        levels=[ap.n for ap in approximants],
        sup_gap_mean=np.asarray(gap_mean), sup_gap_max=np.asarray(gap_max),
        finest_integrals=integrals[-1],
    )
