"""Path-dependent generator evaluation and martingale-problem residuals.

The generator of the lab's equations has a local part (conjugated through
the scale transform), a drift part driven by a bounded non-anticipating
path functional, and a nonlocal part coming from the jump kernel.  Path
functionals receive only the restriction of a path to [0, t]; they cannot
read the future because the data is simply not there.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from .coefficients import (CoefficientSet, ConjugateTestFunction, ScaleTransform,
                           local_generator, transformed_diffusion)
from .errors import ValidationError
from .kernels import (DiscreteLaw, FiniteActivityKernel, Kernel, StableTailKernel,
                      TabulatedKernel, TruncationFunction, drift_correction,
                      jump_operator, pushforward_integral)


# ---------------------------------------------------------------------------
# paths readable only up to their horizon
# ---------------------------------------------------------------------------

@dataclass
class CagladPath:
    """Left-limit path values on a time grid.

    ``restrict`` drops everything after t, so a functional evaluated on the
    result structurally cannot anticipate.  ``stopped`` keeps the grid but
    freezes the value from t onwards.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have equal shapes")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def horizon(self):
        return float(self.times[-1])

    def index_at(self, t):
        i = int(np.searchsorted(self.times, t + 1e-12)) - 1
        return max(i, 0)

    def value(self, s):
        return float(self.values[self.index_at(min(s, self.horizon))])

    def restrict(self, t):
        i = self.index_at(t)
        return CagladPath(self.times[: i + 1].copy(), self.values[: i + 1].copy())

    def stopped(self, t):
        i = self.index_at(t)
        vals = self.values.copy()
        vals[i + 1:] = vals[i]
        return CagladPath(self.times.copy(), vals)


# ---------------------------------------------------------------------------
# bounded non-anticipating path functionals
# ---------------------------------------------------------------------------

@dataclass
class PathFunctional:
    """Named bounded functional of the path restricted to [0, t].

    ``path_values`` is the vectorized form over a whole grid (used by the
    Monte Carlo layers); ``make_stepper`` yields an incremental evaluator
    for the simulator.  ``modulus(M, delta)`` optionally declares a
    uniform-continuity modulus on sup-norm balls of radius M.
    """

    name: str
    bound: float
    evaluate: Callable[[CagladPath, float], float]
    path_values: Optional[Callable] = None
    make_stepper: Optional[Callable] = None
    modulus: Optional[Callable[[float, float], float]] = None

    def grid_values(self, times, values):
        """H(eta)(t_i) along the grid; shape matches ``values``."""
        if self.path_values is not None:
            return np.asarray(self.path_values(times, values), dtype=float)
        values = np.asarray(values, dtype=float)
        flat = values.reshape(-1, values.shape[-1])
        out = np.empty_like(flat)
        for r in range(flat.shape[0]):
            path = CagladPath(times, flat[r])
            for i, t in enumerate(times):
                out[r, i] = self.evaluate(path.restrict(t), t)
        return out.reshape(values.shape)


class _ConstStepper:
    def __init__(self, c):
        self.c = c

    def update(self, y):
        return np.full_like(np.asarray(y, dtype=float), self.c)


class _RunningSupStepper:
    def __init__(self, cap, transform):
        self.cap = cap
        self.transform = transform
        self.state = None

    def update(self, y):
        x = self.transform.inverse(y) if self.transform is not None else np.asarray(y)
        if self.state is None:
            self.state = np.array(x, dtype=float)  # own the buffer, y may be a view
        else:
            self.state = np.maximum(self.state, x)
        return np.clip(self.state, -self.cap, self.cap)


class _LeftValueStepper:
    def __init__(self, fn, transform):
        self.fn = fn
        self.transform = transform

    def update(self, y):
        x = self.transform.inverse(y) if self.transform is not None else np.asarray(y)
        return self.fn(x)


def zero_functional():
    return PathFunctional(
        name="zero", bound=0.0,
        evaluate=lambda path, t: 0.0,
        path_values=lambda times, values: np.zeros_like(np.asarray(values, dtype=float)),
        make_stepper=lambda transform=None: _ConstStepper(0.0),
        modulus=lambda M, d: 0.0,
    )


def constant_functional(c):
    return PathFunctional(
        name=f"const({c})", bound=abs(c),
        evaluate=lambda path, t: float(c),
        path_values=lambda times, values: np.full_like(
            np.asarray(values, dtype=float), float(c)),
        make_stepper=lambda transform=None: _ConstStepper(float(c)),
        modulus=lambda M, d: 0.0,
    )


def clamped_running_sup(cap=1.0):
    """Running supremum clipped to [-cap, cap]: bounded, 1-Lipschitz in sup norm."""
    def ev(path: CagladPath, t):
        return float(np.clip(np.max(path.values), -cap, cap))

    def pv(times, values):
        run = np.maximum.accumulate(np.asarray(values, dtype=float), axis=-1)
        return np.clip(run, -cap, cap)

    return PathFunctional(
        name="clamped_running_sup", bound=cap, evaluate=ev, path_values=pv,
        make_stepper=lambda transform=None: _RunningSupStepper(cap, transform),
        modulus=lambda M, d: d,
    )


def sin_left_limit(amplitude=1.0, frequency=1.0):
    """Bounded sinusoidal of the current left-limit value (Markovian case)."""
    def fn(x):
        return amplitude * np.sin(frequency * np.asarray(x, dtype=float))

    return PathFunctional(
        name="sin_left_limit", bound=abs(amplitude),
        evaluate=lambda path, t: float(fn(path.values[-1])),
        path_values=lambda times, values: fn(values),
        make_stepper=lambda transform=None: _LeftValueStepper(fn, transform),
        modulus=lambda M, d: abs(amplitude * frequency) * d,
    )


FUNCTIONALS = {
    "zero": zero_functional,
    "clamped_running_sup": clamped_running_sup,
    "sin_left_limit": sin_left_limit,
}


def resolve_functional(name, **kwargs) -> PathFunctional:
    if name.startswith("const:"):
        return constant_functional(float(name.split(":", 1)[1]))
    if name not in FUNCTIONALS:
        raise ValidationError(f"unknown path functional {name!r}")
    return FUNCTIONALS[name](**kwargs)


def pullback_functional(functional: PathFunctional,
                        transform: ScaleTransform) -> PathFunctional:
    """Functional of the transformed path: evaluate on the preimage path."""
    if transform.is_identity:
        return functional

    def ev(path: CagladPath, t):
        pre = CagladPath(path.times, transform.inverse(path.values))
        return functional.evaluate(pre, t)

    def pv(times, values):
        return functional.grid_values(times, transform.inverse(values))

    return PathFunctional(
        name=functional.name + "@preimage", bound=functional.bound,
        evaluate=ev, path_values=pv,
        make_stepper=(lambda transform_=transform:
                      functional.make_stepper(transform_))
        if functional.make_stepper else None,
        modulus=functional.modulus,
    )


# ---------------------------------------------------------------------------
# generator values
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorValue:
    local: float
    drift: float
    jump: float

    @property
    def total(self):
        return self.local + self.drift + self.jump


def evaluate_generator(f: ConjugateTestFunction, functional: Optional[PathFunctional],
                       kernel: Optional[Kernel], trunc: TruncationFunction,
                       coeffs: CoefficientSet, path: CagladPath, t,
                       tol=1e-8) -> GeneratorValue:
    """Generator of the original equation on a path at time t."""
    transform = coeffs.transform
    x_t = path.value(t)
    local = float(np.asarray(local_generator(f, transform, coeffs.diffusion, x_t)))
    h_val = functional.evaluate(path.restrict(t), t) if functional is not None else 0.0
    fp = float(np.asarray(f.f_prime(transform, x_t)))
    drift = float(np.asarray(coeffs.diffusion.sigma(np.asarray(x_t)))) * h_val * fp
    if kernel is None:
        jump = 0.0
    else:
        fx, fpx = f.as_x_callables(transform)
        jump = jump_operator(fx, fpx, kernel, trunc, x_t, tol=tol,
                             f_sup=f.bound).value
    return GeneratorValue(local=local, drift=drift, jump=jump)


def evaluate_transformed_generator(phi: ConjugateTestFunction,
                                   hbar: Optional[PathFunctional],
                                   kernel: Optional[Kernel],
                                   transform: ScaleTransform,
                                   trunc: TruncationFunction,
                                   coeffs: CoefficientSet, y_path: CagladPath, t,
                                   tol=1e-8) -> GeneratorValue:
    """Generator of the transformed equation on an image-space path.

    The local part is the classical second-order term plus the drift
    correction; the nonlocal part integrates against the pushforward of
    the kernel.
    """
    y_t = y_path.value(t)
    s0 = float(np.asarray(transformed_diffusion(transform, coeffs.diffusion, y_t)))
    b = (drift_correction(kernel, transform, trunc, y_t, tol=tol)
         if kernel is not None else 0.0)
    phi_p = float(np.asarray(phi.phi_prime(np.asarray(y_t))))
    local = 0.5 * s0**2 * float(np.asarray(phi.phi_second(np.asarray(y_t)))) + b * phi_p
    h_val = hbar.evaluate(y_path.restrict(t), t) if hbar is not None else 0.0
    drift = s0 * h_val * phi_p

    if kernel is None:
        jump = 0.0
    else:
        phi_y = float(np.asarray(phi.phi(np.asarray(y_t))))

        def g(z):
            z = np.asarray(z, dtype=float)
            return phi.phi(y_t + z) - phi_y - np.asarray(trunc(z)) * phi_p

        jump = pushforward_integral(
            kernel, transform, y_t, g, tol=tol,
            g_bound=2.0 * phi.bound + trunc.cap * abs(phi_p),
            z_breakpoints=(-trunc.radius, trunc.radius),
        )
    return GeneratorValue(local=local, drift=drift, jump=jump)


def conjugation_residual(phi: ConjugateTestFunction,
                         functional: Optional[PathFunctional],
                         kernel: Optional[Kernel], trunc: TruncationFunction,
                         coeffs: CoefficientSet, path: CagladPath, t,
                         tol=1e-8):
    """|generator on the original path - transformed generator on its image|.

    The two sides are assembled through different integrals; their
    pointwise agreement is the computable content of the equivalence
    between the two formulations.
    """
    transform = coeffs.transform
    lhs = evaluate_generator(phi, functional, kernel, trunc, coeffs, path, t,
                             tol=tol).total
    y_path = CagladPath(path.times, transform.forward(path.values))
    hbar = pullback_functional(functional, transform) if functional is not None else None
    rhs = evaluate_transformed_generator(phi, hbar, kernel, transform, trunc,
                                         coeffs, y_path, t, tol=tol).total
    return abs(lhs - rhs)


# ---------------------------------------------------------------------------
# vectorized generator along grids and martingale residuals
# ---------------------------------------------------------------------------

def _jump_term_grid(f: ConjugateTestFunction, kernel: Optional[Kernel],
                    trunc: TruncationFunction, transform: ScaleTransform,
                    x, tol=1e-8, table_nodes=257):
    """Nonlocal generator term on an array of states.

    Discrete kernels are summed exactly and vectorized; kernels requiring
    quadrature are tabulated on a covering grid and interpolated (the
    interpolation error is far below Monte Carlo resolution, which is the
    only consumer of this code path).
    """
    x = np.asarray(x, dtype=float)
    if kernel is None:
        return np.zeros_like(x)
    fx, fpx = f.as_x_callables(transform)
    if isinstance(kernel, FiniteActivityKernel) and isinstance(kernel.law, DiscreteLaw):
        rate = kernel.rate_at(x)
        out = np.zeros_like(x)
        base = np.asarray(fx(x))
        fp = np.asarray(fpx(x))
        for w, p in zip(kernel.law.positions, kernel.law.probs):
            out += p * (np.asarray(fx(x + w)) - base - float(trunc(w)) * fp)
        return rate * out
    if isinstance(kernel, TabulatedKernel):
        out = np.empty_like(x)
        flat = out.ravel()
        xf = x.ravel()
        for i in range(len(xf)):
            flat[i] = jump_operator(fx, fpx, kernel, trunc, xf[i], tol=tol,
                                    f_sup=f.bound, split=False).value
        return out
    lo, hi = float(np.min(x)), float(np.max(x))
    if hi - lo < 1e-9:
        val = jump_operator(fx, fpx, kernel, trunc, lo, tol=tol,
                            f_sup=f.bound, split=False).value
        return np.full_like(x, val)
    nodes = np.linspace(lo, hi, table_nodes)
    if isinstance(kernel, StableTailKernel):
        from .kernels import _stable_nonlocal
        vals, _ = _stable_nonlocal(kernel, trunc, nodes, fx, fpx, tol=tol,
                                   split=False, f_sup=f.bound,
                                   subpanel_budget=512)
    else:
        vals = np.array([
            jump_operator(fx, fpx, kernel, trunc, float(u), tol=tol,
                          f_sup=f.bound, split=False).value
            for u in nodes
        ])
    return PchipInterpolator(nodes, vals)(x)


def generator_grid(f: ConjugateTestFunction, functional: Optional[PathFunctional],
                   kernel: Optional[Kernel], trunc: TruncationFunction,
                   coeffs: CoefficientSet, times, values, tol=1e-8):
    """Generator values along one path or a stack of paths (last axis = time)."""
    transform = coeffs.transform
    x = np.asarray(values, dtype=float)
    lf = np.asarray(local_generator(f, transform, coeffs.diffusion, x))
    if functional is None:
        hv = 0.0
    else:
        hv = functional.grid_values(np.asarray(times, dtype=float), x)
    fp = np.asarray(f.f_prime(transform, x))
    drift = np.asarray(coeffs.diffusion.sigma(x)) * hv * fp
    jump = _jump_term_grid(f, kernel, trunc, transform, x, tol=tol)
    return lf + drift + jump


def martingale_residual(path, f: ConjugateTestFunction,
                        functional: Optional[PathFunctional],
                        kernel: Optional[Kernel], trunc: TruncationFunction,
                        coeffs: CoefficientSet, tol=1e-8):
    """Residual path f(X_t) - f(x_0) - int_0^t (generator) ds on the grid.

    Left-endpoint rule with left limits, matching the predictable
    integrand of the defining property.  Accepts a simulated path object
    (with .times/.x) or a CagladPath.
    """
    times = np.asarray(path.times, dtype=float)
    values = np.asarray(path.x if hasattr(path, "x") else path.values, dtype=float)
    gen = generator_grid(f, functional, kernel, trunc, coeffs, times, values, tol=tol)
    return _residual_from_generator(times, values, gen, f, coeffs.transform)


def martingale_residual_ensemble(ensemble, f, functional, kernel, trunc, coeffs,
                                 tol=1e-8):
    """Residual paths for a whole ensemble, shape (paths, grid)."""
    times = ensemble.times
    values = ensemble.x
    gen = generator_grid(f, functional, kernel, trunc, coeffs, times, values, tol=tol)
    return _residual_from_generator(times, values, gen, f, coeffs.transform)


def _residual_from_generator(times, values, gen, f, transform):
    dt = np.diff(times)
    fx = np.asarray(f.f(transform, values))
    integ = np.cumsum(gen[..., :-1] * dt, axis=-1)
    pad = np.zeros(values.shape[:-1] + (1,))
    integ = np.concatenate([pad, integ], axis=-1)
    return fx - fx[..., :1] - integ


# ---------------------------------------------------------------------------
# uniform continuity of the generator on balls
# ---------------------------------------------------------------------------

@dataclass
class ModulusEstimate:
    deltas: np.ndarray
    sups: np.ndarray

    def slope(self):
        """Least-squares slope of sup against delta through the origin."""
        d, s = self.deltas, self.sups
        return float(np.sum(d * s) / np.sum(d * d))


def generator_ball_modulus(f: ConjugateTestFunction, functional, kernel,
                           trunc: TruncationFunction, coeffs: CoefficientSet,
                           ball_radius, n_probes=24, deltas=(0.4, 0.2, 0.1, 0.05),
                           seed=0, n_grid=65, tol=1e-6) -> ModulusEstimate:
    """Empirical modulus sup |gen(eta1)(t) - gen(eta2)(t)| over close path pairs.

    Pairs are random paths inside the sup-norm ball with perturbations of
    prescribed size; the report is cumulative over descending delta, so it
    is monotone by construction (a sup over a larger neighborhood can only
    grow).
    """
    rng = np.random.default_rng(seed)
    deltas = np.sort(np.asarray(deltas, dtype=float))
    times = np.linspace(0.0, 1.0, n_grid)
    sups = np.zeros_like(deltas)
    m = float(ball_radius)
    for _ in range(n_probes):
        steps = rng.standard_normal(n_grid - 1) * (0.5 * m / np.sqrt(n_grid))
        base = np.concatenate([[0.0], np.cumsum(steps)])
        base = np.clip(base, -0.8 * m, 0.8 * m)
        t = float(rng.choice(times[1:]))
        for j, d in enumerate(deltas):
            if rng.uniform() < 0.5:
                pert = np.full_like(base, d * rng.choice([-1.0, 1.0]))
            else:
                pert = d * rng.uniform(-1.0, 1.0, size=base.shape)
            other = np.clip(base + pert, -m, m)
            g1 = evaluate_generator(f, functional, kernel, trunc, coeffs,
                                    CagladPath(times, base), t, tol=tol).total
            g2 = evaluate_generator(f, functional, kernel, trunc, coeffs,
                                    CagladPath(times, other), t, tol=tol).total
            sups[j] = max(sups[j], abs(g1 - g2))
    return ModulusEstimate(deltas=deltas, sups=np.maximum.accumulate(sups))
