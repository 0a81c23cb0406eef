"""Pathwise calculus: regularization estimator of the quadratic variation,
covariations, the C^1 chain rule, and the integrability diagnostics that
separate processes with a zero-quadratic-variation remainder from those
without one.

All estimators work on the simulation grid; window widths must be integer
multiples of the step.  Nothing here attempts jump detection: jump marks
are taken from the simulation records, which are exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from .coefficients import CoefficientSet
from .errors import GridMismatch, MissingDriverRecord
from .kernels import (DiscreteLaw, FiniteActivityKernel, Kernel,
                      StableTailKernel)


# ---------------------------------------------------------------------------
# the regularization estimator
# ---------------------------------------------------------------------------

def _grid_step(times):
    dt = np.diff(times)
    if len(dt) == 0 or not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-12):
        raise GridMismatch("the time grid must be uniform")
    return float(dt[0])


def _window_steps(epsilon, dt):
    m = epsilon / dt
    if abs(m - round(m)) > 1e-6 * max(1.0, m):
        raise GridMismatch(f"epsilon {epsilon} is not a grid multiple of {dt}")
    m = int(round(m))
    if m < 1:
        raise GridMismatch("epsilon must be at least one grid step")
    return m


def _time_index(times, t, dt):
    k = t / dt
    if abs(k - round(k)) > 1e-6 * max(1.0, k):
        raise GridMismatch(f"t={t} is not on the grid")
    k = int(round(k))
    if not 0 < k <= len(times) - 1:
        raise GridMismatch(f"t={t} outside the grid")
    return k


def _qv_core(values, m, idx_t, dt, epsilon):
    """(1/eps) sum_{t_i < t} (v_{(t_i+eps) ^ t} - v_{t_i})^2 dt."""
    i = np.arange(idx_t)
    j = np.minimum(i + m, idx_t)
    d = values[..., j] - values[..., i]
    return np.sum(d * d, axis=-1) * dt / epsilon


def _path_values(path):
    return np.asarray(getattr(path, "x", None) if hasattr(path, "x")
                      else path.values, dtype=float)


def aligned_window_ladder(times, fracs=(0.1, 0.05, 0.025, 0.0125)):
    """Window widths near the requested horizon fractions, snapped to the
    grid (widths must be integer step multiples), descending, deduplicated."""
    times = np.asarray(times, dtype=float)
    dt = _grid_step(times)
    horizon = float(times[-1] - times[0])
    out = []
    for f in sorted(fracs, reverse=True):
        m = max(int(round(f * horizon / dt)), 1)
        eps = m * dt
        if eps < horizon and (not out or eps < out[-1]):
            out.append(eps)
    if not out:
        raise GridMismatch("no admissible window widths on this grid")
    return tuple(out)


def qv_regularization(path, epsilon, t):
    """Quadratic-variation estimate of one path at time t and window epsilon."""
    times = np.asarray(path.times, dtype=float)
    dt = _grid_step(times)
    if epsilon >= t:
        raise GridMismatch("epsilon must be smaller than t")
    m = _window_steps(epsilon, dt)
    idx_t = _time_index(times, t, dt)
    return float(_qv_core(_path_values(path), m, idx_t, dt, epsilon))


def covariation(path1, path2, epsilon, t):
    """Polarized covariation: quarter of [v1+v2] minus [v1-v2]."""
    t1 = np.asarray(path1.times, dtype=float)
    t2 = np.asarray(path2.times, dtype=float)
    if t1.shape != t2.shape or not np.allclose(t1, t2, rtol=1e-12, atol=1e-12):
        raise GridMismatch("covariation needs a common time grid")
    dt = _grid_step(t1)
    m = _window_steps(epsilon, dt)
    idx_t = _time_index(t1, t, dt)
    v1, v2 = _path_values(path1), _path_values(path2)
    plus = _qv_core(v1 + v2, m, idx_t, dt, epsilon)
    minus = _qv_core(v1 - v2, m, idx_t, dt, epsilon)
    return float(0.25 * (plus - minus))


@dataclass
class QVEstimate:
    epsilons: np.ndarray
    values: np.ndarray
    jump_sum: float
    continuous_part: float  # finest-window total minus the mark-based jump sum


def qv_estimate(path, epsilons, t) -> QVEstimate:
    """Window sweep plus the exact jump split from the recorded marks."""
    eps = np.sort(np.asarray(epsilons, dtype=float))[::-1]
    vals = np.asarray([qv_regularization(path, e, t) for e in eps])
    jt = np.asarray(getattr(path, "jump_times", np.empty(0)))
    jw = np.asarray(getattr(path, "jump_w", np.empty(0)))
    sel = jt <= t + 1e-12
    jump_sum = float(np.sum(jw[sel] ** 2))
    return QVEstimate(epsilons=eps, values=vals, jump_sum=jump_sum,
                      continuous_part=float(vals[-1] - jump_sum))


# ---------------------------------------------------------------------------
# chain rule
# ---------------------------------------------------------------------------

@dataclass
class ChainRuleComparison:
    predicted: float
    epsilons: np.ndarray
    estimated: np.ndarray

    @property
    def finest_estimate(self):
        return float(self.estimated[-1])


def chain_rule_qv(phi, phi_prime, path, epsilons, t) -> ChainRuleComparison:
    """Predicted vs estimated quadratic variation of the image path.

    Predicted: the weighted continuous part plus the exact sum of squared
    image jumps; the continuous increments are the grid increments with
    the in-step recorded jumps removed.  Estimated: the regularization
    estimator applied to the transformed values.
    """
    times = np.asarray(path.times, dtype=float)
    dt = _grid_step(times)
    idx_t = _time_index(times, t, dt)
    m_eps = np.sort(np.asarray(epsilons, dtype=float))[::-1]
    v = _path_values(path)

    jt = np.asarray(getattr(path, "jump_times", np.empty(0)))
    jw = np.asarray(getattr(path, "jump_w", np.empty(0)))
    jx = np.asarray(getattr(path, "jump_x_pre", np.empty(0)))
    sel = jt <= t + 1e-12
    jt, jw, jx = jt[sel], jw[sel], jx[sel]

    dvc = np.diff(v).copy()
    if len(jt):
        steps = np.clip(((jt - 1e-12) / dt).astype(int), 0, len(dvc) - 1)
        np.subtract.at(dvc, steps, jw)
    pred_cont = float(np.sum((np.asarray(phi_prime(v[:idx_t])) ** 2)
                             * dvc[:idx_t] ** 2))
    pred_jump = float(np.sum((np.asarray(phi(jx + jw)) - np.asarray(phi(jx))) ** 2))

    y = np.asarray(phi(v))
    est = np.asarray([
        float(_qv_core(y, _window_steps(e, dt), idx_t, dt, e)) for e in m_eps
    ])
    return ChainRuleComparison(predicted=pred_cont + pred_jump,
                               epsilons=m_eps, estimated=est)


# ---------------------------------------------------------------------------
# integrability growth table (big-jump image variation)
# ---------------------------------------------------------------------------

@dataclass
class IntegrabilityGrowthTable:
    threshold: float
    sample_sizes: np.ndarray
    means: np.ndarray
    caps: Optional[np.ndarray] = None
    capped_means: Optional[np.ndarray] = None

    def diverging(self, ratio=4.0):
        """Running-mean blow-up: record jumps dominate the sample mean."""
        m = self.means
        if len(m) < 2 or m[0] <= 0:
            return False
        return m[-1] > ratio * m[0] and not self.stabilized()

    def stabilized(self, rtol=0.25):
        m = self.means
        if len(m) < 2:
            return True
        if m[-1] == 0:
            return True
        return abs(m[-1] - m[-2]) <= rtol * abs(m[-1])


def dirichlet_condition_intY(phi, ensemble, a, sample_sizes,
                             caps=None) -> IntegrabilityGrowthTable:
    """Growth table of the summed big-jump image increments.

    For each n, the mean over the first n (active) paths of
    sum |phi(X_- + dX) - phi(X_-)| over jumps larger than ``a``.  A
    stabilizing table is consistent with integrability; unbounded growth
    is evidence against it.  This is a diagnostic, never a proof.
    ``caps`` adds truncated columns that drop increments above each cap,
    for comparison against closed-form tail integrals.
    """
    P = ensemble.n_paths
    jp = ensemble.jump_path
    big = np.abs(ensemble.jump_w) > a
    inc = np.abs(np.asarray(phi(ensemble.jump_x_pre + ensemble.jump_w))
                 - np.asarray(phi(ensemble.jump_x_pre)))
    sums = np.zeros(P)
    if len(jp):
        np.add.at(sums, jp[big], inc[big])
    active_sums = sums[ensemble.active]
    ns, means = [], []
    for n in np.asarray(sample_sizes, dtype=int):
        if n <= len(active_sums):
            ns.append(int(n))
            means.append(float(np.mean(active_sums[:n])))
    capped_means = None
    caps_arr = None
    if caps is not None:
        caps_arr = np.asarray(caps, dtype=float)
        capped_means = []
        for M in caps_arr:
            keep = big & (inc <= M)
            s = np.zeros(P)
            if len(jp):
                np.add.at(s, jp[keep], inc[keep])
            capped_means.append(float(np.mean(s[ensemble.active])))
        capped_means = np.asarray(capped_means)
    return IntegrabilityGrowthTable(threshold=float(a),
                                    sample_sizes=np.asarray(ns, dtype=int),
                                    means=np.asarray(means),
                                    caps=caps_arr, capped_means=capped_means)


# ---------------------------------------------------------------------------
# remainder reconstruction and its quadratic variation
# ---------------------------------------------------------------------------

def _phi_jump_compensator(kernel: Optional[Kernel], coeffs: CoefficientSet,
                          delta, phi, x_lo, x_hi, phi_bound,
                          nodes=129, tol=1e-8) -> Callable:
    """Vectorized x -> integral of the image increment over the simulated
    (big) jump region; matches the cutoff geometry of the engine."""
    if kernel is None:
        return lambda x: np.zeros_like(np.asarray(x, dtype=float))
    transform = coeffs.transform

    if isinstance(kernel, FiniteActivityKernel) and isinstance(kernel.law, DiscreteLaw):
        w_atoms, probs = kernel.law.positions, kernel.law.probs

        def fn(x):
            x = np.asarray(x, dtype=float)
            acc = np.zeros_like(x)
            base = np.asarray(phi(x))
            for w, p in zip(w_atoms, probs):
                z = np.asarray(transform.jump_image(x, w))
                acc += p * np.where(np.abs(z) > delta,
                                    np.asarray(phi(x + w)) - base, 0.0)
            return kernel.rate_at(x) * acc
        return fn

    if not transform.is_identity:
        raise MissingDriverRecord(
            "remainder reconstruction with this kernel needs the identity transform"
        )

    if isinstance(kernel, StableTailKernel):
        from .kernels import stable_threshold_expectation
        slope = float(np.max(np.abs(
            np.diff(phi(np.linspace(x_lo - 1, x_hi + 1, 257)))
            / np.diff(np.linspace(x_lo - 1, x_hi + 1, 257))))) + 1e-9
        xs = (np.linspace(x_lo, x_hi, nodes) if x_hi - x_lo > 1e-9
              else np.asarray([x_lo]))
        vals = stable_threshold_expectation(
            kernel, xs, lambda xc, w: np.asarray(phi(xc + w)) - np.asarray(phi(xc)),
            delta, g_bound=2.0 * phi_bound, g_slope=slope, tol=tol)
        if len(xs) == 1:
            c = float(vals[0])
            return lambda x: np.full_like(np.asarray(x, dtype=float), c)
        interp = PchipInterpolator(xs, vals)
        return lambda x: np.asarray(interp(np.asarray(x, dtype=float)))

    def node_value(xv):
        def g(w):
            return np.asarray(phi(xv + np.asarray(w))) - float(np.asarray(phi(np.asarray(xv))))
        lo_part = kernel.integral(xv, g, lo=-np.inf, hi=-delta, tol=tol,
                                  g_bound=2.0 * phi_bound)
        hi_part = kernel.integral(xv, g, lo=float(np.nextafter(delta, np.inf)),
                                  hi=np.inf, tol=tol, g_bound=2.0 * phi_bound)
        return lo_part + hi_part

    if x_hi - x_lo < 1e-9:
        c = node_value(x_lo)
        return lambda x: np.full_like(np.asarray(x, dtype=float), c)
    xs = np.linspace(x_lo, x_hi, nodes)
    vals = np.asarray([node_value(float(u)) for u in xs])
    interp = PchipInterpolator(xs, vals)
    return lambda x: np.asarray(interp(np.asarray(x, dtype=float)))


@dataclass
class GammaQVReport:
    epsilons: np.ndarray
    mean_qv: np.ndarray
    se_qv: np.ndarray

    @property
    def final(self):
        return float(self.mean_qv[-1])

    def decreasing(self):
        return bool(np.all(np.diff(self.mean_qv) < 0))


def gamma_residual_qv(ensemble, phi, phi_prime, coeffs: CoefficientSet,
                      kernel: Optional[Kernel], epsilons,
                      phi_bound=None, t=None) -> GammaQVReport:
    """Quadratic variation of the reconstructed orthogonal remainder.

    The remainder is the image path minus its reconstructed continuous
    martingale integral and compensated jump part, built from the recorded
    Brownian increments and jump marks.  Compensation integrates the
    kernel over the explicitly simulated (big) region only, matching what
    the engine actually produced.
    """
    if ensemble.dW is None or ensemble.dW.size == 0:
        raise MissingDriverRecord("ensemble lacks Brownian increment records")
    times = ensemble.times
    dt = _grid_step(times)
    act = ensemble.active
    X = ensemble.x[act]
    dW = ensemble.dW[act]
    n = X.shape[1] - 1
    t = float(times[-1]) if t is None else float(t)
    idx_t = _time_index(times, t, dt)

    sig = np.asarray(coeffs.diffusion.sigma(X[:, :-1]))
    stoch = np.cumsum(np.asarray(phi_prime(X[:, :-1])) * sig * dW, axis=-1)
    stoch = np.concatenate([np.zeros((X.shape[0], 1)), stoch], axis=-1)

    # cumulative jump image sums on the grid
    jump_cum = np.zeros_like(X)
    jp_all = ensemble.jump_path
    if len(jp_all):
        act_idx = np.flatnonzero(act)
        remap = -np.ones(ensemble.n_paths, dtype=int)
        remap[act_idx] = np.arange(len(act_idx))
        keep = remap[jp_all] >= 0
        rows = remap[jp_all[keep]]
        node = np.clip(np.ceil((ensemble.jump_time[keep] - 1e-12) / dt).astype(int),
                       1, n)
        inc = (np.asarray(phi(ensemble.jump_x_pre[keep] + ensemble.jump_w[keep]))
               - np.asarray(phi(ensemble.jump_x_pre[keep])))
        np.add.at(jump_cum, (rows, node), inc)
        jump_cum = np.cumsum(jump_cum, axis=-1)

    bound = phi_bound if phi_bound is not None else float(
        np.max(np.abs(phi(np.linspace(np.min(X), np.max(X), 33)))) + 1.0)
    comp_fn = _phi_jump_compensator(kernel, coeffs, ensemble.config.small_jump_cutoff,
                                    phi, float(np.min(X)), float(np.max(X)), bound)
    comp = np.cumsum(comp_fn(X[:, :-1]) * dt, axis=-1)
    comp = np.concatenate([np.zeros((X.shape[0], 1)), comp], axis=-1)

    gamma = (np.asarray(phi(X)) - np.asarray(phi(X[:, :1]))
             - stoch - (jump_cum - comp))

    eps = np.sort(np.asarray(epsilons, dtype=float))[::-1]
    means, ses = [], []
    for e in eps:
        m = _window_steps(e, dt)
        qv = _qv_core(gamma, m, idx_t, dt, e)
        means.append(float(np.mean(qv)))
        ses.append(float(np.std(qv, ddof=1) / np.sqrt(len(qv))))
    return GammaQVReport(epsilons=eps, mean_qv=np.asarray(means),
                         se_qv=np.asarray(ses))


# ---------------------------------------------------------------------------
# structure of the compensator in time, and the final verdict
# ---------------------------------------------------------------------------

@dataclass
class NuJumpVerdict:
    passed: bool
    r1_holds: bool
    r1bis_holds: bool
    detail: str


def nu_jump_structural_check(kernel: Optional[Kernel],
                             time_atoms=None) -> NuJumpVerdict:
    """Structural check that the jump compensator has no time atoms.

    Every kernel in this package enters through an absolutely continuous
    time integral, so the check passes unless the caller declares an
    atomic time component; in that case the weaker mean-jump condition
    still holds for symmetric kernels (informational verdict only, such
    compensators are not constructible here).
    """
    if not time_atoms:
        return NuJumpVerdict(passed=True, r1_holds=True, r1bis_holds=True,
                             detail="compensator absolutely continuous in time")
    symmetric = kernel.is_symmetric() if kernel is not None else True
    if symmetric:
        return NuJumpVerdict(passed=False, r1_holds=True, r1bis_holds=False,
                             detail="declared time atoms with a symmetric kernel: "
                                    "mean-jump condition holds, no-atom condition fails")
    return NuJumpVerdict(passed=False, r1_holds=False, r1bis_holds=False,
                         detail="declared time atoms with an asymmetric kernel: "
                                "mean-jump condition fails")


@dataclass
class DirichletReport:
    growth: IntegrabilityGrowthTable
    nu_jump: Optional[NuJumpVerdict]
    gamma: Optional[GammaQVReport]
    verdict: str

    def to_dict(self):
        d = {
            "verdict": self.verdict,
            "growth": {
                "threshold": self.growth.threshold,
                "sample_sizes": [int(v) for v in self.growth.sample_sizes],
                "means": [float(v) for v in self.growth.means],
            },
        }
        if self.growth.caps is not None:
            d["growth"]["caps"] = [float(v) for v in self.growth.caps]
            d["growth"]["capped_means"] = [float(v) for v in self.growth.capped_means]
        if self.nu_jump is not None:
            d["nu_jump"] = {"passed": self.nu_jump.passed,
                            "detail": self.nu_jump.detail}
        if self.gamma is not None:
            d["gamma_qv"] = {"epsilons": [float(v) for v in self.gamma.epsilons],
                             "mean_qv": [float(v) for v in self.gamma.mean_qv]}
        return d


def classify_dirichlet(growth: IntegrabilityGrowthTable,
                       nu_jump: Optional[NuJumpVerdict] = None,
                       gamma: Optional[GammaQVReport] = None,
                       noise_band=0.05, reference=None,
                       band=2.0) -> DirichletReport:
    """Combine the diagnostics into a three-way verdict.

    "inconsistent" requires positive evidence: a blowing-up growth table, a
    terminal mean far outside the factor-``band`` envelope of a declared
    finite ``reference`` (the tail integral when it converges, its largest
    truncation otherwise), or a remainder variation above the noise band
    at every window.  Trends within noise stay "inconclusive" rather than
    being forced into a class.
    """
    gamma_bad = gamma is not None and bool(np.all(gamma.mean_qv > noise_band))
    last = float(growth.means[-1]) if len(growth.means) else 0.0
    out_of_band = reference is not None and last > band**2 * reference
    in_band = (reference is None
               or (reference / band <= last <= band**2 * reference)
               or last == 0.0)

    # cap-ladder evidence (bounded summands, statistically solid): a
    # plateau across caps says the tail integral converges, growth
    # tracking the truncated integral says it does not
    cap_divergent = cap_plateau = None
    if growth.capped_means is not None and len(growth.capped_means) >= 2:
        lo = max(float(growth.capped_means[0]), 1e-12)
        ratio = float(growth.capped_means[-1]) / lo
        cap_divergent = ratio > band
        cap_plateau = ratio < 1.5

    if gamma_bad or out_of_band or (cap_divergent if cap_divergent is not None
                                    else growth.diverging()):
        verdict = "inconsistent"
    elif ((cap_plateau if cap_plateau is not None else growth.stabilized())
          and in_band and (gamma is None or gamma.final <= noise_band)):
        verdict = "consistent_with_dirichlet"
    else:
        verdict = "inconclusive"
    return DirichletReport(growth=growth, nu_jump=nu_jump, gamma=gamma,
                           verdict=verdict)
