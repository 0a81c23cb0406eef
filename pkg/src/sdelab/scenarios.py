"""Scenario registry, orchestration, counterexamples and report emission.

A scenario bundles coefficients, a jump kernel, a drift functional and a
simulation configuration under a registry name.  Running one always goes
hypothesis checks -> simulation -> requested diagnostics, in that order;
a scenario whose checks fail never simulates.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

from .coefficients import (CoefficientSet, ConjugateTestFunction, DiffusionSpec,
                           DriftSpec, MollifierConfig, check_hypotheses)
from .errors import IoError, ValidationError
from .generator import (PathFunctional, constant_functional,
                        martingale_residual_ensemble, resolve_functional)
from .kernels import (DiscreteLaw, FiniteActivityKernel, Kernel, StableTailKernel,
                      TruncationFunction, moment_bound)
from .pathcalc import (aligned_window_ladder, classify_dirichlet,
                       dirichlet_condition_intY, gamma_residual_qv,
                       nu_jump_structural_check, qv_estimate)
from .simulator import (Ensemble, SimConfig, girsanov_weight_ensemble,
                        compensator_residual, simulate_euler_direct,
                        simulate_x_markovian, weighted_expectation)

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# bounded C^2 profiles used by the statistical diagnostics
# ---------------------------------------------------------------------------

def standard_profiles():
    """Five bounded C^2 profiles with hand-coded derivatives."""
    return (
        ConjugateTestFunction(np.sin, np.cos, lambda y: -np.sin(y), 1.0, "sin"),
        ConjugateTestFunction(lambda y: 0.5 * np.cos(2 * y),
                              lambda y: -np.sin(2 * y),
                              lambda y: -2.0 * np.cos(2 * y), 0.5, "cos2"),
        ConjugateTestFunction(np.tanh, lambda y: 1.0 - np.tanh(y) ** 2,
                              lambda y: -2.0 * np.tanh(y) * (1.0 - np.tanh(y) ** 2),
                              1.0, "tanh"),
        ConjugateTestFunction(lambda y: y / (1.0 + y**2),
                              lambda y: (1.0 - y**2) / (1.0 + y**2) ** 2,
                              lambda y: 2.0 * y * (y**2 - 3.0) / (1.0 + y**2) ** 3,
                              0.5, "ratio"),
        ConjugateTestFunction(lambda y: np.exp(-0.5 * y**2),
                              lambda y: -y * np.exp(-0.5 * y**2),
                              lambda y: (y**2 - 1.0) * np.exp(-0.5 * y**2),
                              1.0, "gauss"),
    )


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

@dataclass
class ScenarioBundle:
    name: str
    coeffs: CoefficientSet
    kernel: Optional[Kernel]
    trunc: TruncationFunction
    functional: Optional[PathFunctional]
    x0: float
    sim: SimConfig
    diagnostics: tuple


def _zero_beta(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _unit_sigma(x):
    return np.ones_like(np.asarray(x, dtype=float))


def _linear_drift(slope):
    return DriftSpec(beta=lambda x: slope * np.asarray(x, dtype=float),
                     beta_prime=lambda x: np.full_like(
                         np.asarray(x, dtype=float), slope),
                     name=f"linear({slope})")


def _tanh_drift(amp=0.6, width=2.0):
    return DriftSpec(
        beta=lambda x: amp * np.tanh(np.asarray(x, dtype=float) / width),
        beta_prime=lambda x: (amp / width) / np.cosh(
            np.asarray(x, dtype=float) / width) ** 2,
        name="tanh-drift")


def weierstrass_beta(n_terms=9, decay=0.5, lacunarity=2.0):
    """Truncated lacunary sine series; Hoelder exponent ~ -log(decay^?)."""
    js = np.arange(n_terms)
    amps = decay ** (js / 1.0) if decay != 0.5 else 2.0 ** (-js / 2.0)
    freqs = lacunarity ** js

    def beta(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for a, f in zip(amps, freqs):
            out = out + a * np.sin(f * x)
        return out

    return beta


def _weierstrass_drift():
    return DriftSpec(beta=weierstrass_beta(), name="weierstrass")


def _unit_diffusion():
    return DiffusionSpec(sigma=_unit_sigma, sigma_min=1.0, sigma_max=1.0, name="unit")


def _build_brownian():
    grid = np.linspace(-8.0, 8.0, 641)
    coeffs = CoefficientSet.build(DriftSpec(beta=_zero_beta, beta_prime=_zero_beta,
                                            name="zero"),
                                  _unit_diffusion(), MollifierConfig(), grid)
    return ScenarioBundle(
        name="brownian_baseline", coeffs=coeffs, kernel=None,
        trunc=TruncationFunction(), functional=None, x0=0.0,
        sim=SimConfig(horizon=1.0, n_steps=256, n_paths=2000, master_seed=11,
                      big_jump_intensity_bound=0.0),
        diagnostics=("martingale", "qv", "gamma"),
    )


def _build_smooth_drift():
    grid = np.linspace(-8.0, 8.0, 801)
    coeffs = CoefficientSet.build(_linear_drift(0.3), _unit_diffusion(),
                                  MollifierConfig(), grid)
    return ScenarioBundle(
        name="smooth_drift_crosscheck", coeffs=coeffs, kernel=None,
        trunc=TruncationFunction(), functional=None, x0=0.0,
        sim=SimConfig(horizon=1.0, n_steps=256, n_paths=4000, master_seed=5,
                      big_jump_intensity_bound=0.0),
        diagnostics=("crosscheck_euler", "martingale"),
    )


def _build_weierstrass():
    grid = np.linspace(-4.0, 4.0, 1601)
    moll = MollifierConfig(widths=(2.5e-5, 1.25e-5, 6.25e-6))
    coeffs = CoefficientSet.build(_weierstrass_drift(), _unit_diffusion(), moll, grid)
    return ScenarioBundle(
        name="weierstrass_drift", coeffs=coeffs, kernel=None,
        trunc=TruncationFunction(), functional=None, x0=0.0,
        sim=SimConfig(horizon=0.25, n_steps=128, n_paths=500, master_seed=3,
                      big_jump_intensity_bound=0.0),
        diagnostics=("martingale",),
    )


def _build_atom_jump():
    grid = np.linspace(-8.0, 8.0, 801)
    coeffs = CoefficientSet.build(_tanh_drift(), _unit_diffusion(),
                                  MollifierConfig(), grid)
    kernel = FiniteActivityKernel(rate=1.0, law=DiscreteLaw(((0.1, 1.0),)), alpha=1.0)
    return ScenarioBundle(
        name="atom_jump", coeffs=coeffs, kernel=kernel,
        trunc=TruncationFunction(), functional=None, x0=0.0,
        sim=SimConfig(horizon=1.0, n_steps=512, n_paths=2000, master_seed=17,
                      small_jump_cutoff=0.01, big_jump_intensity_bound=1.05),
        diagnostics=("martingale", "compensator", "conjugation"),
    )


def _build_stable_jump(gamma=1.5, scale=0.5):
    coeffs = CoefficientSet.unit()
    alpha = min(1.0, gamma / 2.0)
    kernel = StableTailKernel(gamma=gamma, scale=scale, alpha=alpha)
    delta = 0.1
    lam = 2.0 * float(kernel.one_tail_mass(delta))
    return ScenarioBundle(
        name="stable_jump", coeffs=coeffs, kernel=kernel,
        trunc=TruncationFunction(), functional=None, x0=0.0,
        sim=SimConfig(horizon=1.0, n_steps=128, n_paths=2000, master_seed=29,
                      small_jump_cutoff=delta,
                      big_jump_intensity_bound=lam * 1.02),
        diagnostics=("compensator", "qv"),
    )


def _build_path_dependent():
    grid = np.linspace(-8.0, 8.0, 641)
    coeffs = CoefficientSet.build(DriftSpec(beta=_zero_beta, beta_prime=_zero_beta,
                                            name="zero"),
                                  _unit_diffusion(), MollifierConfig(), grid)
    return ScenarioBundle(
        name="path_dependent_drift", coeffs=coeffs, kernel=None,
        trunc=TruncationFunction(), functional=resolve_functional("clamped_running_sup"),
        x0=0.0,
        sim=SimConfig(horizon=1.0, n_steps=256, n_paths=4000, master_seed=23,
                      big_jump_intensity_bound=0.0),
        diagnostics=("girsanov", "martingale"),
    )


_REGISTRY: dict = {
    "brownian_baseline": _build_brownian,
    "smooth_drift_crosscheck": _build_smooth_drift,
    "weierstrass_drift": _build_weierstrass,
    "atom_jump": _build_atom_jump,
    "stable_jump": _build_stable_jump,
    "path_dependent_drift": _build_path_dependent,
}


def scenario_names():
    return tuple(sorted(_REGISTRY))


# ---------------------------------------------------------------------------
# declarative specification
# ---------------------------------------------------------------------------

@dataclass
class ScenarioSpec:
    name: str
    n_paths: Optional[int] = None
    n_steps: Optional[int] = None
    seed: Optional[int] = None
    horizon: Optional[float] = None
    x0: Optional[float] = None
    diagnostics: Optional[tuple] = None
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "name": self.name, "n_paths": self.n_paths, "n_steps": self.n_steps,
            "seed": self.seed, "horizon": self.horizon, "x0": self.x0,
            "diagnostics": list(self.diagnostics) if self.diagnostics else None,
            "params": dict(sorted(self.params.items())),
        }


def load_spec(path) -> ScenarioSpec:
    """Read a declarative scenario description (plain key/value document)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or "scenario" not in doc:
        raise ValidationError("configuration must contain a 'scenario' section")
    sect = doc["scenario"]
    known = {"name", "n_paths", "n_steps", "seed", "horizon", "x0",
             "diagnostics", "params"}
    unknown = set(sect) - known
    if unknown:
        raise ValidationError(f"unknown configuration keys: {sorted(unknown)}")
    if "name" not in sect:
        raise ValidationError("scenario.name is required")
    diags = sect.get("diagnostics")
    return ScenarioSpec(
        name=str(sect["name"]),
        n_paths=sect.get("n_paths"), n_steps=sect.get("n_steps"),
        seed=sect.get("seed"), horizon=sect.get("horizon"), x0=sect.get("x0"),
        diagnostics=tuple(diags) if diags else None,
        params=dict(sect.get("params") or {}),
    )


def build_bundle(spec: ScenarioSpec) -> ScenarioBundle:
    if spec.name not in _REGISTRY:
        raise ValidationError(f"unknown scenario {spec.name!r}; "
                              f"known: {', '.join(scenario_names())}")
    builder = _REGISTRY[spec.name]
    params = dict(spec.params)
    functional_name = params.pop("functional", None)
    try:
        bundle = builder(**params)
    except TypeError as exc:
        raise ValidationError(f"bad parameters for {spec.name}: {exc}") from exc
    sim = bundle.sim
    kw = {}
    if spec.n_paths is not None:
        kw["n_paths"] = int(spec.n_paths)
    if spec.n_steps is not None:
        kw["n_steps"] = int(spec.n_steps)
    if spec.seed is not None:
        kw["master_seed"] = int(spec.seed)
    if spec.horizon is not None:
        kw["horizon"] = float(spec.horizon)
    if kw:
        sim = sim.replace(**kw)
    functional = bundle.functional
    if functional_name is not None:
        functional = resolve_functional(str(functional_name))
    return ScenarioBundle(
        name=bundle.name, coeffs=bundle.coeffs, kernel=bundle.kernel,
        trunc=bundle.trunc, functional=functional,
        x0=bundle.x0 if spec.x0 is None else float(spec.x0),
        sim=sim,
        diagnostics=spec.diagnostics if spec.diagnostics is not None
        else bundle.diagnostics,
    )


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

@dataclass
class DiagnosticResult:
    name: str
    status: str  # pass / fail / inconclusive
    statistic: float
    tolerance: float
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "status": self.status,
                "statistic": self.statistic, "tolerance": self.tolerance,
                "details": dict(sorted(self.details.items()))}


def _status(ok):
    return "pass" if ok else "fail"


def _diag_martingale(bundle: ScenarioBundle, ens: Ensemble) -> DiagnosticResult:
    """Zero-mean terminal residuals and increment orthogonality, 5 profiles."""
    worst = 0.0
    details = {}
    n_half = ens.x.shape[1] // 2
    x_half = ens.x[:, n_half]
    run_half = np.clip(np.maximum.accumulate(ens.x, axis=-1)[:, n_half], -1.0, 1.0)
    pasts = {"clamp_mid": np.clip(x_half, -1.0, 1.0),
             "one": np.ones_like(x_half),
             "runsup_mid": run_half}
    for prof in standard_profiles():
        M = martingale_residual_ensemble(ens, prof, bundle.functional, bundle.kernel,
                                         bundle.trunc, bundle.coeffs)
        M = M[ens.active]
        m_t = M[:, -1]
        z = abs(np.mean(m_t)) / (np.std(m_t, ddof=1) / np.sqrt(len(m_t)))
        details[f"{prof.name}_terminal_z"] = float(z)
        worst = max(worst, float(z))
        inc = M[:, -1] - M[:, n_half]
        for gname, g in pasts.items():
            prod = inc * g[ens.active]
            se = np.std(prod, ddof=1) / np.sqrt(len(prod))
            z2 = abs(np.mean(prod)) / se if se > 0 else 0.0
            details[f"{prof.name}_orth_{gname}_z"] = float(z2)
            worst = max(worst, float(z2))
    return DiagnosticResult("martingale", _status(worst < 3.0), worst, 3.0, details)


def _diag_qv(bundle: ScenarioBundle, ens: Ensemble) -> DiagnosticResult:
    """Window sweep of the realized variation against the driver-based value."""
    T = float(ens.times[-1])
    eps = aligned_window_ladder(ens.times)
    dt = float(ens.times[1] - ens.times[0])
    n_use = min(100, ens.n_paths)
    vals, refs = [], []
    used = 0
    for i in range(ens.n_paths):
        if used >= n_use:
            break
        if not ens.active[i]:
            continue
        p = ens.path(i)
        est = qv_estimate(p, eps, T)
        sig = np.asarray(bundle.coeffs.diffusion.sigma(p.x[:-1]))
        ref = float(np.sum(sig**2) * dt + np.sum(p.jump_w**2))
        vals.append(est.values[-1])
        refs.append(ref)
        used += 1
    vals, refs = np.asarray(vals), np.asarray(refs)
    rel = abs(np.mean(vals) - np.mean(refs)) / max(np.mean(refs), 1e-12)
    return DiagnosticResult("qv", _status(rel < 0.1), float(rel), 0.1,
                            {"finest_mean": float(np.mean(vals)),
                             "reference_mean": float(np.mean(refs)),
                             "epsilons": [float(e) for e in eps]})


def _diag_gamma(bundle: ScenarioBundle, ens: Ensemble) -> DiagnosticResult:
    eps = aligned_window_ladder(ens.times)
    rep = gamma_residual_qv(ens, np.sin, np.cos, bundle.coeffs, bundle.kernel,
                            eps, phi_bound=1.0)
    ok = rep.decreasing() and rep.final < 0.05
    return DiagnosticResult("gamma", _status(ok), rep.final, 0.05,
                            {"mean_qv": [float(v) for v in rep.mean_qv],
                             "decreasing": bool(rep.decreasing())})


def _diag_girsanov(bundle: ScenarioBundle, ens: Ensemble) -> DiagnosticResult:
    functional = bundle.functional or constant_functional(0.5)
    gw = girsanov_weight_ensemble(ens, functional)
    k_t = gw.final[ens.active]
    se = np.std(k_t, ddof=1) / np.sqrt(len(k_t))
    z = abs(np.mean(k_t) - 1.0) / se if se > 0 else 0.0
    est = weighted_expectation(ens, k_t, ens.x[ens.active, -1])
    return DiagnosticResult("girsanov", _status(z < 3.0), float(z), 3.0,
                            {"mean_weight": float(np.mean(k_t)),
                             "weighted_terminal_mean": est.value,
                             "weighted_terminal_se": est.se,
                             "functional": functional.name})


def _default_region(kernel: Kernel):
    if isinstance(kernel, FiniteActivityKernel) and isinstance(kernel.law, DiscreteLaw):
        return [(w - 0.4 * abs(w), w + 0.4 * abs(w)) for w in kernel.law.positions]
    return [(1.0, np.inf), (-np.inf, -1.0)]


def _diag_compensator(bundle: ScenarioBundle, ens: Ensemble) -> DiagnosticResult:
    stats = compensator_residual(ens, _default_region(bundle.kernel), bundle.kernel)
    z = abs(stats.zscore)
    return DiagnosticResult("compensator", _status(z < 3.0), float(z), 3.0,
                            {"mean": stats.mean, "se": stats.se})


def _diag_conjugation(bundle: ScenarioBundle, ens: Ensemble) -> DiagnosticResult:
    from .generator import CagladPath, conjugation_residual
    rng = np.random.default_rng(bundle.sim.master_seed + 99)
    profiles = standard_profiles()
    times = np.linspace(0.0, 1.0, 33)
    worst = 0.0
    for _ in range(20):
        steps = rng.standard_normal(len(times) - 1) * 0.25
        vals = np.concatenate([[0.0], np.cumsum(steps)])
        vals = np.clip(vals, -2.0, 2.0)
        t = float(rng.choice(times[1:]))
        prof = profiles[rng.integers(len(profiles))]
        res = conjugation_residual(prof, bundle.functional, bundle.kernel,
                                   bundle.trunc, bundle.coeffs,
                                   CagladPath(times, vals), t)
        worst = max(worst, float(res))
    return DiagnosticResult("conjugation", _status(worst < 1e-6), worst, 1e-6, {})


def _diag_crosscheck_euler(bundle: ScenarioBundle, ens: Ensemble) -> DiagnosticResult:
    """Transform route against plain Euler with the classical drift."""
    bp = bundle.coeffs.drift.beta_prime
    if bp is None:
        raise ValidationError("cross-check needs a classical drift")
    direct = simulate_euler_direct(lambda x: bp(x), bundle.coeffs.diffusion.sigma,
                                   bundle.sim.replace(master_seed=bundle.sim.master_seed
                                                      + 1000),
                                   bundle.x0)
    a, b = ens.terminal_x(), direct.terminal_x()
    z_mean = abs(np.mean(a) - np.mean(b)) / np.sqrt(
        np.var(a, ddof=1) / len(a) + np.var(b, ddof=1) / len(b))
    va, vb = np.var(a, ddof=1), np.var(b, ddof=1)
    se_va = np.sqrt((np.mean((a - a.mean()) ** 4) - va**2) / len(a))
    se_vb = np.sqrt((np.mean((b - b.mean()) ** 4) - vb**2) / len(b))
    z_var = abs(va - vb) / np.sqrt(se_va**2 + se_vb**2)
    worst = float(max(z_mean, z_var))
    return DiagnosticResult("crosscheck_euler", _status(worst < 3.0), worst, 3.0,
                            {"mean_transform_route": float(np.mean(a)),
                             "mean_direct_euler": float(np.mean(b)),
                             "var_transform_route": float(va),
                             "var_direct_euler": float(vb)})


def _diag_dirichlet(bundle: ScenarioBundle, ens: Ensemble) -> DiagnosticResult:
    n = ens.n_paths
    ladder = [m for m in (100, 300, 1000, 3000, 10000, 30000) if m <= n] or [n]
    growth = dirichlet_condition_intY(lambda x: np.asarray(x, dtype=float), ens,
                                      a=1.0, sample_sizes=ladder)
    nu = nu_jump_structural_check(bundle.kernel)
    report = classify_dirichlet(growth, nu_jump=nu)
    return DiagnosticResult("dirichlet",
                            "pass" if report.verdict != "inconsistent" else "fail",
                            float(growth.means[-1]) if len(growth.means) else 0.0,
                            np.inf, report.to_dict())


_DIAGNOSTICS: dict = {
    "martingale": _diag_martingale,
    "qv": _diag_qv,
    "gamma": _diag_gamma,
    "girsanov": _diag_girsanov,
    "compensator": _diag_compensator,
    "conjugation": _diag_conjugation,
    "crosscheck_euler": _diag_crosscheck_euler,
    "dirichlet": _diag_dirichlet,
}


def diagnostic_names():
    return tuple(sorted(_DIAGNOSTICS))


# ---------------------------------------------------------------------------
# run reports
# ---------------------------------------------------------------------------

@dataclass
class RunReport:
    scenario: str
    spec: dict
    seed: int
    hypothesis: dict
    simulation: dict
    diagnostics: list
    wall_clock: float = 0.0

    @property
    def status(self):
        if any(d.status == "fail" for d in self.diagnostics):
            return "fail"
        return "pass"

    def to_dict(self, include_timing=False):
        d = {
            "schema_version": SCHEMA_VERSION,
            "scenario": self.scenario,
            "spec": self.spec,
            "seed": self.seed,
            "status": self.status,
            "hypothesis": self.hypothesis,
            "simulation": self.simulation,
            "diagnostics": [x.to_dict() for x in self.diagnostics],
        }
        if include_timing:
            d["wall_clock"] = self.wall_clock
        return d


def _hypothesis_section(bundle: ScenarioBundle):
    rep = check_hypotheses(bundle.coeffs.potential, truncation_range=1000.0)
    out = {"potential": rep.to_dict()}
    if bundle.kernel is not None:
        probes = np.linspace(-2.0, 2.0, 9)
        kr = moment_bound(bundle.kernel, probes, radius=bundle.trunc.radius)
        out["kernel"] = {"moment_sup": kr.sup, "alpha": kr.alpha,
                         "m1_max": float(np.max(kr.m1)),
                         "m2_max": float(np.max(kr.m2))}
    if not rep.converged:
        raise ValidationError("potential construction did not converge")
    return out


def _simulation_section(ens: Ensemble):
    xt = ens.terminal_x()
    return {
        "n_paths": int(ens.n_paths),
        "n_steps": int(len(ens.times) - 1),
        "horizon": float(ens.times[-1]),
        "excluded": ens.excluded_count,
        "n_jumps": int(len(ens.jump_time)),
        "terminal_mean": float(np.mean(xt)),
        "terminal_var": float(np.var(xt, ddof=1)) if len(xt) > 1 else 0.0,
    }


def run_scenario(spec: ScenarioSpec) -> tuple:
    """Validate, simulate and diagnose; returns (report, ensemble)."""
    t0 = time.perf_counter()
    bundle = build_bundle(spec)
    unknown = [d for d in bundle.diagnostics if d not in _DIAGNOSTICS]
    if unknown:
        raise ValidationError(f"unknown diagnostics: {unknown}")
    hypothesis = _hypothesis_section(bundle)  # hard gate before any simulation
    ens = simulate_x_markovian(bundle.coeffs, bundle.kernel, bundle.trunc,
                               bundle.sim, bundle.x0)
    results = [(_DIAGNOSTICS[d])(bundle, ens) for d in bundle.diagnostics]
    report = RunReport(
        scenario=bundle.name, spec=spec.to_dict(), seed=bundle.sim.master_seed,
        hypothesis=hypothesis, simulation=_simulation_section(ens),
        diagnostics=results, wall_clock=time.perf_counter() - t0,
    )
    return report, ens


# ---------------------------------------------------------------------------
# counterexamples
# ---------------------------------------------------------------------------

def counterexample_stable(gamma, config: Optional[SimConfig] = None, scale=0.5,
                          a=1.0, caps=(10.0, 100.0)) -> RunReport:
    """Brownian motion plus a pure-jump power tail: integrability dichotomy.

    For tail exponents below 1 the summed big-jump sizes have divergent
    expectation, so the growth table keeps climbing and the verdict is
    "inconsistent"; above 1 the table stabilises at the finite tail
    integral.  The symmetric kernel with an odd truncation produces no
    compensator drift, so the construction is exact.
    """
    if not 0.0 < gamma < 2.0:
        raise ValidationError("gamma must lie in (0, 2)")
    t0 = time.perf_counter()
    coeffs = CoefficientSet.unit()
    kernel = StableTailKernel(gamma=gamma, scale=scale, alpha=min(1.0, gamma / 2.0))
    delta = 0.05 if gamma < 1.0 else 0.1
    lam = 2.0 * float(kernel.one_tail_mass(delta))
    mode = "drop" if gamma < 1.0 else "gaussian_match"
    config = config or SimConfig(horizon=1.0, n_steps=64, n_paths=4000,
                                 master_seed=41)
    config = config.replace(small_jump_cutoff=delta, small_jump_mode=mode,
                            big_jump_intensity_bound=lam * 1.02)
    ens = simulate_x_markovian(coeffs, kernel, TruncationFunction(), config, 0.0)

    n = ens.n_paths
    ladder = [m for m in (100, 300, 1000, 3000, 10000, 30000, 100000) if m <= n]
    if not ladder or ladder[-1] != n:
        ladder.append(n)
    growth = dirichlet_condition_intY(lambda x: np.asarray(x, dtype=float), ens,
                                      a=a, sample_sizes=ladder, caps=caps)
    nu = nu_jump_structural_check(kernel)
    # reference: the two-sided big-jump size integral, or its largest
    # truncation when it diverges
    from scipy.integrate import quad as _quad
    hi = np.inf if gamma > 1.0 else float(max(caps))
    ref, _ = _quad(lambda x: 2.0 * scale * x**-gamma, a, hi)
    ref *= config.horizon
    report_d = classify_dirichlet(growth, nu_jump=nu, reference=ref)
    expected = "inconsistent" if gamma < 1.0 else "consistent_with_dirichlet"
    diag = DiagnosticResult(
        "dirichlet_counterexample", _status(report_d.verdict == expected),
        float(growth.means[-1]), np.inf,
        {**report_d.to_dict(), "expected_verdict": expected, "gamma": float(gamma),
         "scale": float(scale)},
    )
    spec_echo = {"name": "counterexample_stable", "gamma": float(gamma),
                 "scale": float(scale), "threshold": float(a),
                 "caps": [float(c) for c in caps]}
    return RunReport(
        scenario="counterexample_stable", spec=spec_echo, seed=config.master_seed,
        hypothesis={"kernel": {"gamma": float(gamma), "alpha": kernel.alpha}},
        simulation=_simulation_section(ens), diagnostics=[diag],
        wall_clock=time.perf_counter() - t0,
    )


def counterexample_cauchy(n_samples=1_000_000, caps=(10.0, 100.0, 1000.0),
                          seed=7) -> RunReport:
    """C^1 image of a two-step martingale that is not integrable.

    A heavy-tailed symmetric variable Z with density 1/(pi (1+x^2)) has a
    square-rootable modulus, so the signed root martingale jumps by an
    integrable amount while its square jumps by |Z|, whose expectation is
    infinite.  Truncated means of |Z| below a cap M follow
    log(1 + M^2) / pi and keep growing along any cap ladder.
    """
    if n_samples < 10_000:
        raise ValidationError("need at least 1e4 samples")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    z = rng.standard_cauchy(n_samples)
    root = np.sqrt(np.abs(z)) * np.sign(z)
    se_root = float(np.std(root, ddof=1) / np.sqrt(n_samples))
    mean_root = float(np.mean(root))
    caps = np.asarray(caps, dtype=float)
    trunc_means = np.asarray([float(np.mean(np.abs(z) * (np.abs(z) <= M)))
                              for M in caps])
    analytic = np.log1p(caps**2) / np.pi
    rel = np.abs(trunc_means / analytic - 1.0)
    increasing = bool(np.all(np.diff(trunc_means) > 0))
    z_mart = abs(mean_root) / se_root
    tol = 0.05 if n_samples >= 1_000_000 else 0.15
    ok = increasing and float(np.max(rel)) < tol and z_mart < 3.0
    diag = DiagnosticResult(
        "cauchy_counterexample", _status(ok), float(np.max(rel)), tol,
        {
            "caps": [float(c) for c in caps],
            "truncated_means": [float(v) for v in trunc_means],
            "analytic_curve": [float(v) for v in analytic],
            "strictly_increasing": increasing,
            "martingale_mean": mean_root,
            "martingale_mean_z": float(z_mart),
            "verdict": "image_not_integrable",
        },
    )
    spec_echo = {"name": "counterexample_cauchy", "n_samples": int(n_samples),
                 "caps": [float(c) for c in caps]}
    return RunReport(
        scenario="counterexample_cauchy", spec=spec_echo, seed=seed,
        hypothesis={}, simulation={"n_samples": int(n_samples)},
        diagnostics=[diag], wall_clock=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

def report_json(report: RunReport, include_timing=False) -> str:
    return json.dumps(report.to_dict(include_timing=include_timing),
                      sort_keys=True, indent=2) + "\n"


def _flatten(prefix, obj, rows):
    if isinstance(obj, dict):
        for k in sorted(obj):
            _flatten(f"{prefix}.{k}" if prefix else str(k), obj[k], rows)
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _flatten(f"{prefix}[{i}]", v, rows)
    else:
        rows.append((prefix, obj))


def report_csv(report: RunReport) -> str:
    """Flat key/value rows: columns are (key, value)."""
    rows = []
    _flatten("", report.to_dict(), rows)
    lines = ["key,value"]
    for k, v in rows:
        sv = json.dumps(v) if isinstance(v, str) else repr(v)
        lines.append(f"{k},{sv}")
    return "\n".join(lines) + "\n"


def emit_report(report: RunReport, fmt="json", out_dir=".", stem=None):
    """Write the report deterministically; returns the written path."""
    if fmt not in ("json", "csv"):
        raise ValidationError(f"unknown format {fmt!r}")
    stem = stem or f"report_{report.scenario}"
    try:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, f"{stem}.{fmt}")
        payload = report_json(report) if fmt == "json" else report_csv(report)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(payload)
    except OSError as exc:
        raise IoError(f"could not write report: {exc}") from exc
    return path


def parse_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
