"""Monte Carlo engine: determinism, law oracles, weights, residuals."""
import numpy as np
import pytest

from sdelab import (AtomJumpMeasure, CharacteristicsY, DegenerateWeights,
                    EmptyJumpMeasure, IntensityBoundViolated, RangeError, SimConfig,
                    canonical_decomposition_residual, compensator_residual,
                    constant_functional, domain_approximant, girsanov_weight,
                    girsanov_weight_ensemble, simulate_euler_direct,
                    simulate_x_markovian, simulate_y, weighted_expectation,
                    clamped_running_sup, StableTailKernel)


def ones(y):
    return np.ones_like(np.asarray(y, dtype=float))


def zeros(y):
    return np.zeros_like(np.asarray(y, dtype=float))


def brownian_chars():
    return CharacteristicsY(b=zeros, sigma0=ones, measure=EmptyJumpMeasure())


BROWNIAN_CFG = SimConfig(horizon=1.0, n_steps=128, n_paths=2000, master_seed=1,
                         big_jump_intensity_bound=0.0)


@pytest.fixture(scope="module")
def brownian_ens():
    return simulate_y(brownian_chars(), None, BROWNIAN_CFG, 0.0)


# ---------------------------------------------------------------------------
# determinism and reproducibility
# ---------------------------------------------------------------------------

class TestDeterminism:
    def test_single_path_bit_identical(self):
        cfg = SimConfig(horizon=1.0, n_steps=64, n_paths=1, master_seed=42,
                        big_jump_intensity_bound=0.0)
        a = simulate_y(brownian_chars(), None, cfg, 0.0)
        b = simulate_y(brownian_chars(), None, cfg, 0.0)
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.dW, b.dW)

    def test_path_streams_independent_of_ensemble_size(self):
        cfg4 = SimConfig(horizon=1.0, n_steps=32, n_paths=4, master_seed=5,
                         big_jump_intensity_bound=0.0)
        cfg8 = cfg4.replace(n_paths=8)
        a = simulate_y(brownian_chars(), None, cfg4, 0.0)
        b = simulate_y(brownian_chars(), None, cfg8, 0.0)
        assert np.array_equal(a.y, b.y[:4])

    def test_jump_runs_reproducible(self):
        cfg = SimConfig(horizon=1.0, n_steps=64, n_paths=50, master_seed=3,
                        small_jump_cutoff=0.4, big_jump_intensity_bound=1.5)
        chars = CharacteristicsY(b=ones, sigma0=zeros,
                                 measure=AtomJumpMeasure(((1.0, 1.0),)))
        a = simulate_y(chars, None, cfg, 0.0)
        b = simulate_y(chars, None, cfg, 0.0)
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.jump_time, b.jump_time)


# ---------------------------------------------------------------------------
# law oracles
# ---------------------------------------------------------------------------

class TestLawOracles:
    def test_brownian_terminal_variance(self, brownian_ens):
        # analytic variance of the terminal value is the horizon
        yt = brownian_ens.terminal_y()
        var = np.var(yt, ddof=1)
        se = np.sqrt(2.0 / (len(yt) - 1))  # SE of the variance under normality
        assert abs(var - 1.0) < 3.0 * se

    def test_poisson_counts(self):
        # unit atom at rate 1, no diffusion, drift cancels the compensator:
        # the terminal value counts a thinned unit-rate stream
        cfg = SimConfig(horizon=1.0, n_steps=128, n_paths=4000, master_seed=2,
                        small_jump_cutoff=0.5, big_jump_intensity_bound=1.5)
        chars = CharacteristicsY(b=ones, sigma0=zeros,
                                 measure=AtomJumpMeasure(((1.0, 1.0),)))
        ens = simulate_y(chars, None, cfg, 0.0)
        yt = ens.terminal_y()
        se = np.std(yt, ddof=1) / np.sqrt(len(yt))
        assert abs(np.mean(yt) - 1.0) < 3.0 * se
        counts = np.round(yt).astype(int)
        assert np.array_equal(np.sort(np.unique(counts % 1)), [0])

    def test_smooth_drift_cross_simulation(self, linear_coeffs, clamp1):
        # transform route vs direct Euler must agree in law
        cfg = SimConfig(horizon=1.0, n_steps=256, n_paths=4000, master_seed=6,
                        big_jump_intensity_bound=0.0)
        via_h = simulate_x_markovian(linear_coeffs, None, clamp1, cfg, 0.0)
        direct = simulate_euler_direct(lambda x: np.full_like(x, 0.3), ones,
                                       cfg.replace(master_seed=1006), 0.0)
        a, b = via_h.terminal_x(), direct.terminal_x()
        z = abs(np.mean(a) - np.mean(b)) / np.sqrt(
            np.var(a, ddof=1) / len(a) + np.var(b, ddof=1) / len(b))
        assert z < 3.0

    def test_pushforward_jump_marks_consistent(self, tanh_coeffs, atom_kernel,
                                               clamp1):
        cfg = SimConfig(horizon=1.0, n_steps=256, n_paths=300, master_seed=4,
                        small_jump_cutoff=0.01, big_jump_intensity_bound=1.05)
        ens = simulate_x_markovian(tanh_coeffs, atom_kernel, clamp1, cfg, 0.0)
        assert len(ens.jump_time) > 100
        tr = tanh_coeffs.transform
        w_check = (tr.inverse(ens.jump_y_pre + ens.jump_z)
                   - tr.inverse(ens.jump_y_pre))
        assert np.max(np.abs(w_check - ens.jump_w)) < 1e-8

    def test_density_law_jump_sizes(self, tanh_coeffs, clamp1):
        # uniform jump sizes on [0.5, 1.5]: sampled means must match, both
        # with and without a nontrivial transform
        from sdelab import DensityLaw, FiniteActivityKernel
        law = DensityLaw(
            pdf=lambda x: ((np.asarray(x) >= 0.5) & (np.asarray(x) <= 1.5)) * 1.0,
            support=(0.5, 1.5),
            sampler=lambda rng, size: rng.uniform(0.5, 1.5, size=size))
        kernel = FiniteActivityKernel(rate=1.0, law=law, alpha=1.0)
        cfg = SimConfig(horizon=1.0, n_steps=64, n_paths=400, master_seed=71,
                        small_jump_cutoff=0.05, big_jump_intensity_bound=1.05)
        for coeffs in (__import__("sdelab").CoefficientSet.unit(), tanh_coeffs):
            ens = simulate_x_markovian(coeffs, kernel, clamp1, cfg, 0.0)
            assert len(ens.jump_w) > 200
            se = np.std(ens.jump_w, ddof=1) / np.sqrt(len(ens.jump_w))
            assert abs(np.mean(ens.jump_w) - 1.0) < 4.0 * se
            assert np.all((ens.jump_w >= 0.5) & (ens.jump_w <= 1.5))
            stats = compensator_residual(ens, [(0.5, 1.5)], kernel)
            assert abs(stats.zscore) < 3.5

    def test_euler_weak_error_halves_with_steps(self):
        # noise-free nonlinear drift: the step bias must scale linearly
        drift = lambda y: np.sin(y + 0.3)
        ref = simulate_euler_direct(drift, lambda y: zeros(y),
                                    SimConfig(horizon=1.0, n_steps=4096, n_paths=1,
                                              master_seed=0,
                                              big_jump_intensity_bound=0.0), 0.5)
        errs = []
        for n in (32, 64):
            e = simulate_euler_direct(drift, lambda y: zeros(y),
                                      SimConfig(horizon=1.0, n_steps=n, n_paths=1,
                                                master_seed=0,
                                                big_jump_intensity_bound=0.0), 0.5)
            errs.append(abs(e.y[0, -1] - ref.y[0, -1]))
        ratio = errs[1] / errs[0]
        assert 0.4 < ratio < 0.6


# ---------------------------------------------------------------------------
# guard rails
# ---------------------------------------------------------------------------

class TestGuards:
    def test_intensity_bound_violation_raises(self):
        cfg = SimConfig(horizon=1.0, n_steps=32, n_paths=10, master_seed=1,
                        small_jump_cutoff=0.4, big_jump_intensity_bound=0.5)
        chars = CharacteristicsY(b=zeros, sigma0=zeros,
                                 measure=AtomJumpMeasure(((1.0, 1.0),)))
        with pytest.raises(IntensityBoundViolated):
            simulate_y(chars, None, cfg, 0.0)

    def test_cutoff_must_stay_below_truncation_radius(self):
        cfg = SimConfig(horizon=1.0, n_steps=32, n_paths=10, master_seed=1,
                        small_jump_cutoff=2.0, big_jump_intensity_bound=1.0)
        from sdelab import ValidationError
        with pytest.raises(ValidationError):
            simulate_y(brownian_chars(), None, cfg, 0.0)

    def test_narrow_grid_exclusion_failure(self, unit_diffusion, clamp1):
        import sdelab as sl
        grid = np.linspace(-0.5, 0.5, 51)
        drift = sl.DriftSpec(beta=lambda x: np.zeros_like(np.asarray(x, dtype=float)))
        coeffs = sl.CoefficientSet.build(drift, unit_diffusion,
                                         sl.MollifierConfig(), grid)
        cfg = SimConfig(horizon=1.0, n_steps=64, n_paths=100, master_seed=1,
                        big_jump_intensity_bound=0.0)
        with pytest.raises(RangeError):
            simulate_x_markovian(coeffs, None, clamp1, cfg, 0.0)


# ---------------------------------------------------------------------------
# reweighting
# ---------------------------------------------------------------------------

class TestGirsanov:
    def test_zero_functional_weight_exactly_one(self, brownian_ens):
        from sdelab import zero_functional
        gw = girsanov_weight_ensemble(brownian_ens, zero_functional())
        assert np.all(gw.kappa == 1.0)

    def test_single_path_interface(self, brownian_ens):
        gw = girsanov_weight(brownian_ens.path(3), constant_functional(0.5))
        assert gw.kappa[0] == 1.0
        assert gw.final > 0

    def test_constant_drift_lognormal_moments(self, brownian_ens):
        # log weight is Gaussian with mean -c^2 T / 2 and variance c^2 T
        c = 0.8
        gw = girsanov_weight_ensemble(brownian_ens, constant_functional(c))
        logk = np.log(gw.final)
        n = len(logk)
        se_mean = np.std(logk, ddof=1) / np.sqrt(n)
        assert abs(np.mean(logk) + 0.5 * c**2) < 3.0 * se_mean
        var = np.var(logk, ddof=1)
        se_var = np.sqrt(2.0 / (n - 1)) * c**2
        assert abs(var - c**2) < 3.0 * se_var

    def test_weight_mean_one(self, brownian_ens):
        gw = girsanov_weight_ensemble(brownian_ens, constant_functional(0.5))
        k = gw.final
        se = np.std(k, ddof=1) / np.sqrt(len(k))
        assert abs(np.mean(k) - 1.0) < 3.0 * se

    def test_running_sup_weight_mean_one(self, brownian_ens):
        gw = girsanov_weight_ensemble(brownian_ens, clamped_running_sup(1.0))
        k = gw.final
        se = np.std(k, ddof=1) / np.sqrt(len(k))
        assert abs(np.mean(k) - 1.0) < 3.0 * se

    def test_reweighting_matches_direct_drift(self, brownian_ens):
        c = 0.5
        gw = girsanov_weight_ensemble(brownian_ens, constant_functional(c))
        est = weighted_expectation(brownian_ens, gw.final,
                                   lambda e: e.y[:, -1])
        direct = simulate_y(brownian_chars(), constant_functional(c),
                            BROWNIAN_CFG.replace(master_seed=101), 0.0)
        dmean = np.mean(direct.terminal_y())
        dse = np.std(direct.terminal_y(), ddof=1) / np.sqrt(direct.n_paths)
        z = abs(est.value - dmean) / np.sqrt(est.se**2 + dse**2)
        assert z < 3.0

    def test_plain_weights_recover_plain_mean(self, brownian_ens):
        est = weighted_expectation(brownian_ens, np.ones(brownian_ens.n_paths),
                                   lambda e: e.y[:, -1])
        assert est.value == pytest.approx(float(np.mean(brownian_ens.y[:, -1])))

    def test_normalization_estimate(self, brownian_ens):
        gw = girsanov_weight_ensemble(brownian_ens, constant_functional(0.5))
        est = weighted_expectation(brownian_ens, gw.final,
                                   np.ones(brownian_ens.n_paths))
        assert abs(est.value - 1.0) < 3.0 * est.se

    def test_degenerate_weights_detected(self, brownian_ens):
        w = np.zeros(brownian_ens.n_paths)
        w[0] = 1.0
        with pytest.raises(DegenerateWeights):
            weighted_expectation(brownian_ens, w, lambda e: e.y[:, -1])


# ---------------------------------------------------------------------------
# compensator residuals
# ---------------------------------------------------------------------------

class TestCompensatorResidual:
    def test_atom_kernel_mean_zero(self, tanh_coeffs, atom_kernel, clamp1):
        cfg = SimConfig(horizon=1.0, n_steps=256, n_paths=1000, master_seed=9,
                        small_jump_cutoff=0.01, big_jump_intensity_bound=1.05)
        ens = simulate_x_markovian(tanh_coeffs, atom_kernel, clamp1, cfg, 0.0)
        stats = compensator_residual(ens, [(0.05, 0.2)], atom_kernel)
        assert abs(stats.zscore) < 3.0
        counts = np.bincount(ens.jump_path, minlength=ens.n_paths)
        assert abs(np.mean(counts) - 1.0) < 3.0 * np.std(counts) / np.sqrt(len(counts))

    def test_stable_kernel_mean_zero(self, clamp1):
        import sdelab as sl
        coeffs = sl.CoefficientSet.unit()
        kernel = StableTailKernel(gamma=1.5, scale=0.5, alpha=0.75)
        lam = 2.0 * float(kernel.one_tail_mass(0.1))
        cfg = SimConfig(horizon=1.0, n_steps=128, n_paths=1000, master_seed=12,
                        small_jump_cutoff=0.1, big_jump_intensity_bound=lam * 1.02)
        ens = simulate_x_markovian(coeffs, kernel, clamp1, cfg, 0.0)
        stats = compensator_residual(ens, [(1.0, np.inf), (-np.inf, -1.0)], kernel)
        assert abs(stats.zscore) < 3.0

    def test_region_touching_zero_rejected(self, brownian_ens, atom_kernel):
        from sdelab import ValidationError
        with pytest.raises(ValidationError):
            compensator_residual(brownian_ens, [(-0.5, 0.5)], atom_kernel)


# ---------------------------------------------------------------------------
# canonical decomposition stabilisation
# ---------------------------------------------------------------------------

def ident(x):
    return np.asarray(x, dtype=float)


class TestCanonicalDecomposition:
    def test_zero_drift_levels_vanish(self, flat_coeffs, clamp1):
        # short horizon keeps every path inside the cutoff plateau, where
        # the approximant generator vanishes identically
        cfg = SimConfig(horizon=0.25, n_steps=64, n_paths=50, master_seed=13,
                        big_jump_intensity_bound=0.0)
        ens = simulate_x_markovian(flat_coeffs, None, clamp1, cfg, 0.0)
        aps = [domain_approximant(ident, ones, flat_coeffs.transform, n=n)
               for n in (3, 4, 5)]
        diag = canonical_decomposition_residual(ens, flat_coeffs, aps)
        assert np.max(np.abs(diag.finest_integrals)) < 1e-10
        assert np.max(diag.sup_gap_mean) < 1e-10

    def test_rough_drift_levels_stabilize(self, clamp1):
        # no closed form here: the only observable is that consecutive
        # approximation levels get closer
        from sdelab.scenarios import build_bundle
        from sdelab import ScenarioSpec
        bundle = build_bundle(ScenarioSpec(name="weierstrass_drift", n_paths=30,
                                           n_steps=64))
        ens = simulate_x_markovian(bundle.coeffs, None, clamp1, bundle.sim,
                                   bundle.x0)
        aps = [domain_approximant(ident, ones, bundle.coeffs.transform, n=n)
               for n in (2, 4, 8)]
        diag = canonical_decomposition_residual(ens, bundle.coeffs, aps)
        assert diag.sup_gap_mean[1] < diag.sup_gap_mean[0]

    def test_classical_drift_recovered(self, linear_coeffs, clamp1):
        # for beta' = 0.3 the stabilised integral is 0.3 t on the plateau
        cfg = SimConfig(horizon=0.5, n_steps=128, n_paths=50, master_seed=14,
                        big_jump_intensity_bound=0.0)
        ens = simulate_x_markovian(linear_coeffs, None, clamp1, cfg, 0.0)
        aps = [domain_approximant(ident, ones, linear_coeffs.transform, n=n)
               for n in (2, 4)]
        diag = canonical_decomposition_residual(ens, linear_coeffs, aps)
        final = diag.finest_integrals[:, -1]
        assert np.max(np.abs(final - 0.3 * 0.5)) < 0.05
        assert diag.sup_gap_mean[-1] < 0.05
