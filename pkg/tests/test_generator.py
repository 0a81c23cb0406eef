"""Path-dependent generator assembly, conjugation, martingale residuals."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdelab import (CagladPath, ConjugateTestFunction, GeneratorValue, SimConfig,
                    clamped_running_sup, conjugation_residual, constant_functional,
                    evaluate_generator, evaluate_transformed_generator,
                    generator_ball_modulus, identity_profile, martingale_residual,
                    martingale_residual_ensemble, resolve_functional,
                    simulate_x_markovian, sin_left_limit, standard_profiles,
                    zero_functional, ValidationError)
from sdelab.simulator import SamplePath

SIN = ConjugateTestFunction(np.sin, np.cos, lambda y: -np.sin(y), 1.0, "sin")
SQUARE = ConjugateTestFunction(lambda y: np.asarray(y, dtype=float) ** 2,
                               lambda y: 2.0 * np.asarray(y, dtype=float),
                               lambda y: np.full_like(np.asarray(y, dtype=float), 2.0),
                               100.0, "square")


def flat_path(value, n=33, T=1.0):
    t = np.linspace(0.0, T, n)
    return CagladPath(t, np.full(n, float(value)))


# ---------------------------------------------------------------------------
# caglad paths and functionals
# ---------------------------------------------------------------------------

class TestCagladPath:
    def test_restrict_drops_future(self):
        p = CagladPath(np.linspace(0, 1, 11), np.arange(11.0))
        r = p.restrict(0.51)
        assert r.horizon <= 0.51 + 1e-12
        assert len(r.values) == 6

    def test_stopped_freezes(self):
        p = CagladPath(np.linspace(0, 1, 11), np.arange(11.0))
        s = p.stopped(0.5)
        assert s.value(1.0) == p.value(0.5)
        assert len(s.values) == len(p.values)

    def test_value_lookup_left_continuous_convention(self):
        p = CagladPath(np.asarray([0.0, 0.5, 1.0]), np.asarray([1.0, 2.0, 3.0]))
        assert p.value(0.49) == 1.0
        assert p.value(0.5) == 2.0


class TestFunctionals:
    def test_running_sup_clamped(self):
        f = clamped_running_sup(cap=1.0)
        p = CagladPath(np.linspace(0, 1, 5), np.asarray([0.0, 2.5, -1.0, 0.5, 0.3]))
        assert f.evaluate(p.restrict(0.0), 0.0) == 0.0
        assert f.evaluate(p.restrict(0.3), 0.3) == 1.0  # clamped at the cap

    def test_grid_values_match_pointwise(self):
        f = clamped_running_sup(cap=1.0)
        times = np.linspace(0, 1, 17)
        rng = np.random.default_rng(0)
        vals = np.cumsum(rng.standard_normal(17)) * 0.3
        grid = f.grid_values(times, vals)
        point = [f.evaluate(CagladPath(times, vals).restrict(t), t) for t in times]
        assert np.allclose(grid, point, atol=0)

    def test_unknown_name_rejected(self):
        with pytest.raises(ValidationError):
            resolve_functional("nope")

    def test_const_prefix_resolves(self):
        f = resolve_functional("const:0.7")
        assert f.evaluate(flat_path(0.0), 0.5) == 0.7


@settings(max_examples=30, deadline=None)
@given(data=st.lists(st.floats(-3, 3), min_size=4, max_size=24),
       frac=st.floats(0.1, 0.95))
def test_nonanticipation_bit_identity(data, frac):
    # evaluating on the restriction and on the frozen path must agree bitwise
    times = np.linspace(0.0, 1.0, len(data))
    path = CagladPath(times, np.asarray(data, dtype=float))
    t = float(frac)
    for f in (zero_functional(), clamped_running_sup(1.0), sin_left_limit()):
        a = f.evaluate(path.restrict(t), t)
        b = f.evaluate(path.stopped(t).restrict(t), t)
        assert a == b


# ---------------------------------------------------------------------------
# generator values
# ---------------------------------------------------------------------------

class TestEvaluateGenerator:
    def test_identity_profile_no_kernel_vanishes(self, tanh_coeffs, clamp1):
        gv = evaluate_generator(identity_profile(), zero_functional(), None, clamp1,
                                tanh_coeffs, flat_path(0.4), 0.5)
        assert gv.total == 0.0

    def test_flat_formula_oracle(self, flat_coeffs, clamp1):
        # local 1 + drift 1 * 1 * (2 * 0.5) = 2 at a constant path at 0.5
        gv = evaluate_generator(SQUARE, constant_functional(1.0), None, clamp1,
                                flat_coeffs, flat_path(0.5), 0.7)
        assert abs(gv.total - 2.0) < 1e-9
        assert abs(gv.local - 1.0) < 1e-10
        assert abs(gv.drift - 1.0) < 1e-10

    def test_atom_kernel_oracle(self, flat_coeffs, unit_atom_kernel, clamp1):
        # jump part only: sin(1) - 1 at the origin
        gv = evaluate_generator(SIN, zero_functional(), unit_atom_kernel, clamp1,
                                flat_coeffs, flat_path(0.0), 0.5)
        assert abs(gv.local) < 1e-12
        assert abs(gv.total - (np.sin(1.0) - 1.0)) < 1e-9

    def test_total_is_exact_sum(self):
        gv = GeneratorValue(local=0.1, drift=-0.7, jump=0.25)
        assert gv.total == 0.1 + -0.7 + 0.25

    def test_time_invariance_on_constant_paths(self, tanh_coeffs, atom_kernel,
                                               clamp1):
        p = flat_path(0.3)
        a = evaluate_generator(SIN, None, atom_kernel, clamp1, tanh_coeffs, p, 0.25)
        b = evaluate_generator(SIN, None, atom_kernel, clamp1, tanh_coeffs, p, 0.75)
        assert a.total == b.total


class TestTransformedGenerator:
    def test_identity_transform_coincides(self, flat_coeffs, unit_atom_kernel,
                                          clamp1):
        p = flat_path(0.2)
        lhs = evaluate_generator(SIN, constant_functional(0.5), unit_atom_kernel,
                                 clamp1, flat_coeffs, p, 0.5)
        rhs = evaluate_transformed_generator(
            SIN, constant_functional(0.5), unit_atom_kernel, flat_coeffs.transform,
            clamp1, flat_coeffs, CagladPath(p.times, flat_coeffs.transform.forward(p.values)),
            0.5)
        assert abs(lhs.total - rhs.total) < 1e-9

    def test_no_kernel_linear_potential_oracle(self, linear_coeffs, clamp1):
        tr = linear_coeffs.transform
        y1 = float(tr.forward(np.asarray(1.0)))
        gv = evaluate_transformed_generator(SQUARE, None, None, tr, clamp1,
                                            linear_coeffs, flat_path(y1), 0.5)
        assert abs(gv.total - np.exp(-1.2)) < 1e-8


class TestConjugation:
    def test_identity_transform_zero_residual(self, flat_coeffs, unit_atom_kernel,
                                              clamp1):
        rng = np.random.default_rng(3)
        times = np.linspace(0, 1, 17)
        vals = np.clip(np.cumsum(rng.standard_normal(17)) * 0.2, -2, 2)
        res = conjugation_residual(SIN, clamped_running_sup(1.0), unit_atom_kernel,
                                   clamp1, flat_coeffs, CagladPath(times, vals), 0.6)
        assert res < 1e-9

    def test_no_kernel_smooth_case(self, tanh_coeffs, clamp1):
        res = conjugation_residual(SIN, None, None, clamp1, tanh_coeffs,
                                   flat_path(0.7), 0.5)
        assert res < 1e-10

    def test_nonlinear_transform_atom_kernel_running_sup(self, tanh_coeffs,
                                                         atom_kernel, clamp1):
        rng = np.random.default_rng(11)
        profiles = standard_profiles()
        times = np.linspace(0, 1, 17)
        for _ in range(20):
            vals = np.clip(np.cumsum(rng.standard_normal(17)) * 0.3, -2.5, 2.5)
            t = float(rng.choice(times[1:]))
            prof = profiles[rng.integers(len(profiles))]
            res = conjugation_residual(prof, clamped_running_sup(1.0), atom_kernel,
                                       clamp1, tanh_coeffs,
                                       CagladPath(times, vals), t)
            assert res < 1e-6


# ---------------------------------------------------------------------------
# martingale residuals
# ---------------------------------------------------------------------------

class TestMartingaleResidual:
    def test_constant_path_annihilated_profile_zero(self, flat_coeffs, tanh_coeffs,
                                                    clamp1):
        # the transform profile solves the equation, so nothing accumulates
        times = np.linspace(0, 1, 65)
        path = SamplePath.deterministic(times, np.full(65, 0.3))
        for coeffs in (flat_coeffs, tanh_coeffs):
            M = martingale_residual(path, identity_profile(), zero_functional(),
                                    None, clamp1, coeffs)
            assert np.max(np.abs(M)) < 1e-14

    def test_constant_path_generic_profile_accumulates_local_term(self,
                                                                  flat_coeffs,
                                                                  clamp1):
        times = np.linspace(0, 1, 65)
        path = SamplePath.deterministic(times, np.full(65, 0.3))
        M = martingale_residual(path, SIN, zero_functional(), None, clamp1,
                                flat_coeffs)
        # residual is minus the integrated local term, -t * (-sin(0.3)/2)
        expected = 0.5 * np.sin(0.3) * times
        assert np.max(np.abs(M - expected)) < 1e-12

    def test_brownian_terminal_mean_small(self, flat_coeffs, clamp1):
        cfg = SimConfig(horizon=1.0, n_steps=128, n_paths=2000, master_seed=7,
                        big_jump_intensity_bound=0.0)
        ens = simulate_x_markovian(flat_coeffs, None, clamp1, cfg, 0.0)
        M = martingale_residual_ensemble(ens, SIN, None, None, clamp1, flat_coeffs)
        m_t = M[ens.active, -1]
        se = np.std(m_t, ddof=1) / np.sqrt(len(m_t))
        assert abs(np.mean(m_t)) < 3.0 * se

    def test_orthogonality_to_past(self, flat_coeffs, clamp1):
        cfg = SimConfig(horizon=1.0, n_steps=128, n_paths=2000, master_seed=8,
                        big_jump_intensity_bound=0.0)
        ens = simulate_x_markovian(flat_coeffs, None, clamp1, cfg, 0.0)
        M = martingale_residual_ensemble(ens, SIN, None, None, clamp1, flat_coeffs)
        half = M.shape[1] // 2
        inc = M[:, -1] - M[:, half]
        g = np.clip(ens.x[:, half], -1, 1)
        prod = (inc * g)[ens.active]
        se = np.std(prod, ddof=1) / np.sqrt(len(prod))
        assert abs(np.mean(prod)) < 3.0 * se


# ---------------------------------------------------------------------------
# generator modulus on balls
# ---------------------------------------------------------------------------

class TestBallModulus:
    def test_constant_profile_zero(self, flat_coeffs, clamp1):
        prof = ConjugateTestFunction(
            lambda y: np.full_like(np.asarray(y, dtype=float), 1.0),
            lambda y: np.zeros_like(np.asarray(y, dtype=float)),
            lambda y: np.zeros_like(np.asarray(y, dtype=float)), 1.0)
        est = generator_ball_modulus(prof, zero_functional(), None, clamp1,
                                     flat_coeffs, ball_radius=2.0, n_probes=6)
        assert np.max(est.sups) == 0.0

    def test_smooth_fixture_monotone_ladder(self, tanh_coeffs, clamp1):
        est = generator_ball_modulus(SIN, sin_left_limit(), None, clamp1,
                                     tanh_coeffs, ball_radius=2.0, n_probes=10,
                                     seed=4)
        assert np.all(np.diff(est.sups) >= 0)  # sups grow with the window
        assert est.sups[0] < est.sups[-1] + 1e-12

    def test_lipschitz_drift_functional_slope(self, flat_coeffs, clamp1):
        # identity-like profile, unit diffusion: the generator difference is
        # exactly the running-sup difference, which is 1-Lipschitz
        prof = identity_profile()
        est = generator_ball_modulus(prof, clamped_running_sup(cap=5.0), None,
                                     clamp1, flat_coeffs, ball_radius=2.0,
                                     n_probes=24, seed=9)
        slope = est.slope()
        assert 0.5 < slope < 1.05
        assert np.all(est.sups <= est.deltas + 1e-9)
