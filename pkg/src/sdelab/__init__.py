"""Numerical laboratory for one-dimensional SDEs with irregular drift,
state-dependent jumps and path-dependent coefficients."""

from .coefficients import (CoefficientSet, ConjugateTestFunction, DiffusionSpec,
                           DriftPotential, DriftSpec, MollifierConfig,
                           ScaleTransform, build_scale_transform, check_hypotheses,
                           compute_drift_potential, domain_approximant,
                           identity_profile, local_generator,
                           square_identity_residual, transformed_diffusion)
from .errors import (DegenerateWeights, DivergentMoment, GridMismatch,
                     IntensityBoundViolated, IoError, MissingDriverRecord,
                     NonConvergent, QuadratureFailure, RangeError, SdeLabError,
                     ValidationError)
from .generator import (CagladPath, GeneratorValue, PathFunctional,
                        clamped_running_sup, conjugation_residual,
                        constant_functional, evaluate_generator,
                        evaluate_transformed_generator, generator_ball_modulus,
                        martingale_residual, martingale_residual_ensemble,
                        pullback_functional, resolve_functional, sin_left_limit,
                        zero_functional)
from .kernels import (DensityLaw, DiscreteLaw, FiniteActivityKernel,
                      StableTailKernel, TabulatedKernel, TiltedKernelReport,
                      TruncationFunction, diffusion_coefficient, drift_correction,
                      geometric_partition, jump_operator, moment_bound,
                      pushforward_integral, tv_continuity_modulus)
from .pathcalc import (ChainRuleComparison, DirichletReport, GammaQVReport,
                       IntegrabilityGrowthTable, QVEstimate, aligned_window_ladder,
                       chain_rule_qv, classify_dirichlet, covariation,
                       dirichlet_condition_intY, gamma_residual_qv,
                       nu_jump_structural_check, qv_estimate, qv_regularization)
from .scenarios import (RunReport, ScenarioSpec, counterexample_cauchy,
                        counterexample_stable, emit_report, load_spec,
                        run_scenario, scenario_names, standard_profiles)
from .simulator import (AtomJumpMeasure, CharacteristicsY, EmptyJumpMeasure,
                        Ensemble, GirsanovWeight, PushforwardJumpMeasure,
                        SamplePath, SimConfig, build_characteristics,
                        canonical_decomposition_residual, compensator_residual,
                        girsanov_weight, girsanov_weight_ensemble,
                        simulate_euler_direct, simulate_x_markovian, simulate_y,
                        weighted_expectation)

__version__ = "0.1.0"
