"""
Checks the navigation filters
"""
# pylint: disable=duplicate-code, too-few-public-methods
import dataclasses
import math
import unittest

import numpy as np
import pytest
from scipy.linalg import expm

from config.scenario_settings import ScenarioConfig
from core_utils.nav.filter_kind import FilterKind, MeasurementMode
from launch_nav.dynamics import LaunchVehicleDynamics, StateIndex
from launch_nav.estimators import (CovarianceNotPositiveDefiniteError, FilterDivergenceError,
                                   GaussianBelief, GnssMeasurementModel, UnscentedParams,
                                   build_filter, deviation_map_errors, ekf_predict,
                                   espukf_predict, first_order_map, generate_sigma_points,
                                   kalman_update, lower_cholesky, repair_covariance, run_filter,
                                   spukf_predict, ukf_predict, ukf_update, unscented_moments)
from launch_nav.gnss import ErrorBudget
from launch_nav.scenario import build_dynamics, generate_observations, generate_truth


class LinearDynamics:
    """
    Time-invariant linear system model with instrumented calls.
    """

    def __init__(self, matrix: np.ndarray) -> None:
        self.matrix = matrix
        self.propagation_count = 0
        self.jacobian_count = 0

    def propagate(self, state: np.ndarray, t0: float, dt: float) -> np.ndarray:
        """
        Exact propagation.
        """
        self.propagation_count += 1
        return expm(self.matrix * dt) @ state

    def propagate_with_midpoint(self, state: np.ndarray, t0: float,
                                dt: float) -> tuple[np.ndarray, np.ndarray]:
        """
        Exact propagation recording the mid-step state.
        """
        self.propagation_count += 1
        return expm(self.matrix * dt) @ state, expm(self.matrix * dt / 2) @ state

    def jacobian(self, state: np.ndarray, t: float) -> np.ndarray:
        """
        Constant Jacobian.
        """
        self.jacobian_count += 1
        return self.matrix


class LogisticDecay:
    """
    Scalar system dx/dt = x^2 - x with its closed-form flow.
    """

    def propagate(self, state: np.ndarray, t0: float, dt: float) -> np.ndarray:
        """
        Exact propagation.
        """
        decay = math.exp(-dt)
        return state * decay / (1.0 - state * (1.0 - decay))

    def propagate_with_midpoint(self, state: np.ndarray, t0: float,
                                dt: float) -> tuple[np.ndarray, np.ndarray]:
        """
        Exact propagation recording the mid-step state.
        """
        return self.propagate(state, t0, dt), self.propagate(state, t0, dt / 2)

    def jacobian(self, state: np.ndarray, t: float) -> np.ndarray:
        """
        Derivative of the vector field.
        """
        return np.atleast_2d(2.0 * state - 1.0)


class LinearMeasurement:
    """
    Linear measurement model z = H x.
    """

    def __init__(self, matrix: np.ndarray, observed: np.ndarray, noise: np.ndarray) -> None:
        self.matrix = matrix
        self.observed = observed
        self.noise_covariance = noise

    def predict(self, state: np.ndarray) -> np.ndarray:
        """
        Predicted measurement.
        """
        return self.matrix @ state

    def predict_points(self, points: np.ndarray) -> np.ndarray:
        """
        Predicted measurements of many states.
        """
        return np.atleast_2d(points) @ self.matrix.T

    def jacobian(self, state: np.ndarray) -> np.ndarray:
        """
        Constant measurement matrix.
        """
        return self.matrix


def random_belief(rng: np.random.Generator, dim: int = 8, t: float = 0.0) -> GaussianBelief:
    """
    Well-conditioned random belief.

    Args:
        rng (numpy.random.Generator): Random source
        dim (int): State dimension
        t (float): Epoch, s

    Returns:
        GaussianBelief: Belief
    """
    factor = rng.standard_normal((dim, dim))
    return GaussianBelief(rng.standard_normal(dim), factor @ factor.T + np.eye(dim), t)


class UnscentedTransformTest(unittest.TestCase):
    """
    Tests sigma points and their moments
    """

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_sigma_points_reproduce_moments(self):
        """
        Weighted sigma points reproduce the generating mean and covariance
        """
        belief = random_belief(np.random.default_rng(1))
        sigma = generate_sigma_points(belief, UnscentedParams())
        self.assertEqual((17, 8), sigma.points.shape)
        self.assertAlmostEqual(1.0, float(sigma.wm.sum()), places=9)
        mean, covariance = unscented_moments(sigma.points, sigma.wm, sigma.wc)
        np.testing.assert_allclose(belief.mean, mean, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(belief.covariance, covariance, rtol=1e-8, atol=1e-8)

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_offset_norm_without_scaling(self):
        """
        Unit covariance with alpha one gives offsets of norm sqrt(n)
        """
        belief = GaussianBelief(np.zeros(8), np.eye(8))
        sigma = generate_sigma_points(belief, UnscentedParams(alpha=1.0, beta=2.0, kappa=0.0))
        np.testing.assert_allclose(np.full(16, math.sqrt(8.0)),
                                   np.linalg.norm(sigma.offsets[1:], axis=1))
        np.testing.assert_array_equal(np.zeros(8), sigma.offsets[0])

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_weights(self):
        """
        Default scaling weights
        """
        params = UnscentedParams()
        wm, wc = params.weights(8)
        lam = 1e-6 * 8 - 8
        self.assertAlmostEqual(lam / (8 + lam), wm[0])
        self.assertAlmostEqual(wm[0] + 1 - 1e-6 + 2, wc[0])
        with self.assertRaises(ValueError):
            UnscentedParams(alpha=1.0, kappa=-8.0).weights(8)

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_cholesky_names_failing_minor(self):
        """
        Indefinite covariances report the first failing leading minor
        """
        matrix = np.diag([1.0, 2.0, -1.0, 4.0])
        with self.assertRaises(CovarianceNotPositiveDefiniteError) as context:
            lower_cholesky(matrix)
        self.assertEqual(3, context.exception.minor)

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_covariance_repair(self):
        """
        Slightly indefinite covariances are jittered once, grossly indefinite ones diverge
        """
        repaired = repair_covariance(GaussianBelief(np.zeros(2), np.diag([1.0, -1e-9])))
        lower_cholesky(repaired.covariance)
        with self.assertRaises(FilterDivergenceError):
            repair_covariance(GaussianBelief(np.zeros(2), np.diag([1.0, -1.0])))

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_asymmetric_belief_rejected(self):
        """
        Beliefs must carry a symmetric covariance of matching shape
        """
        with self.assertRaises(ValueError):
            GaussianBelief(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
        with self.assertRaises(ValueError):
            GaussianBelief(np.zeros(3), np.eye(2))


class LinearPredictionTest(unittest.TestCase):
    """
    Tests that every prediction is exact for linear dynamics
    """

    def setUp(self) -> None:
        rng = np.random.default_rng(2)
        self.dynamics = LinearDynamics(0.1 * rng.standard_normal((8, 8)))
        self.belief = random_belief(rng, t=3.0)
        self.noise = 1e-3 * np.eye(8)
        self.params = UnscentedParams()

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_ekf_matches_lyapunov_propagation(self):
        """
        EKF prediction is the exact discrete covariance propagation
        """
        transition = expm(self.dynamics.matrix * 0.5)
        predicted = ekf_predict(self.belief, 0.5, self.dynamics, self.noise)
        np.testing.assert_allclose(transition @ self.belief.mean, predicted.mean, rtol=1e-10)
        np.testing.assert_allclose(transition @ self.belief.covariance @ transition.T + self.noise,
                                   predicted.covariance, rtol=1e-9, atol=1e-12)
        self.assertEqual(3.5, predicted.t)

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_static_system(self):
        """
        Zero dynamics without process noise leave the belief unchanged
        """
        static = LinearDynamics(np.zeros((8, 8)))
        predicted = ekf_predict(self.belief, 1.0, static, np.zeros((8, 8)))
        np.testing.assert_allclose(self.belief.covariance, predicted.covariance, rtol=1e-14)

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_all_predictions_agree(self):
        """
        Unscented, single-propagation and extrapolated predictions equal the EKF prediction
        """
        reference = ekf_predict(self.belief, 1.0, self.dynamics, self.noise)
        for predict in (ukf_predict, spukf_predict, espukf_predict):
            predicted = predict(self.belief, 1.0, self.dynamics, self.noise, self.params)
            np.testing.assert_allclose(reference.mean, predicted.mean, rtol=1e-8, atol=1e-10)
            np.testing.assert_allclose(reference.covariance, predicted.covariance, rtol=1e-7,
                                       atol=1e-9)

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_collapsed_covariance(self):
        """
        A vanishing covariance predicts the process noise
        """
        belief = GaussianBelief(self.belief.mean, 1e-20 * np.eye(8), 0.0)
        predicted = ukf_predict(belief, 1.0, self.dynamics, self.noise, self.params)
        np.testing.assert_allclose(self.noise, predicted.covariance, rtol=1e-6, atol=1e-12)

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_propagation_counts(self):
        """
        Full unscented prediction propagates every point, single-propagation predictions one
        """
        self.dynamics.propagation_count = 0
        ukf_predict(self.belief, 1.0, self.dynamics, self.noise, self.params)
        self.assertEqual(17, self.dynamics.propagation_count)

        self.dynamics.propagation_count = self.dynamics.jacobian_count = 0
        spukf_predict(self.belief, 1.0, self.dynamics, self.noise, self.params)
        self.assertEqual((1, 1), (self.dynamics.propagation_count, self.dynamics.jacobian_count))

        self.dynamics.propagation_count = self.dynamics.jacobian_count = 0
        espukf_predict(self.belief, 1.0, self.dynamics, self.noise, self.params)
        self.assertEqual((1, 2), (self.dynamics.propagation_count, self.dynamics.jacobian_count))

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_first_order_map_error_is_quadratic(self):
        """
        Doubling the sigma-point offsets quadruples the error of the first-order map
        """
        dynamics = LogisticDecay()
        errors = []
        for variance in (1e-4, 4e-4):
            belief = GaussianBelief(np.zeros(1), np.array([[variance]]))
            offsets = generate_sigma_points(
                belief, UnscentedParams(alpha=1.0, beta=2.0, kappa=0.0)).offsets
            propagated, transition = first_order_map(belief.mean, 0.0, 1.0, dynamics)
            mapped = propagated + offsets @ transition.T
            exact = np.array([dynamics.propagate(offset, 0.0, 1.0) for offset in offsets])
            errors.append(float(np.abs(mapped - exact).max()))
        self.assertGreater(errors[0], 0.0)
        self.assertAlmostEqual(4.0, errors[1] / errors[0], delta=0.1)


class UpdateTest(unittest.TestCase):
    """
    Tests the measurement corrections
    """

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_scalar_update(self):
        """
        Scalar update gives the harmonic combination of variances
        """
        belief = GaussianBelief(np.array([1.0]), np.array([[4.0]]))
        model = LinearMeasurement(np.eye(1), np.array([3.0]), np.array([[1.0]]))
        for updated, innovation in (kalman_update(belief, model),
                                    ukf_update(belief, model, UnscentedParams())):
            self.assertAlmostEqual(1.0 / (1 / 4.0 + 1 / 1.0), updated.covariance[0, 0], places=8)
            self.assertAlmostEqual(1.0 + 4.0 / 5.0 * 2.0, updated.mean[0], places=8)
            self.assertAlmostEqual(2.0, innovation[0], places=8)

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_zero_innovation(self):
        """
        A measurement equal to the prediction keeps the mean and shrinks the covariance
        """
        belief = random_belief(np.random.default_rng(3))
        matrix = np.eye(8)[:3]
        model = LinearMeasurement(matrix, matrix @ belief.mean, np.eye(3))
        updated, innovation = kalman_update(belief, model)
        np.testing.assert_allclose(np.zeros(3), innovation, atol=1e-12)
        np.testing.assert_allclose(belief.mean, updated.mean, atol=1e-12)
        self.assertLess(np.trace(updated.covariance), np.trace(belief.covariance))


class FilterRunTest(unittest.TestCase):
    """
    Tests whole filter runs on the launch scenario
    """

    @classmethod
    def setUpClass(cls) -> None:
        cls.cfg = ScenarioConfig()
        cls.truth = generate_truth(cls.cfg)
        cls.stream = generate_observations(cls.truth, cls.cfg)

    def run_kind(self, kind: FilterKind, stream: list | None = None):
        """
        Run a filter over the scenario stream.

        Args:
            kind (FilterKind): Filter
            stream (list | None): Observations, the scenario stream by default

        Returns:
            FilterRun: Filter history
        """
        return run_filter(kind, self.cfg.initial_belief.to_belief(),
                          self.stream if stream is None else stream, build_dynamics(self.cfg),
                          self.cfg.process_noise(kind), self.cfg.site,
                          self.cfg.measurement_settings(), self.cfg.filter.unscented,
                          self.truth.state_at)

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_empty_stream(self):
        """
        Without observations the run holds the initial belief only
        """
        run = self.run_kind(FilterKind.EKF, [])
        self.assertEqual([0.0], run.times)
        self.assertFalse(run.diverged)
        self.assertEqual(1, len(run.to_frame()))

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_out_of_order_stream_rejected(self):
        """
        Observations must follow the epoch order
        """
        with self.assertRaises(ValueError):
            self.run_kind(FilterKind.EKF, [self.stream[5], self.stream[2]])

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_deterministic_runs(self):
        """
        Identical inputs give identical state sequences
        """
        first = self.run_kind(FilterKind.SPUKF, self.stream[:30])
        second = self.run_kind(FilterKind.SPUKF, self.stream[:30])
        np.testing.assert_array_equal(np.array(first.means), np.array(second.means))

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_propagations_per_step(self):
        """
        The unscented filter propagates every sigma point, the others only the mean
        """
        steps = 10
        expected = {FilterKind.EKF: 1, FilterKind.UKF: 17, FilterKind.SPUKF: 1,
                    FilterKind.ESPUKF: 1}
        for kind, count in expected.items():
            run = self.run_kind(kind, self.stream[:steps])
            self.assertFalse(run.diverged)
            self.assertEqual(steps * count, run.propagations)

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_run_table(self):
        """
        The per-epoch table has one row per processed epoch
        """
        run = self.run_kind(FilterKind.ESPUKF, self.stream[:20])
        frame = run.to_frame()
        self.assertEqual(21, len(frame))
        self.assertEqual({'espukf'}, set(frame['filter']))
        self.assertFalse(frame['diverged_flag'].any())
        self.assertEqual(20, sum(innovation is not None for innovation in run.innovations))

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_build_filter(self):
        """
        Every filter kind has a filter class
        """
        belief = self.cfg.initial_belief.to_belief()
        for kind in FilterKind:
            nav_filter = build_filter(kind, build_dynamics(self.cfg), self.cfg.process_noise(kind),
                                      belief)
            self.assertEqual(kind, nav_filter.kind)
            self.assertIs(belief, nav_filter.belief)

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_covariance_stays_symmetric(self):
        """
        Every filter keeps its covariance symmetric after each prediction and each update
        """
        settings = self.cfg.measurement_settings()
        for kind in FilterKind:
            nav_filter = build_filter(kind, build_dynamics(self.cfg), self.cfg.process_noise(kind),
                                      self.cfg.initial_belief.to_belief(),
                                      self.cfg.filter.unscented)
            for observation in self.stream[:30]:
                nav_filter.predict(observation.t - nav_filter.belief.t)
                self.assert_symmetric(nav_filter.belief.covariance, kind)
                nav_filter.update(GnssMeasurementModel.from_observation(observation,
                                                                        self.cfg.site, settings))
                self.assert_symmetric(nav_filter.belief.covariance, kind)

    def assert_symmetric(self, covariance: np.ndarray, kind: FilterKind) -> None:
        """
        Check covariance symmetry relative to its largest element.

        Args:
            covariance (numpy.ndarray): Covariance
            kind (FilterKind): Filter under test
        """
        asymmetry = np.abs(covariance - covariance.T).max()
        self.assertLess(asymmetry, 1e-9 * np.abs(covariance).max(), kind.label)

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    @pytest.mark.slow
    def test_every_filter_tracks_the_ascent(self):
        """
        Every filter completes the ascent with bounded position errors
        """
        for kind in FilterKind:
            run = self.run_kind(kind)
            self.assertFalse(run.diverged)
            self.assertEqual(len(self.truth), len(run.times))
            self.assertLess(run.mean_position_error, 100.0)


class NoiselessConvergenceTest(unittest.TestCase):
    """
    Tests convergence on exact pseudo-ranges from four channels
    """

    @classmethod
    def setUpClass(cls) -> None:
        base = ScenarioConfig()
        mean = list(base.initial_belief.mean)
        mean[StateIndex.X] += 0.8
        mean[StateIndex.B] -= 300.0
        variances = list(base.initial_belief.variances)
        variances[StateIndex.B_DOT] = 1e-12
        exact = dataclasses.replace(
            base, errors=ErrorBudget.noiseless(),
            filter=dataclasses.replace(base.filter, channels=4, model_tropo=False,
                                       measurement_mode=MeasurementMode.RANGE))
        cls.truth = generate_truth(exact)
        cls.stream = generate_observations(cls.truth, exact)[:20]
        cls.cfg = dataclasses.replace(exact, initial_belief=dataclasses.replace(
            base.initial_belief, mean=mean, variances=variances))

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_position_converges(self):
        """
        Position errors fall below one metre within twenty epochs
        """
        for kind in FilterKind:
            run = run_filter(kind, self.cfg.initial_belief.to_belief(), self.stream,
                             build_dynamics(self.cfg), self.cfg.process_noise(kind), self.cfg.site,
                             self.cfg.measurement_settings(), self.cfg.filter.unscented,
                             self.truth.state_at)
            self.assertFalse(run.diverged, kind.label)
            self.assertEqual(21, len(run.position_errors))
            self.assertLess(run.position_errors[-1], 1.0, kind.label)


class DeviationMapTest(unittest.TestCase):
    """
    Tests the accuracy of the single-propagation deviation maps
    """

    @classmethod
    def setUpClass(cls) -> None:
        cls.cfg = ScenarioConfig()
        belief = cls.cfg.initial_belief.to_belief()
        cls.offsets = generate_sigma_points(
            belief, UnscentedParams(alpha=1.0, beta=2.0, kappa=0.0)).offsets[1:]
        cls.dynamics = build_dynamics(cls.cfg)
        cls.means = {}
        state, t = belief.mean, 0.0
        for epoch in (20.0, 50.0, 100.0, 300.0):
            state = cls.dynamics.propagate(state, t, epoch - t)
            t = epoch
            cls.means[epoch] = state

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_extrapolation_improves_the_map(self):
        """
        The extrapolated map is closer to the full propagation than the first-order map
        """
        first_order = deviation_map_errors(self.means[50.0], self.offsets, 50.0, 1.0,
                                           self.dynamics, FilterKind.SPUKF)
        extrapolated = deviation_map_errors(self.means[50.0], self.offsets, 50.0, 1.0,
                                            self.dynamics, FilterKind.ESPUKF)
        self.assertLess(extrapolated.max(), first_order.max())

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    def test_unmapped_kind_rejected(self):
        """
        Only the single-propagation filters map deviations
        """
        with self.assertRaises(ValueError):
            deviation_map_errors(self.means[50.0], self.offsets, 50.0, 1.0, self.dynamics,
                                 FilterKind.UKF)

    @pytest.mark.launch_nav
    @pytest.mark.estimators
    @pytest.mark.slow
    def test_convergence_orders(self):
        """
        Map errors shrink with the second power of the step for the first-order map and the
        third power for the extrapolated map
        """
        steps = np.array([2.0, 1.0, 0.5, 0.25])
        expected = {FilterKind.SPUKF: 1.9, FilterKind.ESPUKF: 2.7}
        for epoch in (20.0, 100.0, 300.0):
            for kind, order in expected.items():
                errors = []
                for dt in steps:
                    fine = LaunchVehicleDynamics(self.dynamics.config, self.dynamics.environment,
                                                 dt / 10)
                    errors.append(deviation_map_errors(self.means[epoch], self.offsets, epoch,
                                                       dt, fine, kind).max())
                slope = np.polyfit(np.log(steps), np.log(errors), 1)[0]
                self.assertGreaterEqual(slope, order, f'{kind.label} at t={epoch} s')
