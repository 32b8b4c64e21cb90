"""
Checks the launch vehicle system model
"""
# pylint: disable=duplicate-code
import dataclasses
import math
import unittest

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.linalg import expm

from config.scenario_settings import CRS5_INITIAL_MEAN, crs5_vehicle
from launch_nav.dynamics import (Environment, LaunchVehicleDynamics, NonFiniteStateError,
                                 ProcessNoise, PropagationError, SingularityError, StageParams,
                                 StateIndex, StateVector, VehicleConfig, derivative, drag, gravity,
                                 integrate, jacobian, mass_flow_rate, propagate,
                                 state_transition_matrix)


def toy_vehicle(env: Environment) -> VehicleConfig:
    """
    Single-stage vehicle without drag and without a pitch kick in the tested span.

    Args:
        env (Environment): Environment constants

    Returns:
        VehicleConfig: Vehicle
    """
    thrust, isp, burn = 1.0e6, 300.0, 100.0
    propellant = thrust / (isp * env.g0) * burn
    stage = StageParams(inert_mass=5000.0, propellant_mass=propellant, thrust=thrust, isp=isp,
                        burn_duration=burn)
    return VehicleConfig(stages=[stage], payload_mass=1000.0, spacecraft_mass=0.0,
                         initial_mass=5000.0 + propellant + 1000.0, frontal_area=10.0,
                         pitch_kick_time=1000.0, pitch_kick_angle=0.0)


class VehicleConfigTest(unittest.TestCase):
    """
    Tests vehicle parameters
    """

    def setUp(self) -> None:
        self.env = Environment()
        self.vehicle = crs5_vehicle()

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_mass_flow_rate(self):
        """
        Mass flow of both stages matches their propellant and burn duration
        """
        first, second = self.vehicle.stages
        self.assertAlmostEqual(2128.4, mass_flow_rate(first, self.env), delta=0.5)
        self.assertAlmostEqual(240.2, mass_flow_rate(second, self.env), delta=0.1)
        self.assertAlmostEqual(385.8, second.propellant_mass / mass_flow_rate(second, self.env),
                               delta=0.5)

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_mass_budget(self):
        """
        Stage and payload masses add up to the lift-off mass
        """
        self.assertEqual(2, len(self.vehicle.stages))
        self.assertLess(abs(self.vehicle.stacked_mass - 5.20e5) / 5.20e5, 0.005)
        self.assertEqual([187.0, 573.0], self.vehicle.burnout_times)
        self.assertEqual(573.0, self.vehicle.powered_flight_time)

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_inconsistent_stage_rejected(self):
        """
        Propellant that the engine cannot burn in the given time is rejected
        """
        with self.assertRaises(ValidationError):
            StageParams(inert_mass=23100.0, propellant_mass=300000.0, thrust=5886e3, isp=282.0,
                        burn_duration=187.0)

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_mass_budget_rejected(self):
        """
        Lift-off mass far from the stacked mass is rejected
        """
        with self.assertRaises(ValidationError):
            dataclasses.replace(self.vehicle, initial_mass=4.0e5)

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_state_vector_layout(self):
        """
        State vector components keep their order
        """
        state = StateVector.from_array(CRS5_INITIAL_MEAN)
        np.testing.assert_array_equal(np.array(CRS5_INITIAL_MEAN), state.to_array())
        self.assertEqual(5.6543, state.to_array()[StateIndex.V])

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_process_noise_validation(self):
        """
        Process noise must be symmetric and positive semi-definite
        """
        np.testing.assert_array_equal(1e-30 * np.eye(8), ProcessNoise.isotropic(1e-30).matrix)
        with self.assertRaises(ValueError):
            ProcessNoise(np.array([[1.0, 2.0], [0.0, 1.0]]))
        with self.assertRaises(ValueError):
            ProcessNoise(-np.eye(3))


class ForceModelTest(unittest.TestCase):
    """
    Tests gravity, drag and state rates
    """

    def setUp(self) -> None:
        self.env = Environment()
        self.vehicle = crs5_vehicle()
        self.state = np.array(CRS5_INITIAL_MEAN)

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_gravity(self):
        """
        Inverse-square gravity
        """
        self.assertEqual(self.env.g0, gravity(0.0, self.env))
        self.assertAlmostEqual(self.env.g0 / 4, gravity(self.env.earth_radius, self.env))
        self.assertAlmostEqual(8.68, gravity(400e3, self.env), delta=0.01)
        self.assertGreater(gravity(1e3, self.env), gravity(2e3, self.env))

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_drag(self):
        """
        Drag from the exponential atmosphere and the state's coefficient
        """
        state = self.state.copy()
        state[StateIndex.V] = 100.0
        self.assertAlmostEqual(3.228e4, drag(state, self.vehicle, self.env), delta=10.0)
        state[StateIndex.V] = 0.0
        self.assertEqual(0.0, drag(state, self.vehicle, self.env))
        state[StateIndex.V] = 100.0
        state[StateIndex.H] = 1e6
        self.assertLess(drag(state, self.vehicle, self.env), 1e-30)

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_derivative_at_lift_off(self):
        """
        Rates at lift-off follow the first stage thrust
        """
        rates = derivative(self.state, self.vehicle, self.env, 0.0)
        self.assertAlmostEqual(5.6543, rates[StateIndex.H], places=6)
        self.assertAlmostEqual(5886000 / 520000 - 9.80665, rates[StateIndex.V], delta=1e-3)
        self.assertAlmostEqual(-mass_flow_rate(self.vehicle.stages[0], self.env),
                               rates[StateIndex.M])
        self.assertEqual(self.state[StateIndex.B_DOT], rates[StateIndex.B])
        self.assertEqual(0.0, rates[StateIndex.C])

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_derivative_in_coast(self):
        """
        Past the final burnout the vehicle coasts
        """
        rates = derivative(self.state, self.vehicle, self.env, 600.0)
        self.assertEqual(0.0, rates[StateIndex.M])
        expected = -drag(self.state, self.vehicle, self.env) / self.state[StateIndex.M] \
            - gravity(0.0, self.env) * math.sin(self.state[StateIndex.GAMMA])
        self.assertAlmostEqual(expected, rates[StateIndex.V], places=12)

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_invalid_states(self):
        """
        Invalid states are rejected
        """
        state = self.state.copy()
        state[StateIndex.V] = 0.0
        with self.assertRaises(SingularityError):
            derivative(state, self.vehicle, self.env, 0.0)
        with self.assertRaises(SingularityError):
            jacobian(state, self.vehicle, self.env, 0.0)
        state[StateIndex.V] = math.nan
        with self.assertRaises(NonFiniteStateError):
            derivative(state, self.vehicle, self.env, 0.0)

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_jacobian_matches_finite_differences(self):
        """
        Analytic Jacobian agrees with central differences on random states
        """
        rng = np.random.default_rng(7)
        low = np.array([0.0, 0.0, 10.0, 0.1, 5.0e4, 0.3, -1e3, -10.0])
        high = np.array([5.0e5, 2.0e5, 7.0e3, 1.5, 5.0e5, 0.7, 1e3, 10.0])
        for _ in range(100):
            state = rng.uniform(low, high)
            t = float(rng.uniform(0.0, 650.0))
            analytic = jacobian(state, self.vehicle, self.env, t)
            numeric = np.empty_like(analytic)
            for column in range(8):
                step = 1e-6 * max(abs(state[column]), 1.0)
                shift = np.zeros(8)
                shift[column] = step
                numeric[:, column] = (derivative(state + shift, self.vehicle, self.env, t)
                                      - derivative(state - shift, self.vehicle, self.env, t)) \
                    / (2 * step)
            error = np.linalg.norm(analytic - numeric) / np.linalg.norm(analytic)
            self.assertLess(error, 1e-6)

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_jacobian_structure(self):
        """
        Mass rate does not depend on the state and clock bias integrates its rate
        """
        matrix = jacobian(self.state, self.vehicle, self.env, 50.0)
        np.testing.assert_array_equal(np.zeros(8), matrix[StateIndex.M])
        self.assertEqual(1.0, matrix[StateIndex.B, StateIndex.B_DOT])


class PropagationTest(unittest.TestCase):
    """
    Tests Runge-Kutta propagation with staging events
    """

    def setUp(self) -> None:
        self.env = Environment()
        self.vehicle = crs5_vehicle()
        self.state = np.array(CRS5_INITIAL_MEAN)

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_zero_span_is_identity(self):
        """
        Propagation over a zero span returns the state
        """
        np.testing.assert_array_equal(self.state,
                                      propagate(self.state, 0.0, 1, self.vehicle, self.env, 5.0))

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_rocket_equation(self):
        """
        Vertical thrust without drag follows the closed-form rocket equation
        """
        env = Environment(earth_radius=1e12)
        vehicle = toy_vehicle(env)
        stage = vehicle.stages[0]
        flow = mass_flow_rate(stage, env)
        state = np.array([0.0, 0.0, 10.0, math.pi / 2, vehicle.initial_mass, 0.0, 0.0, 0.0])
        final = propagate(state, 50.0, 500, vehicle, env, 0.0)
        mass = vehicle.initial_mass - flow * 50.0
        expected = 10.0 + stage.isp * env.g0 * math.log(vehicle.initial_mass / mass) \
            - env.g0 * 50.0
        self.assertLess(abs(final[StateIndex.V] - expected) / expected, 1e-6)
        self.assertAlmostEqual(mass, final[StateIndex.M], places=6)

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_mass_depletion_and_staging(self):
        """
        Mass drops by the burnt propellant and by the inert mass at burnout
        """
        first = self.vehicle.stages[0]
        flow = mass_flow_rate(first, self.env)
        dynamics = LaunchVehicleDynamics(self.vehicle, self.env).calibrated(self.state)
        before, recorded = integrate(self.state, 190.0, 1900, dynamics.config, self.env, 0.0,
                                     record=(100.0, 187.0))
        self.assertLess(abs(recorded[100.0][StateIndex.M] - (5.20e5 - 100 * flow)) / 5.20e5,
                        1e-9)
        after_burnout = 5.20e5 - 187 * flow - first.inert_mass
        self.assertLess(abs(recorded[187.0][StateIndex.M] - after_burnout) / 5.20e5, 1e-9)
        self.assertLess(before[StateIndex.M], recorded[187.0][StateIndex.M])

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_burnout_keeps_trajectory_continuous(self):
        """
        Staging changes the mass only
        """
        dynamics = LaunchVehicleDynamics(self.vehicle, self.env).calibrated(self.state)
        at_180 = dynamics.propagate(self.state, 0.0, 180.0)
        before = dynamics.propagate(at_180, 180.0, 7.0 - 1e-6)
        after = dynamics.propagate(before, 187.0 - 1e-6, 2e-6)
        trajectory = [StateIndex.X, StateIndex.H, StateIndex.V, StateIndex.GAMMA]
        np.testing.assert_allclose(before[trajectory], after[trajectory], rtol=1e-6, atol=1e-2)
        self.assertAlmostEqual(self.vehicle.stages[0].inert_mass,
                               before[StateIndex.M] - after[StateIndex.M], delta=1.0)

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_fourth_order_convergence(self):
        """
        Halving the Runge-Kutta step cuts the error sixteenfold
        """
        dynamics = LaunchVehicleDynamics(self.vehicle, self.env).calibrated(self.state)
        cfg = dynamics.config
        start = dynamics.propagate(self.state, 0.0, 20.0)
        reference = propagate(start, 80.0, 4000, cfg, self.env, 20.0)
        trajectory = [StateIndex.X, StateIndex.H, StateIndex.V]
        coarse = np.linalg.norm((propagate(start, 80.0, 20, cfg, self.env, 20.0)
                                 - reference)[trajectory])
        fine = np.linalg.norm((propagate(start, 80.0, 40, cfg, self.env, 20.0)
                               - reference)[trajectory])
        self.assertGreaterEqual(math.log2(coarse / fine), 3.7)

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_calibrated_pitch_kick(self):
        """
        The calibrated kick leaves the nominal trajectory at the configured angle
        """
        dynamics = LaunchVehicleDynamics(self.vehicle, self.env).calibrated(self.state)
        kicked = dynamics.propagate(self.state, 0.0, self.vehicle.pitch_kick_time)
        self.assertAlmostEqual(math.pi / 2 - self.vehicle.pitch_kick_angle,
                               kicked[StateIndex.GAMMA], places=12)

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_failure_reports_epoch(self):
        """
        An invalid state during integration names the failing epoch
        """
        state = self.state.copy()
        state[StateIndex.M] = -1.0
        with self.assertRaises(PropagationError) as context:
            propagate(state, 1.0, 10, self.vehicle, self.env, 3.0)
        self.assertEqual(3.0, context.exception.time)

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_counters(self):
        """
        Propagations and Jacobian evaluations are counted
        """
        dynamics = LaunchVehicleDynamics(self.vehicle, self.env)
        dynamics.propagate(self.state, 0.0, 1.0)
        dynamics.propagate_with_midpoint(self.state, 0.0, 1.0)
        dynamics.jacobian(self.state, 0.0)
        self.assertEqual(2, dynamics.propagation_count)
        self.assertEqual(1, dynamics.jacobian_count)
        dynamics.reset_counters()
        self.assertEqual(0, dynamics.propagation_count)
        self.assertEqual(10, dynamics.substeps_for(1.0))

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_midpoint_matches_split_propagation(self):
        """
        The recorded mid-step state equals a half-step propagation
        """
        dynamics = LaunchVehicleDynamics(self.vehicle, self.env).calibrated(self.state)
        start = dynamics.propagate(self.state, 0.0, 30.0)
        final, middle = dynamics.propagate_with_midpoint(start, 30.0, 1.0)
        np.testing.assert_allclose(dynamics.propagate(start, 30.0, 0.5), middle, rtol=1e-12)
        np.testing.assert_allclose(dynamics.propagate(start, 30.0, 1.0), final, rtol=1e-12)


class StateTransitionMatrixTest(unittest.TestCase):
    """
    Tests the matrix exponential
    """

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_zero_jacobian(self):
        """
        Zero Jacobian gives the identity
        """
        np.testing.assert_array_equal(np.eye(8), state_transition_matrix(np.zeros((8, 8)), 1.0))

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_diagonal_jacobian(self):
        """
        Diagonal Jacobian gives elementwise exponentials
        """
        rates = np.linspace(-2.0, 1.5, 8)
        np.testing.assert_allclose(np.diag(np.exp(rates * 0.7)),
                                   state_transition_matrix(np.diag(rates), 0.7), rtol=1e-12,
                                   atol=1e-15)

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_nilpotent_jacobian(self):
        """
        Nilpotent block gives the terminating series
        """
        matrix = np.zeros((8, 8))
        matrix[0, 1] = 1.0
        expected = np.eye(8)
        expected[0, 1] = 2.0
        np.testing.assert_allclose(expected, state_transition_matrix(matrix, 2.0), atol=1e-14)

    @pytest.mark.launch_nav
    @pytest.mark.dynamics
    def test_matches_expm(self):
        """
        Agrees with the library matrix exponential on a vehicle Jacobian
        """
        env = Environment()
        matrix = jacobian(np.array([1e4, 3e4, 900.0, 0.9, 3e5, 0.5, 400.0, 2.0]), crs5_vehicle(),
                          env, 100.0)
        np.testing.assert_allclose(expm(matrix), state_transition_matrix(matrix, 1.0),
                                   rtol=1e-10, atol=1e-12)
