"""
Launch vehicle equations of motion, staging and numerical propagation.
"""

# pylint: disable=invalid-name, too-many-locals, too-many-arguments
import dataclasses
import math
from enum import IntEnum
from typing import Iterable

import numpy as np
from pydantic import NonNegativeFloat, PositiveFloat, field_validator, model_validator
from pydantic.dataclasses import dataclass

#: Standard gravity used to convert specific impulse into mass flow
STANDARD_GRAVITY = 9.80665

#: Number of estimated states
STATE_DIM = 8

#: Event times closer than this are treated as coincident, s
EVENT_TOLERANCE = 1e-9


class DynamicsError(Exception):
    """
    Base error of the launch vehicle model.
    """


class NonFiniteStateError(DynamicsError):
    """
    Error for NaN or infinite inputs.
    """


class SingularityError(DynamicsError):
    """
    Error for a non-positive speed, where the flight path angle rate is undefined.
    """


class InvalidStateError(DynamicsError):
    """
    Error for a state outside the physical domain of the model.
    """


class PropagationError(DynamicsError):
    """
    Error for a state that became invalid during integration.
    """

    def __init__(self, time: float, reason: str) -> None:
        """
        Initialize an instance of PropagationError.

        Args:
            time (float): Epoch of the violation, s
            reason (str): Description of the violated invariant
        """
        super().__init__(f'Propagation failed at t={time:.3f} s: {reason}')
        self.time = time


class StateIndex(IntEnum):
    """
    Position of every estimated quantity inside a state array.
    """

    X = 0
    H = 1
    V = 2
    GAMMA = 3
    M = 4
    C = 5
    B = 6
    B_DOT = 7


@dataclass
class StateVector:
    """
    Down-range, altitude, speed, flight path angle, mass, aerodynamic coefficient,
    receiver clock bias and its rate.
    """

    x: float
    h: float
    v: float
    gamma: float
    m: float
    C: float
    b: float
    b_dot: float

    def to_array(self) -> np.ndarray:
        """
        Convert to an array ordered by StateIndex.

        Returns:
            numpy.ndarray: State array
        """
        return np.array([self.x, self.h, self.v, self.gamma, self.m, self.C, self.b, self.b_dot])

    @classmethod
    def from_array(cls, values: Iterable[float]) -> 'StateVector':
        """
        Build a state from an array ordered by StateIndex.

        Args:
            values (Iterable[float]): Eight state components

        Returns:
            StateVector: State
        """
        return cls(*(float(value) for value in values))


@dataclass
class StageParams:
    """
    Parameters of a single stage.
    """

    inert_mass: PositiveFloat
    propellant_mass: PositiveFloat
    thrust: PositiveFloat
    isp: PositiveFloat
    burn_duration: PositiveFloat

    @model_validator(mode='after')
    def check_propellant_budget(self) -> 'StageParams':
        """
        Check that thrust, impulse and burn duration consume the stated propellant.

        Returns:
            StageParams: Validated stage

        Raises:
            ValueError: In case of a mismatch above 2%
        """
        burned = self.thrust / (self.isp * STANDARD_GRAVITY) * self.burn_duration
        mismatch = abs(burned - self.propellant_mass) / self.propellant_mass
        if mismatch > 0.02:
            raise ValueError(f'propellant_mass {self.propellant_mass} kg differs from '
                             f'burned mass {burned:.1f} kg by {mismatch:.2%}')
        return self


@dataclass
class VehicleConfig:
    """
    Staged vehicle description.

    When burnout_altitude is set, the scenario replaces pitch_kick_angle with the kick that
    ends powered flight at that altitude.
    """

    stages: list[StageParams]
    payload_mass: NonNegativeFloat
    spacecraft_mass: NonNegativeFloat
    initial_mass: PositiveFloat
    frontal_area: PositiveFloat
    pitch_kick_time: NonNegativeFloat
    pitch_kick_angle: NonNegativeFloat
    pitch_kick_reference: float | None = None
    burnout_altitude: PositiveFloat | None = None

    @field_validator('stages')
    @classmethod
    def check_stages(cls, stages: list[StageParams]) -> list[StageParams]:
        """
        Check that at least one stage is present.

        Args:
            stages (list[StageParams]): Stages in firing order

        Returns:
            list[StageParams]: Validated stages

        Raises:
            ValueError: In case of an empty list
        """
        if not stages:
            raise ValueError('at least one stage is required')
        return stages

    @model_validator(mode='after')
    def check_mass_budget(self) -> 'VehicleConfig':
        """
        Check that stage and payload masses add up to the lift-off mass.

        Returns:
            VehicleConfig: Validated vehicle

        Raises:
            ValueError: In case of a mismatch above 0.5%
        """
        mismatch = abs(self.stacked_mass - self.initial_mass) / self.initial_mass
        if mismatch > 0.005:
            raise ValueError(f'initial_mass {self.initial_mass} kg differs from the '
                             f'stacked mass {self.stacked_mass} kg by {mismatch:.2%}')
        return self

    @property
    def stacked_mass(self) -> float:
        """
        Sum of stage, payload and spacecraft masses.

        Returns:
            float: Mass, kg
        """
        stage_mass = sum(stage.inert_mass + stage.propellant_mass for stage in self.stages)
        return stage_mass + self.payload_mass + self.spacecraft_mass

    @property
    def burnout_times(self) -> list[float]:
        """
        Burnout epoch of every stage, stages igniting back to back from lift-off.

        Returns:
            list[float]: Epochs, s
        """
        return list(np.cumsum([stage.burn_duration for stage in self.stages]))

    @property
    def powered_flight_time(self) -> float:
        """
        Final burnout epoch.

        Returns:
            float: Epoch, s
        """
        return float(sum(stage.burn_duration for stage in self.stages))

    @property
    def pitch_kick_delta(self) -> float:
        """
        Decrement applied to the flight path angle at the pitch kick.

        A trajectory whose flight path angle equals pitch_kick_reference just before the
        kick leaves it at exactly pi/2 - pitch_kick_angle.

        Returns:
            float: Angle, rad
        """
        if self.pitch_kick_reference is None:
            return self.pitch_kick_angle
        return self.pitch_kick_reference - (math.pi / 2 - self.pitch_kick_angle)


@dataclass
class Environment:
    """
    Earth constants shared by gravity and atmosphere models.
    """

    earth_radius: PositiveFloat = 6378137.0
    g0: PositiveFloat = STANDARD_GRAVITY
    rho0: PositiveFloat = 1.225
    scale_height: PositiveFloat = 7500.0

    def gravity(self, h: float) -> float:
        """
        Inverse-square gravitational acceleration.

        Args:
            h (float): Altitude, m

        Returns:
            float: Acceleration, m/s^2
        """
        return gravity(h, self)

    def density(self, h: float) -> float:
        """
        Exponential atmosphere density.

        Args:
            h (float): Altitude, m

        Returns:
            float: Density, kg/m^3
        """
        return self.rho0 * math.exp(-h / self.scale_height)


@dataclasses.dataclass(frozen=True)
class ProcessNoise:
    """
    Process noise covariance Q.
    """

    matrix: np.ndarray

    def __post_init__(self) -> None:
        """
        Check symmetry and positive semi-definiteness.

        Raises:
            ValueError: In case of a non-square, asymmetric or indefinite matrix
        """
        matrix = np.asarray(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f'process noise must be square, got shape {matrix.shape}')
        if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-12 * max(np.abs(matrix).max(), 1)):
            raise ValueError('process noise must be symmetric')
        if np.linalg.eigvalsh(matrix).min() < -1e-12 * max(np.abs(matrix).max(), 1e-300):
            raise ValueError('process noise must be positive semi-definite')
        object.__setattr__(self, 'matrix', matrix)

    @classmethod
    def isotropic(cls, value: float, dim: int = STATE_DIM) -> 'ProcessNoise':
        """
        Build value * I.

        Args:
            value (float): Diagonal value
            dim (int): Matrix size

        Returns:
            ProcessNoise: Process noise
        """
        return cls(value * np.eye(dim))


def mass_flow_rate(stage: StageParams, env: Environment) -> float:
    """
    Mass flow rate at the exhaust nozzle.

    Args:
        stage (StageParams): Stage
        env (Environment): Environment constants

    Returns:
        float: Mass flow, kg/s
    """
    return stage.thrust / (stage.isp * env.g0)


def gravity(h: float, env: Environment) -> float:
    """
    Inverse-square gravitational acceleration.

    Args:
        h (float): Altitude, m
        env (Environment): Environment constants

    Returns:
        float: Acceleration, m/s^2

    Raises:
        InvalidStateError: In case of an altitude below the Earth centre
    """
    if h <= -env.earth_radius:
        raise InvalidStateError(f'altitude {h} m is below the Earth centre')
    ratio = env.earth_radius / (env.earth_radius + h)
    return env.g0 * ratio * ratio


def drag(s: np.ndarray | StateVector, cfg: VehicleConfig, env: Environment) -> float:
    """
    Aerodynamic drag using the state's aerodynamic coefficient.

    Args:
        s (numpy.ndarray | StateVector): State
        cfg (VehicleConfig): Vehicle
        env (Environment): Environment constants

    Returns:
        float: Drag force, N
    """
    state = _as_array(s)
    h, v, coefficient = state[StateIndex.H], state[StateIndex.V], state[StateIndex.C]
    return 0.5 * env.density(h) * v * v * coefficient * cfg.frontal_area


def thrust_profile(cfg: VehicleConfig, env: Environment, t: float) -> tuple[float, float]:
    """
    Thrust and mass flow of the stage firing at an epoch.

    Args:
        cfg (VehicleConfig): Vehicle
        env (Environment): Environment constants
        t (float): Epoch, s

    Returns:
        tuple[float, float]: Thrust (N) and mass flow (kg/s), zero in coast
    """
    ignition = 0.0
    for stage in cfg.stages:
        if ignition <= t < ignition + stage.burn_duration:
            return stage.thrust, mass_flow_rate(stage, env)
        ignition += stage.burn_duration
    return 0.0, 0.0


def _as_array(s: np.ndarray | StateVector) -> np.ndarray:
    if isinstance(s, StateVector):
        return s.to_array()
    return np.asarray(s, dtype=float)


def _rates(state: np.ndarray, thrust: float, flow: float, cfg: VehicleConfig,
           env: Environment) -> np.ndarray:
    x, h, v, gamma, m, coefficient, b, b_dot = state.tolist()
    if not math.isfinite(x + h + v + gamma + m + coefficient + b + b_dot):
        raise NonFiniteStateError(f'state has non-finite components: {state}')
    if not v > 0.0:
        raise SingularityError(f'speed must be positive, got {v} m/s')
    if not m > 0.0:
        raise InvalidStateError(f'mass must be positive, got {m} kg')
    if not h > -1000.0:
        raise InvalidStateError(f'altitude {h} m is below the model floor')

    radius = env.earth_radius + h
    ratio = env.earth_radius / radius
    g = env.g0 * ratio * ratio
    force = 0.5 * env.rho0 * math.exp(-h / env.scale_height) * v * v * coefficient \
        * cfg.frontal_area
    cos_gamma = math.cos(gamma)
    sin_gamma = math.sin(gamma)
    return np.array([
        ratio * v * cos_gamma,
        v * sin_gamma,
        (thrust - force) / m - g * sin_gamma,
        -(g - v * v / radius) * cos_gamma / v,
        -flow,
        0.0,
        b_dot,
        0.0,
    ])


def derivative(s: np.ndarray | StateVector, cfg: VehicleConfig, env: Environment,
               t: float) -> np.ndarray:
    """
    Time derivative of the state.

    Args:
        s (numpy.ndarray | StateVector): State
        cfg (VehicleConfig): Vehicle
        env (Environment): Environment constants
        t (float): Epoch, s

    Returns:
        numpy.ndarray: Eight state rates
    """
    thrust, flow = thrust_profile(cfg, env, t)
    return _rates(_as_array(s), thrust, flow, cfg, env)


def jacobian(s: np.ndarray | StateVector, cfg: VehicleConfig, env: Environment,
             t: float) -> np.ndarray:
    """
    Analytic partial derivatives of the state rates.

    Args:
        s (numpy.ndarray | StateVector): State
        cfg (VehicleConfig): Vehicle
        env (Environment): Environment constants
        t (float): Epoch, s

    Returns:
        numpy.ndarray: 8x8 matrix, rows are rates and columns are states

    Raises:
        NonFiniteStateError: In case of non-finite state components
        SingularityError: In case of a non-positive speed
    """
    state = _as_array(s)
    if not np.all(np.isfinite(state)):
        raise NonFiniteStateError(f'state has non-finite components: {state}')
    h, v, gamma, m, coefficient = state[1:6].tolist()
    if not v > 0.0:
        raise SingularityError(f'speed must be positive, got {v} m/s')
    thrust, _ = thrust_profile(cfg, env, t)

    radius = env.earth_radius + h
    ratio = env.earth_radius / radius
    g = env.g0 * ratio * ratio
    dg_dh = -2.0 * g / radius
    density = env.rho0 * math.exp(-h / env.scale_height)
    force = 0.5 * density * v * v * coefficient * cfg.frontal_area
    cos_gamma = math.cos(gamma)
    sin_gamma = math.sin(gamma)

    X, H, V, G, M, C, B, BD = StateIndex
    matrix = np.zeros((STATE_DIM, STATE_DIM))
    matrix[X, H] = -ratio * v * cos_gamma / radius
    matrix[X, V] = ratio * cos_gamma
    matrix[X, G] = -ratio * v * sin_gamma
    matrix[H, V] = sin_gamma
    matrix[H, G] = v * cos_gamma
    matrix[V, H] = force / (env.scale_height * m) - dg_dh * sin_gamma
    matrix[V, V] = -2.0 * force / (v * m)
    matrix[V, G] = -g * cos_gamma
    matrix[V, M] = -(thrust - force) / (m * m)
    matrix[V, C] = -0.5 * density * v * v * cfg.frontal_area / m
    matrix[G, H] = (-dg_dh / v - v / (radius * radius)) * cos_gamma
    matrix[G, V] = (g / (v * v) + 1.0 / radius) * cos_gamma
    matrix[G, G] = (g / v - v / radius) * sin_gamma
    matrix[B, BD] = 1.0
    return matrix


def _event_times(cfg: VehicleConfig) -> list[tuple[float, str, int]]:
    events = [(cfg.pitch_kick_time, 'kick', -1)]
    events.extend((time, 'burnout', index) for index, time in enumerate(cfg.burnout_times))
    return sorted(events)


def _apply_events(state: np.ndarray, time: float, cfg: VehicleConfig,
                  events: list[tuple[float, str, int]]) -> None:
    for event_time, kind, index in events:
        if abs(event_time - time) > EVENT_TOLERANCE:
            continue
        if kind == 'kick':
            state[StateIndex.GAMMA] -= cfg.pitch_kick_delta
        else:
            state[StateIndex.M] -= cfg.stages[index].inert_mass


def integrate(s: np.ndarray | StateVector, dt: float, substeps: int, cfg: VehicleConfig,
              env: Environment, t0: float,
              record: Iterable[float] = ()) -> tuple[np.ndarray, dict[float, np.ndarray]]:
    """
    Classical Runge-Kutta integration with staging and pitch kick events.

    Events falling inside a substep split it, so every event lands on a step boundary;
    events at t0 are assumed already applied.

    Args:
        s (numpy.ndarray | StateVector): State at t0
        dt (float): Span, s
        substeps (int): Number of Runge-Kutta steps over the span
        cfg (VehicleConfig): Vehicle
        env (Environment): Environment constants
        t0 (float): Start epoch, s
        record (Iterable[float]): Epochs inside the span to record states at

    Returns:
        tuple[numpy.ndarray, dict[float, numpy.ndarray]]: Final state and recorded states

    Raises:
        ValueError: In case of a negative span or no substeps
        PropagationError: In case of an invalid state during integration
    """
    if dt < 0 or substeps < 1:
        raise ValueError(f'dt must be non-negative and substeps positive, got {dt}, {substeps}')
    state = _as_array(s).copy()
    t_end = t0 + dt
    grid = [t0 + dt * k / substeps for k in range(substeps + 1)]
    events = _event_times(cfg)
    marks = [time for time, _, _ in events if t0 < time <= t_end]
    marks.extend(time for time in record if t0 < time <= t_end)
    for mark in marks:
        nearest = min(range(len(grid)), key=lambda k, mark=mark: abs(grid[k] - mark))
        if abs(grid[nearest] - mark) <= EVENT_TOLERANCE:
            grid[nearest] = mark
        else:
            grid.append(mark)
    grid = sorted(set(grid))
    recorded = {time: state.copy() for time in record if abs(time - t0) <= EVENT_TOLERANCE}

    for start, end in zip(grid[:-1], grid[1:]):
        step = end - start
        thrust, flow = thrust_profile(cfg, env, 0.5 * (start + end))
        try:
            k1 = _rates(state, thrust, flow, cfg, env)
            k2 = _rates(state + 0.5 * step * k1, thrust, flow, cfg, env)
            k3 = _rates(state + 0.5 * step * k2, thrust, flow, cfg, env)
            k4 = _rates(state + step * k3, thrust, flow, cfg, env)
        except DynamicsError as error:
            raise PropagationError(start, str(error)) from error
        state = state + step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _apply_events(state, end, cfg, events)
        for time in record:
            if abs(time - end) <= EVENT_TOLERANCE:
                recorded[time] = state.copy()
    return state, recorded


def propagate(s: np.ndarray | StateVector, dt: float, substeps: int, cfg: VehicleConfig,
              env: Environment, t0: float) -> np.ndarray:
    """
    Propagate a state with the classical Runge-Kutta scheme.

    Args:
        s (numpy.ndarray | StateVector): State at t0
        dt (float): Span, s
        substeps (int): Number of Runge-Kutta steps over the span
        cfg (VehicleConfig): Vehicle
        env (Environment): Environment constants
        t0 (float): Start epoch, s

    Returns:
        numpy.ndarray: State at t0 + dt
    """
    return integrate(s, dt, substeps, cfg, env, t0)[0]


def state_transition_matrix(J: np.ndarray, dt: float, order: int = 12) -> np.ndarray:
    """
    Matrix exponential exp(J*dt) by scaling and squaring of a truncated Taylor series.

    Args:
        J (numpy.ndarray): Square Jacobian
        dt (float): Step length, s
        order (int): Number of Taylor terms

    Returns:
        numpy.ndarray: State transition matrix

    Raises:
        NonFiniteStateError: In case of non-finite entries
    """
    scaled = np.asarray(J, dtype=float) * dt
    if not np.all(np.isfinite(scaled)):
        raise NonFiniteStateError('Jacobian has non-finite entries')
    identity = np.eye(scaled.shape[0])
    norm = np.abs(scaled).sum(axis=1).max()
    squarings = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0 else 0
    scaled = scaled / 2.0 ** squarings

    result = identity.copy()
    for k in range(order, 0, -1):
        result = identity + scaled @ result / k
    for _ in range(squarings):
        result = result @ result
    return result


class LaunchVehicleDynamics:
    """
    System model of the launch vehicle used by truth generation and by the filters.
    """

    def __init__(self, cfg: VehicleConfig, env: Environment, max_substep: float = 0.1) -> None:
        """
        Initialize an instance of LaunchVehicleDynamics.

        Args:
            cfg (VehicleConfig): Vehicle
            env (Environment): Environment constants
            max_substep (float): Longest Runge-Kutta step, s
        """
        self._cfg = cfg
        self._env = env
        self._max_substep = max_substep
        self._propagations = 0
        self._jacobians = 0

    @property
    def config(self) -> VehicleConfig:
        """
        Property for the vehicle.

        Returns:
            VehicleConfig: Vehicle
        """
        return self._cfg

    @property
    def environment(self) -> Environment:
        """
        Property for the environment constants.

        Returns:
            Environment: Environment constants
        """
        return self._env

    @property
    def propagation_count(self) -> int:
        """
        Number of trajectory propagations performed so far.

        Returns:
            int: Count
        """
        return self._propagations

    @property
    def jacobian_count(self) -> int:
        """
        Number of Jacobian evaluations performed so far.

        Returns:
            int: Count
        """
        return self._jacobians

    def reset_counters(self) -> None:
        """
        Zero the propagation and Jacobian counters.
        """
        self._propagations = 0
        self._jacobians = 0

    def substeps_for(self, dt: float) -> int:
        """
        Number of Runge-Kutta steps keeping each step within max_substep.

        Args:
            dt (float): Span, s

        Returns:
            int: Substep count
        """
        return max(1, int(math.ceil(dt / self._max_substep - 1e-9)))

    def derivative(self, state: np.ndarray, t: float) -> np.ndarray:
        """
        Time derivative of the state.

        Args:
            state (numpy.ndarray): State
            t (float): Epoch, s

        Returns:
            numpy.ndarray: State rates
        """
        return derivative(state, self._cfg, self._env, t)

    def jacobian(self, state: np.ndarray, t: float) -> np.ndarray:
        """
        Analytic Jacobian of the state rates.

        Args:
            state (numpy.ndarray): State
            t (float): Epoch, s

        Returns:
            numpy.ndarray: 8x8 matrix
        """
        self._jacobians += 1
        return jacobian(state, self._cfg, self._env, t)

    def propagate(self, state: np.ndarray, t0: float, dt: float) -> np.ndarray:
        """
        Propagate a state over a step.

        Args:
            state (numpy.ndarray): State at t0
            t0 (float): Start epoch, s
            dt (float): Step length, s

        Returns:
            numpy.ndarray: State at t0 + dt
        """
        self._propagations += 1
        return propagate(state, dt, self.substeps_for(dt), self._cfg, self._env, t0)

    def propagate_with_midpoint(self, state: np.ndarray, t0: float,
                                dt: float) -> tuple[np.ndarray, np.ndarray]:
        """
        Propagate a state over a step recording it at the middle of the step.

        Args:
            state (numpy.ndarray): State at t0
            t0 (float): Start epoch, s
            dt (float): Step length, s

        Returns:
            tuple[numpy.ndarray, numpy.ndarray]: States at t0 + dt and t0 + dt/2
        """
        self._propagations += 1
        middle = t0 + 0.5 * dt
        final, recorded = integrate(state, dt, self.substeps_for(dt), self._cfg, self._env, t0,
                                    record=(middle,))
        return final, recorded[middle]

    def calibrated(self, initial_state: np.ndarray) -> 'LaunchVehicleDynamics':
        """
        Build a model whose pitch kick leaves the nominal trajectory at pi/2 - kick angle.

        Args:
            initial_state (numpy.ndarray): Nominal lift-off state

        Returns:
            LaunchVehicleDynamics: Model with a calibrated kick
        """
        cfg = dataclasses.replace(self._cfg, pitch_kick_reference=None)
        if cfg.pitch_kick_time > 0:
            unkicked = dataclasses.replace(cfg, pitch_kick_time=math.inf)
            before_kick, _ = integrate(initial_state, cfg.pitch_kick_time,
                                       self.substeps_for(cfg.pitch_kick_time), unkicked,
                                       self._env, 0.0)
            reference = float(before_kick[StateIndex.GAMMA])
            cfg = dataclasses.replace(cfg, pitch_kick_reference=reference)
        return LaunchVehicleDynamics(cfg, self._env, self._max_substep)
