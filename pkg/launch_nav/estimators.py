"""
Extended, unscented and single-propagation unscented Kalman filters.
"""

# pylint: disable=invalid-name, too-many-arguments, too-many-locals, too-many-instance-attributes
import dataclasses
import logging
import math
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import pandas as pd
from pydantic import NonNegativeFloat, PositiveFloat
from pydantic.dataclasses import dataclass
from scipy import linalg

from core_utils.nav.filter_kind import FilterKind, MeasurementMode
from core_utils.nav.filter_pipeline import (AbstractNavigationFilter, DynamicsModelLike,
                                            MeasurementModelLike)
from launch_nav.dynamics import DynamicsError, StateIndex, state_transition_matrix
from launch_nav.gnss import (SPEED_OF_LIGHT, GnssObservation, LaunchSiteFrame, embed_states,
                             embedding_jacobian, tropo_delays)

#: Smallest measurement variance, keeps the innovation covariance invertible for noiseless data
MIN_MEASUREMENT_VARIANCE = 1e-6

#: Relative jitter added to the covariance diagonal by a divergence repair
REPAIR_JITTER = 1e-6

#: State components entering the position and velocity error metrics
TRAJECTORY_COMPONENTS = (StateIndex.X, StateIndex.H, StateIndex.V, StateIndex.GAMMA)


class EstimationError(Exception):
    """
    Base error of the filters.
    """


class CovarianceNotPositiveDefiniteError(EstimationError):
    """
    Error for a covariance whose Cholesky factorization fails.
    """

    def __init__(self, minor: int) -> None:
        """
        Initialize an instance of CovarianceNotPositiveDefiniteError.

        Args:
            minor (int): Order of the first leading minor that is not positive
        """
        super().__init__(f'Covariance is not positive definite: leading minor of order {minor}')
        self.minor = minor


class SigmaPointPropagationError(EstimationError):
    """
    Error for a sigma point the system model cannot propagate.
    """

    def __init__(self, index: int, reason: str) -> None:
        """
        Initialize an instance of SigmaPointPropagationError.

        Args:
            index (int): Sigma point index
            reason (str): Description of the failure
        """
        super().__init__(f'Sigma point {index} failed to propagate: {reason}')
        self.index = index


class InnovationSingularError(EstimationError):
    """
    Error for a singular innovation covariance.
    """


class FilterDivergenceError(EstimationError):
    """
    Error for a covariance that stays indefinite after repair.
    """


@dataclasses.dataclass
class GaussianBelief:
    """
    Mean and covariance of the state at an epoch.
    """

    mean: np.ndarray
    covariance: np.ndarray
    t: float = 0.0

    def __post_init__(self) -> None:
        """
        Check shapes and symmetry.

        Raises:
            ValueError: In case of mismatched shapes or an asymmetric covariance
        """
        self.mean = np.asarray(self.mean, dtype=float)
        self.covariance = np.asarray(self.covariance, dtype=float)
        dim = self.mean.shape[0]
        if self.mean.ndim != 1 or self.covariance.shape != (dim, dim):
            raise ValueError(f'mean of shape {self.mean.shape} does not match covariance '
                             f'of shape {self.covariance.shape}')
        scale = max(float(np.abs(self.covariance).max()), np.finfo(float).tiny)
        if np.abs(self.covariance - self.covariance.T).max() > 1e-12 * scale:
            raise ValueError('covariance must be symmetric')

    @property
    def dim(self) -> int:
        """
        State dimension.

        Returns:
            int: Dimension
        """
        return int(self.mean.shape[0])


@dataclass
class UnscentedParams:
    """
    Scaled unscented transform parameters.
    """

    alpha: PositiveFloat = 1e-3
    beta: NonNegativeFloat = 2.0
    kappa: float = 0.0

    def lambda_(self, n: int) -> float:
        """
        Composite scaling parameter.

        Args:
            n (int): State dimension

        Returns:
            float: Scaling parameter
        """
        return self.alpha ** 2 * (n + self.kappa) - n

    def weights(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """
        Mean and covariance weights.

        Args:
            n (int): State dimension

        Returns:
            tuple[numpy.ndarray, numpy.ndarray]: Weights of the 2n+1 points

        Raises:
            ValueError: In case n + lambda is not positive
        """
        lam = self.lambda_(n)
        if n + lam <= 0:
            raise ValueError(f'n + lambda must be positive, got {n + lam}')
        wm = np.full(2 * n + 1, 0.5 / (n + lam))
        wc = wm.copy()
        wm[0] = lam / (n + lam)
        wc[0] = wm[0] + 1.0 - self.alpha ** 2 + self.beta
        return wm, wc


@dataclasses.dataclass(frozen=True)
class SigmaPointSet:
    """
    Sigma points stored as a centre plus offsets.
    """

    center: np.ndarray
    offsets: np.ndarray
    wm: np.ndarray
    wc: np.ndarray

    @property
    def points(self) -> np.ndarray:
        """
        Sigma points, the centre first.

        Returns:
            numpy.ndarray: Array of shape (2n+1, n)
        """
        return self.center + self.offsets


@dataclasses.dataclass(frozen=True)
class FilterStepTiming:
    """
    Wall time of one predict and one update.
    """

    predict: float
    update: float

    def __post_init__(self) -> None:
        """
        Check the durations.

        Raises:
            ValueError: In case of a negative duration
        """
        if self.predict < 0 or self.update < 0:
            raise ValueError('durations must be non-negative')

    @property
    def total_ms(self) -> float:
        """
        Duration of the whole step.

        Returns:
            float: Duration, ms
        """
        return 1e3 * (self.predict + self.update)


@dataclass
class MeasurementSettings:
    """
    How observables enter the filters.
    """

    mode: MeasurementMode = MeasurementMode.RANGE_RATE
    use_graphic: bool = True
    model_tropo: bool = True
    sigma_rho: NonNegativeFloat = 5.0
    sigma_phi: NonNegativeFloat = 0.05
    sigma_rate: NonNegativeFloat = 0.2


class GnssMeasurementModel:
    """
    Predicted pseudo-ranges and range-rates of the tracked satellites.
    """

    def __init__(self, sat_positions: np.ndarray, sat_velocities: np.ndarray,
                 sat_clock_biases: np.ndarray, observed: np.ndarray, frame: LaunchSiteFrame,
                 settings: MeasurementSettings) -> None:
        """
        Initialize an instance of GnssMeasurementModel.

        Args:
            sat_positions (numpy.ndarray): Satellite positions of shape (k, 3), m
            sat_velocities (numpy.ndarray): Satellite velocities of shape (k, 3), m/s
            sat_clock_biases (numpy.ndarray): Satellite clock offsets, s
            observed (numpy.ndarray): Ranges, followed by range-rates in range-rate mode
            frame (LaunchSiteFrame): Embedding frame
            settings (MeasurementSettings): Measurement settings
        """
        self._sat_positions = np.asarray(sat_positions, dtype=float).reshape(-1, 3)
        self._sat_velocities = np.asarray(sat_velocities, dtype=float).reshape(-1, 3)
        self._clock_corrections = SPEED_OF_LIGHT * np.asarray(sat_clock_biases, dtype=float)
        self._frame = frame
        self._settings = settings
        self._with_rates = settings.mode is MeasurementMode.RANGE_RATE
        self.observed = np.asarray(observed, dtype=float)
        channels = len(self._sat_positions)
        if settings.use_graphic:
            range_variance = (settings.sigma_rho ** 2 + settings.sigma_phi ** 2) / 4.0
        else:
            range_variance = settings.sigma_rho ** 2
        variances = [max(range_variance, MIN_MEASUREMENT_VARIANCE)] * channels
        if self._with_rates:
            variances += [max(settings.sigma_rate ** 2, MIN_MEASUREMENT_VARIANCE)] * channels
        self.noise_covariance = np.diag(variances)
        if self.observed.shape != (len(variances),):
            raise ValueError(f'expected {len(variances)} observed values, '
                             f'got {self.observed.shape}')

    @classmethod
    def from_observation(cls, observation: GnssObservation, frame: LaunchSiteFrame,
                         settings: MeasurementSettings) -> 'GnssMeasurementModel':
        """
        Build the model of an observation epoch.

        Args:
            observation (GnssObservation): Observation
            frame (LaunchSiteFrame): Embedding frame
            settings (MeasurementSettings): Measurement settings

        Returns:
            GnssMeasurementModel: Measurement model
        """
        channels = observation.channels
        ranges = [channel.graphic if settings.use_graphic else channel.rho
                  for channel in channels]
        if settings.mode is MeasurementMode.RANGE_RATE:
            ranges += [channel.range_rate for channel in channels]
        return cls(np.array([channel.sat_position for channel in channels]),
                   np.array([channel.sat_velocity for channel in channels]),
                   np.array([channel.sat_clock_bias for channel in channels]),
                   np.array(ranges), frame, settings)

    @property
    def channels(self) -> int:
        """
        Number of tracked satellites.

        Returns:
            int: Channel count
        """
        return len(self._sat_positions)

    def predict_points(self, points: np.ndarray) -> np.ndarray:
        """
        Predicted observables of many states.

        Args:
            points (numpy.ndarray): States of shape (N, 8)

        Returns:
            numpy.ndarray: Predictions of shape (N, m)
        """
        points = np.atleast_2d(points)
        positions, velocities = embed_states(points, self._frame)
        line_of_sight = self._sat_positions[None, :, :] - positions[:, None, :]
        distances = np.linalg.norm(line_of_sight, axis=2)
        ranges = distances + points[:, [StateIndex.B]] - self._clock_corrections[None, :]
        if self._settings.model_tropo:
            sines = np.einsum('nkj,nj->nk', line_of_sight, positions) \
                / (distances * np.linalg.norm(positions, axis=1)[:, None])
            ranges = ranges + tropo_delays(np.arcsin(np.clip(sines, -1.0, 1.0)),
                                           points[:, [StateIndex.H]])
        if not self._with_rates:
            return ranges
        relative = self._sat_velocities[None, :, :] - velocities[:, None, :]
        rates = np.einsum('nkj,nkj->nk', line_of_sight, relative) / distances \
            + points[:, [StateIndex.B_DOT]]
        return np.hstack([ranges, rates])

    def predict(self, state: np.ndarray) -> np.ndarray:
        """
        Predicted observables of a state.

        Args:
            state (numpy.ndarray): State

        Returns:
            numpy.ndarray: Prediction
        """
        return self.predict_points(np.asarray(state, dtype=float)[None, :])[0]

    def jacobian(self, state: np.ndarray) -> np.ndarray:
        """
        Analytic measurement Jacobian, the tropospheric term is neglected.

        Args:
            state (numpy.ndarray): State

        Returns:
            numpy.ndarray: Matrix of shape (m, 8)
        """
        state = np.asarray(state, dtype=float)
        position, velocity = embed_states(state, self._frame)
        d_position, d_velocity = embedding_jacobian(state, self._frame)
        line_of_sight = self._sat_positions - position
        distances = np.linalg.norm(line_of_sight, axis=1)
        units = line_of_sight / distances[:, None]

        range_rows = -units @ d_position
        range_rows[:, StateIndex.B] = 1.0
        if not self._with_rates:
            return range_rows
        relative = self._sat_velocities - velocity
        along = np.sum(units * relative, axis=1)
        d_rate_d_position = -(relative - along[:, None] * units) / distances[:, None]
        rate_rows = d_rate_d_position @ d_position - units @ d_velocity
        rate_rows[:, StateIndex.B_DOT] = 1.0
        return np.vstack([range_rows, rate_rows])


def _symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def lower_cholesky(matrix: np.ndarray) -> np.ndarray:
    """
    Lower Cholesky factor naming the failing leading minor.

    Args:
        matrix (numpy.ndarray): Symmetric matrix

    Returns:
        numpy.ndarray: Lower triangular factor

    Raises:
        CovarianceNotPositiveDefiniteError: In case the matrix is not positive definite
    """
    try:
        return linalg.cholesky(matrix, lower=True)
    except (linalg.LinAlgError, ValueError):
        for order in range(1, matrix.shape[0] + 1):
            try:
                linalg.cholesky(matrix[:order, :order], lower=True)
            except (linalg.LinAlgError, ValueError):
                raise CovarianceNotPositiveDefiniteError(order) from None
        raise CovarianceNotPositiveDefiniteError(matrix.shape[0]) from None


def repair_covariance(belief: GaussianBelief) -> GaussianBelief:
    """
    Symmetrize a covariance and add diagonal jitter once if it is not positive definite.

    Args:
        belief (GaussianBelief): Belief

    Returns:
        GaussianBelief: Belief with a positive definite covariance

    Raises:
        FilterDivergenceError: In case the jittered covariance is still indefinite
    """
    covariance = _symmetrize(belief.covariance)
    try:
        lower_cholesky(covariance)
        return GaussianBelief(belief.mean, covariance, belief.t)
    except CovarianceNotPositiveDefiniteError as error:
        logging.warning('Covariance repaired at t=%.3f s: %s', belief.t, error)
    jitter = REPAIR_JITTER * max(float(np.trace(covariance)), 0.0) / belief.dim
    covariance = covariance + jitter * np.eye(belief.dim)
    try:
        lower_cholesky(covariance)
    except CovarianceNotPositiveDefiniteError as error:
        raise FilterDivergenceError(f'Covariance stays indefinite at t={belief.t:.3f} s: '
                                    f'{error}') from error
    return GaussianBelief(belief.mean, covariance, belief.t)


def generate_sigma_points(belief: GaussianBelief, params: UnscentedParams) -> SigmaPointSet:
    """
    Scaled unscented transform sigma points.

    Args:
        belief (GaussianBelief): Belief
        params (UnscentedParams): Scaling parameters

    Returns:
        SigmaPointSet: 2n+1 points with weights
    """
    n = belief.dim
    wm, wc = params.weights(n)
    factor = lower_cholesky((n + params.lambda_(n)) * belief.covariance)
    offsets = np.vstack([np.zeros(n), factor.T, -factor.T])
    return SigmaPointSet(belief.mean.copy(), offsets, wm, wc)


def unscented_moments(points: np.ndarray, wm: np.ndarray,
                      wc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Weighted mean and covariance of transformed sigma points.

    The mean is accumulated relative to the first point.

    Args:
        points (numpy.ndarray): Transformed points of shape (2n+1, m)
        wm (numpy.ndarray): Mean weights
        wc (numpy.ndarray): Covariance weights

    Returns:
        tuple[numpy.ndarray, numpy.ndarray]: Mean and covariance
    """
    anchor = points[0]
    mean = anchor + wm @ (points - anchor)
    spread = points - mean
    return mean, _symmetrize((spread * wc[:, None]).T @ spread)


def _recombine(center: np.ndarray, deviations: np.ndarray, wm: np.ndarray, wc: np.ndarray,
               process_noise: np.ndarray, t: float) -> GaussianBelief:
    shift = wm @ deviations
    spread = deviations - shift
    covariance = (spread * wc[:, None]).T @ spread + process_noise
    return GaussianBelief(center + shift, _symmetrize(covariance), t)


def ekf_predict(belief: GaussianBelief, dt: float, dynamics: DynamicsModelLike,
                process_noise: np.ndarray) -> GaussianBelief:
    """
    Linearized covariance propagation around a propagated mean.

    Args:
        belief (GaussianBelief): Belief at t
        dt (float): Step length, s
        dynamics (DynamicsModelLike): System model
        process_noise (numpy.ndarray): Process noise covariance Q

    Returns:
        GaussianBelief: Belief at t + dt
    """
    mean = dynamics.propagate(belief.mean, belief.t, dt)
    transition = state_transition_matrix(dynamics.jacobian(belief.mean, belief.t), dt)
    covariance = transition @ belief.covariance @ transition.T + process_noise
    return GaussianBelief(mean, _symmetrize(covariance), belief.t + dt)


def kalman_update(belief: GaussianBelief,
                  model: MeasurementModelLike) -> tuple[GaussianBelief, np.ndarray]:
    """
    Linearized correction with the Joseph form covariance update.

    Args:
        belief (GaussianBelief): Predicted belief
        model (MeasurementModelLike): Measurement model

    Returns:
        tuple[GaussianBelief, numpy.ndarray]: Corrected belief and innovation

    Raises:
        InnovationSingularError: In case the innovation covariance is not invertible
    """
    H = model.jacobian(belief.mean)
    innovation = model.observed - model.predict(belief.mean)
    P = belief.covariance
    S = H @ P @ H.T + model.noise_covariance
    try:
        gain = linalg.cho_solve(linalg.cho_factor(_symmetrize(S), lower=True), H @ P).T
    except (linalg.LinAlgError, ValueError) as error:
        raise InnovationSingularError(f'innovation covariance is singular at '
                                      f't={belief.t:.3f} s') from error
    residual = np.eye(belief.dim) - gain @ H
    covariance = residual @ P @ residual.T + gain @ model.noise_covariance @ gain.T
    return GaussianBelief(belief.mean + gain @ innovation, _symmetrize(covariance),
                          belief.t), innovation


def ukf_update(belief: GaussianBelief, model: MeasurementModelLike,
               params: UnscentedParams) -> tuple[GaussianBelief, np.ndarray]:
    """
    Unscented correction from sigma points of the predicted belief.

    Args:
        belief (GaussianBelief): Predicted belief
        model (MeasurementModelLike): Measurement model
        params (UnscentedParams): Scaling parameters

    Returns:
        tuple[GaussianBelief, numpy.ndarray]: Corrected belief and innovation

    Raises:
        InnovationSingularError: In case the innovation covariance is not invertible
    """
    sigma = generate_sigma_points(belief, params)
    predicted = model.predict_points(sigma.points)
    z_mean, S = unscented_moments(predicted, sigma.wm, sigma.wc)
    S = S + model.noise_covariance
    cross = (sigma.offsets * sigma.wc[:, None]).T @ (predicted - z_mean)
    try:
        gain = linalg.cho_solve(linalg.cho_factor(S, lower=True), cross.T).T
    except (linalg.LinAlgError, ValueError) as error:
        raise InnovationSingularError(f'innovation covariance is singular at '
                                      f't={belief.t:.3f} s') from error
    innovation = model.observed - z_mean
    covariance = belief.covariance - gain @ S @ gain.T
    return GaussianBelief(belief.mean + gain @ innovation, _symmetrize(covariance),
                          belief.t), innovation


def ukf_predict(belief: GaussianBelief, dt: float, dynamics: DynamicsModelLike,
                process_noise: np.ndarray, params: UnscentedParams) -> GaussianBelief:
    """
    Full propagation of every sigma point.

    Args:
        belief (GaussianBelief): Belief at t
        dt (float): Step length, s
        dynamics (DynamicsModelLike): System model
        process_noise (numpy.ndarray): Process noise covariance Q
        params (UnscentedParams): Scaling parameters

    Returns:
        GaussianBelief: Belief at t + dt

    Raises:
        SigmaPointPropagationError: In case a sigma point cannot be propagated
    """
    sigma = generate_sigma_points(belief, params)
    propagated = []
    for index, point in enumerate(sigma.points):
        try:
            propagated.append(dynamics.propagate(point, belief.t, dt))
        except DynamicsError as error:
            raise SigmaPointPropagationError(index, str(error)) from error
    propagated = np.array(propagated)
    return _recombine(propagated[0], propagated - propagated[0], sigma.wm, sigma.wc,
                      process_noise, belief.t + dt)


def _propagate_mean(belief: GaussianBelief, dt: float, dynamics: DynamicsModelLike,
                    midpoint: bool = False) -> tuple[np.ndarray, np.ndarray | None]:
    try:
        if midpoint:
            return dynamics.propagate_with_midpoint(belief.mean, belief.t, dt)
        return dynamics.propagate(belief.mean, belief.t, dt), None
    except DynamicsError as error:
        raise SigmaPointPropagationError(0, str(error)) from error


def first_order_map(mean: np.ndarray, t: float, dt: float,
                    dynamics: DynamicsModelLike) -> tuple[np.ndarray, np.ndarray]:
    """
    Propagated mean and the transition matrix mapping deviations from it.

    Args:
        mean (numpy.ndarray): Mean at t
        t (float): Epoch, s
        dt (float): Step length, s
        dynamics (DynamicsModelLike): System model

    Returns:
        tuple[numpy.ndarray, numpy.ndarray]: Mean at t + dt and exp(J(mean, t) dt)
    """
    belief = GaussianBelief(mean, np.zeros((len(mean), len(mean))), t)
    propagated, _ = _propagate_mean(belief, dt, dynamics)
    return propagated, state_transition_matrix(dynamics.jacobian(mean, t), dt)


def extrapolated_map(mean: np.ndarray, t: float, dt: float,
                     dynamics: DynamicsModelLike) -> tuple[np.ndarray, np.ndarray]:
    """
    Propagated mean and the Richardson-extrapolated deviation map.

    The full-step map exp(J(mean, t) dt) and the composition of two half-step maps, the
    second evaluated at the mid-step mean, are combined as twice the half-step product
    minus the full step, cancelling the second-order error term.

    Args:
        mean (numpy.ndarray): Mean at t
        t (float): Epoch, s
        dt (float): Step length, s
        dynamics (DynamicsModelLike): System model

    Returns:
        tuple[numpy.ndarray, numpy.ndarray]: Mean at t + dt and the deviation map
    """
    belief = GaussianBelief(mean, np.zeros((len(mean), len(mean))), t)
    propagated, middle = _propagate_mean(belief, dt, dynamics, midpoint=True)
    start_jacobian = dynamics.jacobian(mean, t)
    middle_jacobian = dynamics.jacobian(middle, t + 0.5 * dt)
    full = state_transition_matrix(start_jacobian, dt)
    first_half = state_transition_matrix(start_jacobian, 0.5 * dt)
    second_half = state_transition_matrix(middle_jacobian, 0.5 * dt)
    return propagated, 2.0 * second_half @ first_half - full


def _mapped_predict(belief: GaussianBelief, dt: float, dynamics: DynamicsModelLike,
                    process_noise: np.ndarray, params: UnscentedParams,
                    deviation_map: Callable) -> GaussianBelief:
    sigma = generate_sigma_points(belief, params)
    propagated, transition = deviation_map(sigma.center, belief.t, dt, dynamics)
    return _recombine(propagated, sigma.offsets @ transition.T, sigma.wm, sigma.wc,
                      process_noise, belief.t + dt)


def spukf_predict(belief: GaussianBelief, dt: float, dynamics: DynamicsModelLike,
                  process_noise: np.ndarray, params: UnscentedParams) -> GaussianBelief:
    """
    Single propagation of the mean, sigma points mapped by the first-order transition matrix.

    Args:
        belief (GaussianBelief): Belief at t
        dt (float): Step length, s
        dynamics (DynamicsModelLike): System model
        process_noise (numpy.ndarray): Process noise covariance Q
        params (UnscentedParams): Scaling parameters

    Returns:
        GaussianBelief: Belief at t + dt
    """
    return _mapped_predict(belief, dt, dynamics, process_noise, params, first_order_map)


def espukf_predict(belief: GaussianBelief, dt: float, dynamics: DynamicsModelLike,
                   process_noise: np.ndarray, params: UnscentedParams) -> GaussianBelief:
    """
    Single propagation of the mean, sigma points mapped by the extrapolated transition.

    Args:
        belief (GaussianBelief): Belief at t
        dt (float): Step length, s
        dynamics (DynamicsModelLike): System model
        process_noise (numpy.ndarray): Process noise covariance Q
        params (UnscentedParams): Scaling parameters

    Returns:
        GaussianBelief: Belief at t + dt
    """
    return _mapped_predict(belief, dt, dynamics, process_noise, params, extrapolated_map)


def deviation_map_errors(mean: np.ndarray, offsets: np.ndarray, t: float, dt: float,
                         dynamics: DynamicsModelLike, kind: FilterKind,
                         epsilon: float = 1e-2,
                         components: Sequence[int] = TRAJECTORY_COMPONENTS) -> np.ndarray:
    """
    Error of mapped sigma-point deviations against the linearized full propagation.

    The reference deviation of every offset is a central difference of full propagations
    along that offset, scaled by epsilon.

    Args:
        mean (numpy.ndarray): Mean at t
        offsets (numpy.ndarray): Deviations from the mean of shape (N, 8)
        t (float): Epoch, s
        dt (float): Step length, s
        dynamics (DynamicsModelLike): System model
        kind (FilterKind): SPUKF or ESPUKF
        epsilon (float): Relative size of the difference step
        components (Sequence[int]): State components entering the error norm

    Returns:
        numpy.ndarray: Error norm of every offset

    Raises:
        ValueError: In case of a filter without a deviation map
    """
    maps = {FilterKind.SPUKF: first_order_map, FilterKind.ESPUKF: extrapolated_map}
    if kind not in maps:
        raise ValueError(f'{kind.label} has no deviation map')
    _, transition = maps[kind](mean, t, dt, dynamics)
    errors = []
    for offset in np.atleast_2d(offsets):
        forward = dynamics.propagate(mean + epsilon * offset, t, dt)
        backward = dynamics.propagate(mean - epsilon * offset, t, dt)
        reference = (forward - backward) / (2.0 * epsilon)
        errors.append(np.linalg.norm((transition @ offset - reference)[list(components)]))
    return np.array(errors)


class ExtendedKalmanFilter(AbstractNavigationFilter):
    """
    Extended Kalman filter.
    """

    kind = FilterKind.EKF

    def __init__(self, dynamics: DynamicsModelLike, process_noise: np.ndarray,
                 belief: GaussianBelief) -> None:
        """
        Initialize an instance of ExtendedKalmanFilter.

        Args:
            dynamics (DynamicsModelLike): System model
            process_noise (numpy.ndarray): Process noise covariance Q
            belief (GaussianBelief): Initial belief
        """
        super().__init__(dynamics, process_noise)
        self._belief = belief

    @property
    def belief(self) -> GaussianBelief:
        """
        Property for the current belief.

        Returns:
            GaussianBelief: Current mean and covariance
        """
        return self._belief

    def predict(self, dt: float) -> None:
        """
        Propagate the belief to the next epoch.

        Args:
            dt (float): Step length, s
        """
        self._belief = ekf_predict(self._belief, dt, self._dynamics, self._process_noise)

    def update(self, model: MeasurementModelLike) -> np.ndarray:
        """
        Correct the belief with a measurement.

        Args:
            model (MeasurementModelLike): Measurement model

        Returns:
            numpy.ndarray: Innovation vector
        """
        belief, innovation = kalman_update(self._belief, model)
        self._belief = repair_covariance(belief)
        return innovation


class UnscentedKalmanFilter(ExtendedKalmanFilter):
    """
    Unscented Kalman filter propagating every sigma point.
    """

    kind = FilterKind.UKF

    def __init__(self, dynamics: DynamicsModelLike, process_noise: np.ndarray,
                 belief: GaussianBelief, params: UnscentedParams) -> None:
        """
        Initialize an instance of UnscentedKalmanFilter.

        Args:
            dynamics (DynamicsModelLike): System model
            process_noise (numpy.ndarray): Process noise covariance Q
            belief (GaussianBelief): Initial belief
            params (UnscentedParams): Scaling parameters
        """
        super().__init__(dynamics, process_noise, belief)
        self._params = params

    def _predict_from(self, belief: GaussianBelief, dt: float) -> GaussianBelief:
        return ukf_predict(belief, dt, self._dynamics, self._process_noise, self._params)

    def predict(self, dt: float) -> None:
        """
        Propagate the belief to the next epoch.

        Args:
            dt (float): Step length, s
        """
        try:
            self._belief = self._predict_from(self._belief, dt)
        except CovarianceNotPositiveDefiniteError:
            self._belief = self._predict_from(repair_covariance(self._belief), dt)

    def update(self, model: MeasurementModelLike) -> np.ndarray:
        """
        Correct the belief with a measurement.

        Args:
            model (MeasurementModelLike): Measurement model

        Returns:
            numpy.ndarray: Innovation vector
        """
        try:
            belief, innovation = ukf_update(self._belief, model, self._params)
        except CovarianceNotPositiveDefiniteError:
            belief, innovation = ukf_update(repair_covariance(self._belief), model, self._params)
        self._belief = repair_covariance(belief)
        return innovation


class SinglePropagationUnscentedKalmanFilter(UnscentedKalmanFilter):
    """
    Unscented Kalman filter propagating the mean only.
    """

    kind = FilterKind.SPUKF

    def _predict_from(self, belief: GaussianBelief, dt: float) -> GaussianBelief:
        return spukf_predict(belief, dt, self._dynamics, self._process_noise, self._params)


class ExtrapolatedSinglePropagationUnscentedKalmanFilter(UnscentedKalmanFilter):
    """
    Single propagation unscented Kalman filter with Richardson-extrapolated sigma points.
    """

    kind = FilterKind.ESPUKF

    def _predict_from(self, belief: GaussianBelief, dt: float) -> GaussianBelief:
        return espukf_predict(belief, dt, self._dynamics, self._process_noise, self._params)


def build_filter(kind: FilterKind, dynamics: DynamicsModelLike, process_noise: np.ndarray,
                 belief: GaussianBelief,
                 params: UnscentedParams | None = None) -> ExtendedKalmanFilter:
    """
    Instantiate a filter of the given kind.

    Args:
        kind (FilterKind): Filter kind
        dynamics (DynamicsModelLike): System model
        process_noise (numpy.ndarray): Process noise covariance Q
        belief (GaussianBelief): Initial belief
        params (UnscentedParams | None): Scaling parameters of the unscented filters

    Returns:
        ExtendedKalmanFilter: Filter
    """
    if kind is FilterKind.EKF:
        return ExtendedKalmanFilter(dynamics, process_noise, belief)
    filters = {
        FilterKind.UKF: UnscentedKalmanFilter,
        FilterKind.SPUKF: SinglePropagationUnscentedKalmanFilter,
        FilterKind.ESPUKF: ExtrapolatedSinglePropagationUnscentedKalmanFilter,
    }
    return filters[kind](dynamics, process_noise, belief, params or UnscentedParams())


def trajectory_errors(estimate: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    """
    Position error in the down-range/altitude plane and planar velocity error.

    Args:
        estimate (numpy.ndarray): Estimated state
        truth (numpy.ndarray): True state

    Returns:
        tuple[float, float]: Position error (m) and velocity error (m/s)
    """
    position = math.hypot(estimate[StateIndex.X] - truth[StateIndex.X],
                          estimate[StateIndex.H] - truth[StateIndex.H])

    def planar(state: np.ndarray) -> np.ndarray:
        return state[StateIndex.V] * np.array([math.cos(state[StateIndex.GAMMA]),
                                               math.sin(state[StateIndex.GAMMA])])

    return position, float(np.linalg.norm(planar(estimate) - planar(truth)))


@dataclasses.dataclass
class FilterRun:
    """
    Per-epoch history of one filter over one observation stream.
    """

    kind: FilterKind
    times: list[float] = dataclasses.field(default_factory=list)
    means: list[np.ndarray] = dataclasses.field(default_factory=list)
    cov_traces: list[float] = dataclasses.field(default_factory=list)
    state_errors: list[np.ndarray] = dataclasses.field(default_factory=list)
    position_errors: list[float] = dataclasses.field(default_factory=list)
    velocity_errors: list[float] = dataclasses.field(default_factory=list)
    innovations: list[np.ndarray | None] = dataclasses.field(default_factory=list)
    timings: list[FilterStepTiming] = dataclasses.field(default_factory=list)
    diverged_at: float | None = None
    propagations: int = 0

    @property
    def diverged(self) -> bool:
        """
        Whether the run stopped on a filter failure.

        Returns:
            bool: Divergence flag
        """
        return self.diverged_at is not None

    def record(self, belief: GaussianBelief, truth: np.ndarray | None,
               innovation: np.ndarray | None, timing: FilterStepTiming) -> None:
        """
        Append an epoch.

        Args:
            belief (GaussianBelief): Belief after the epoch
            truth (numpy.ndarray | None): True state at the epoch
            innovation (numpy.ndarray | None): Innovation of the epoch update
            timing (FilterStepTiming): Step durations
        """
        self.times.append(belief.t)
        self.means.append(belief.mean.copy())
        self.cov_traces.append(float(np.trace(belief.covariance)))
        self.innovations.append(innovation)
        self.timings.append(timing)
        if truth is None:
            self.state_errors.append(np.full(belief.dim, math.nan))
            self.position_errors.append(math.nan)
            self.velocity_errors.append(math.nan)
            return
        self.state_errors.append(belief.mean - truth)
        position, velocity = trajectory_errors(belief.mean, truth)
        self.position_errors.append(position)
        self.velocity_errors.append(velocity)

    @property
    def mean_position_error(self) -> float:
        """
        Time-averaged position error over the filtered epochs.

        Returns:
            float: Error, m
        """
        values = self.position_errors[1:] or self.position_errors
        return float(np.mean(values)) if values else math.nan

    @property
    def mean_velocity_error(self) -> float:
        """
        Time-averaged velocity error over the filtered epochs.

        Returns:
            float: Error, m/s
        """
        values = self.velocity_errors[1:] or self.velocity_errors
        return float(np.mean(values)) if values else math.nan

    @property
    def mean_step_ms(self) -> float:
        """
        Average predict plus update duration.

        Returns:
            float: Duration, ms
        """
        steps = [timing.total_ms for timing in self.timings[1:]]
        return float(np.mean(steps)) if steps else math.nan

    def to_frame(self) -> pd.DataFrame:
        """
        Per-epoch table.

        Returns:
            pandas.DataFrame: One row per epoch
        """
        errors = np.array(self.state_errors).reshape(len(self.times), -1)
        return pd.DataFrame({
            'epoch_s': self.times,
            'filter': str(self.kind),
            'err_downrange_m': errors[:, StateIndex.X],
            'err_altitude_m': errors[:, StateIndex.H],
            'err_speed_mps': errors[:, StateIndex.V],
            'err_gamma_rad': errors[:, StateIndex.GAMMA],
            'pos_err_m': self.position_errors,
            'vel_err_mps': self.velocity_errors,
            'cov_trace': self.cov_traces,
            'predict_ms': [1e3 * timing.predict for timing in self.timings],
            'update_ms': [1e3 * timing.update for timing in self.timings],
            'diverged_flag': [self.diverged_at is not None and time >= self.diverged_at
                              for time in self.times],
        })

    def export(self, path: Path) -> None:
        """
        Save the per-epoch table as CSV.

        Args:
            path (Path): Destination file
        """
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format='%.9g')


def run_filter(kind: FilterKind, init: GaussianBelief, stream: Iterable[GnssObservation],
               dynamics: DynamicsModelLike, process_noise: np.ndarray, frame: LaunchSiteFrame,
               settings: MeasurementSettings, params: UnscentedParams | None = None,
               truth: Callable[[float], np.ndarray] | None = None) -> FilterRun:
    """
    Alternate predict and update over an observation stream.

    A filter failure ends the run, which keeps the epochs processed so far and is marked
    diverged at the failing epoch.

    Args:
        kind (FilterKind): Filter kind
        init (GaussianBelief): Initial belief
        stream (Iterable[GnssObservation]): Observations in epoch order
        dynamics (DynamicsModelLike): System model
        process_noise (numpy.ndarray): Process noise covariance Q
        frame (LaunchSiteFrame): Embedding frame
        settings (MeasurementSettings): Measurement settings
        params (UnscentedParams | None): Scaling parameters of the unscented filters
        truth (Callable[[float], numpy.ndarray] | None): True state by epoch

    Returns:
        FilterRun: Filter history

    Raises:
        ValueError: In case of observations out of epoch order
    """
    nav_filter = build_filter(kind, dynamics, process_noise, init, params)
    run = FilterRun(kind)
    counted = getattr(dynamics, 'propagation_count', 0)
    run.record(init, truth(init.t) if truth else None, None, FilterStepTiming(0.0, 0.0))
    for observation in stream:
        dt = observation.t - nav_filter.belief.t
        if dt < -1e-9:
            raise ValueError(f'observation at t={observation.t} s precedes '
                             f't={nav_filter.belief.t} s')
        model = GnssMeasurementModel.from_observation(observation, frame, settings) \
            if observation.channels else None
        try:
            predict_s, update_s = nav_filter.step(dt, model)
        except (EstimationError, DynamicsError) as error:
            logging.warning('%s diverged at t=%.1f s: %s', kind.label, observation.t, error)
            run.diverged_at = observation.t
            break
        run.record(nav_filter.belief, truth(observation.t) if truth else None,
                   nav_filter.innovation, FilterStepTiming(predict_s, update_s))
    run.propagations = getattr(dynamics, 'propagation_count', 0) - counted
    return run
