"""
Module with description of abstract navigation filter.
"""

# pylint: disable=too-few-public-methods
import time
from abc import ABC, abstractmethod
from typing import Any, Protocol

import numpy as np


class DynamicsModelLike(Protocol):
    """
    Protocol definition of system models consumed by the filters.
    """

    def propagate(self, state: np.ndarray, t0: float, dt: float) -> np.ndarray:
        """
        Propagate a single state over a time step.

        Args:
            state (numpy.ndarray): State at t0
            t0 (float): Start epoch, s
            dt (float): Step length, s

        Returns:
            numpy.ndarray: State at t0 + dt
        """

    def propagate_with_midpoint(self, state: np.ndarray, t0: float,
                                dt: float) -> tuple[np.ndarray, np.ndarray]:
        """
        Propagate a single state and record it at the middle of the step.

        Args:
            state (numpy.ndarray): State at t0
            t0 (float): Start epoch, s
            dt (float): Step length, s

        Returns:
            tuple[numpy.ndarray, numpy.ndarray]: States at t0 + dt and t0 + dt/2
        """

    def jacobian(self, state: np.ndarray, t: float) -> np.ndarray:
        """
        Evaluate the system Jacobian.

        Args:
            state (numpy.ndarray): State
            t (float): Epoch, s

        Returns:
            numpy.ndarray: Square matrix of partial derivatives
        """


class MeasurementModelLike(Protocol):
    """
    Protocol definition of measurement models consumed by the filters.
    """

    #: Observed measurement vector
    observed: np.ndarray

    #: Measurement noise covariance
    noise_covariance: np.ndarray

    def predict(self, state: np.ndarray) -> np.ndarray:
        """
        Predict observables for a single state.

        Args:
            state (numpy.ndarray): State

        Returns:
            numpy.ndarray: Predicted observables
        """

    def predict_points(self, points: np.ndarray) -> np.ndarray:
        """
        Predict observables for a stack of states.

        Args:
            points (numpy.ndarray): States, one per row

        Returns:
            numpy.ndarray: Predicted observables, one row per state
        """

    def jacobian(self, state: np.ndarray) -> np.ndarray:
        """
        Evaluate the measurement Jacobian.

        Args:
            state (numpy.ndarray): State

        Returns:
            numpy.ndarray: Matrix of partial derivatives
        """


class AbstractNavigationFilter(ABC):
    """
    Abstract Navigation Filter.
    """

    def __init__(self, dynamics: DynamicsModelLike, process_noise: np.ndarray) -> None:
        """
        Initialize an instance of AbstractNavigationFilter.

        Args:
            dynamics (DynamicsModelLike): System model
            process_noise (numpy.ndarray): Process noise covariance Q
        """
        self._dynamics = dynamics
        self._process_noise = process_noise
        self._innovation: np.ndarray | None = None

    @property
    def innovation(self) -> np.ndarray | None:
        """
        Property for the innovation of the latest update.

        Returns:
            numpy.ndarray | None: Innovation vector, None before the first update
        """
        return self._innovation

    @property
    @abstractmethod
    def belief(self) -> Any:
        """
        Property for the current belief.

        Returns:
            Any: Current mean and covariance
        """

    @abstractmethod
    def predict(self, dt: float) -> None:
        """
        Propagate the belief to the next epoch.

        Args:
            dt (float): Step length, s
        """

    @abstractmethod
    def update(self, model: MeasurementModelLike) -> np.ndarray:
        """
        Correct the belief with a measurement.

        Args:
            model (MeasurementModelLike): Measurement model carrying observed values

        Returns:
            numpy.ndarray: Innovation vector
        """

    def step(self, dt: float, model: MeasurementModelLike | None) -> tuple[float, float]:
        """
        Run one predict/update cycle and time both stages.

        Args:
            dt (float): Step length, s
            model (MeasurementModelLike | None): Measurement model, None skips the update

        Returns:
            tuple[float, float]: Predict and update durations, s
        """
        start = time.perf_counter()
        if dt > 0:
            self.predict(dt)
        predicted = time.perf_counter()
        self._innovation = None
        if model is not None:
            self._innovation = self.update(model)
        return predicted - start, time.perf_counter() - predicted
