"""
Module with description of abstract trajectory source.
"""

from abc import ABC, abstractmethod
from typing import Any


class AbstractTrajectorySource(ABC):
    """
    Abstract Trajectory Source.
    """

    #: A generated reference trajectory
    _truth: Any | None

    def __init__(self) -> None:
        """
        Initialize an instance of AbstractTrajectorySource.
        """
        self._truth = None

    @abstractmethod
    def obtain(self) -> None:
        """
        Generate the reference trajectory.
        """

    @property
    def truth(self) -> Any | None:
        """
        Property for the reference trajectory.

        Returns:
            Any | None: Time-indexed reference trajectory
        """
        return self._truth
