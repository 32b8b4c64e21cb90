"""
Module with description of abstract observation processor.
"""

from abc import ABC, abstractmethod
from typing import Any


class AbstractObservationProcessor(ABC):
    """
    Abstract Observation Processor.
    """

    #: Processed observation stream
    _data: list | None

    def __init__(self, truth: Any) -> None:
        """
        Initialize an instance of AbstractObservationProcessor.

        Args:
            truth (Any): Reference trajectory the observables are synthesized on
        """
        self._truth = truth
        self._data = None

    @abstractmethod
    def analyze(self) -> dict:
        """
        Analyze an observation stream.

        Returns:
            dict: Stream key properties
        """

    @abstractmethod
    def transform(self) -> None:
        """
        Synthesize and preprocess the observation stream.
        """

    @property
    def data(self) -> list | None:
        """
        Property for the processed observation stream.

        Returns:
            list | None: Observations in epoch order
        """
        return self._data
