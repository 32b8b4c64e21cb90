"""
Filter kinds and measurement modes.
"""

import enum


class FilterKind(enum.Enum):
    """
    Filter kinds enum.
    """

    EKF = 'ekf'
    UKF = 'ukf'
    SPUKF = 'spukf'
    ESPUKF = 'espukf'

    def __str__(self) -> str:
        """
        String representation of a filter kind.

        Returns:
             str: Name of a filter kind
        """
        return self.value

    @property
    def label(self) -> str:
        """
        Upper-case label used in reports.

        Returns:
            str: Label of a filter kind
        """
        return self.name


class MeasurementMode(enum.Enum):
    """
    Observables fed to the filters.
    """

    RANGE = 'range'
    RANGE_RATE = 'range-rate'

    def __str__(self) -> str:
        """
        String representation of a measurement mode.

        Returns:
             str: Name of a measurement mode
        """
        return self.value
