"""
Helper for reference results.
"""

# pylint: disable=too-few-public-methods
from enum import Enum
from pathlib import Path

import simplejson as json

from core_utils.nav.filter_kind import FilterKind


class ReferenceMetric(Enum):
    """
    Published per-filter metrics.
    """

    POSITION_ERROR = 'position_error_m'
    PROCESSING_TIME = 'processing_time_ms'


class ReferenceScores:
    """
    Manager of reference scores.
    """

    def __init__(self, config_path: Path | None = None) -> None:
        """
        Initialize ReferenceScores.

        Args:
            config_path (Path | None): Path to reference scores, the bundled file by default
        """
        config_path = config_path or Path(__file__).parent / 'reference_scores.json'

        with config_path.open(encoding='utf-8') as config_file:
            self._dto = json.load(config_file)

    @property
    def channel_counts(self) -> list[int]:
        """
        Channel counts with published results.

        Returns:
            list[int]: Sorted channel counts
        """
        return sorted(int(channels) for channels in self._dto)

    def get(self, channels: int, kind: FilterKind, metric: ReferenceMetric) -> float:
        """
        Get reference result.

        Args:
            channels (int): Channel count
            kind (FilterKind): Filter
            metric (ReferenceMetric): Metric

        Returns:
            float: Reference result
        """
        return float(self._dto[str(channels)][kind.value][metric.value])
