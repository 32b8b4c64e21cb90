"""
Module with description of abstract campaign evaluator.
"""

# pylint: disable=too-few-public-methods
from abc import ABC, abstractmethod
from typing import Iterable

from core_utils.nav.filter_kind import FilterKind


class AbstractCampaignEvaluator(ABC):
    """
    Abstract Campaign Evaluator.
    """

    def __init__(self, filters: Iterable[FilterKind]) -> None:
        """
        Initialize an instance of AbstractCampaignEvaluator.

        Args:
            filters (Iterable[FilterKind]): Filters to summarize
        """
        self._filters = tuple(filters)

    @abstractmethod
    def run(self) -> object:
        """
        Aggregate per-run results into a summary.

        Returns:
            object: Summary of the campaign
        """
