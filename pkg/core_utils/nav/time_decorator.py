"""
Module with decorator for logging durations of simulation stages.
"""

import logging
import time
from functools import wraps
from typing import Callable, ParamSpec, TypeVar

logging.basicConfig(level=logging.INFO, format=' %(asctime)s - %(levelname)s - %(message)s')

_P = ParamSpec('_P')
_R = TypeVar('_R')


def report_time(fn_to_wrap: Callable[_P, _R]) -> Callable[_P, _R]:
    """
    Decorator for logging how long a simulation stage runs.

    A stage that raises is logged at warning level with the time spent before the failure.

    Args:
        fn_to_wrap (Callable): Stage to time

    Returns:
        Callable: Wrapped stage with the same signature
    """
    name = f'{fn_to_wrap.__module__}.{fn_to_wrap.__qualname__}'

    @wraps(fn_to_wrap)
    def _internal(*args: _P.args, **kwargs: _P.kwargs) -> _R:
        start = time.perf_counter()
        try:
            res = fn_to_wrap(*args, **kwargs)
        except Exception:
            logging.warning('%s failed after %2.3f sec', name, time.perf_counter() - start)
            raise
        logging.info('%s took %2.3f sec', name, time.perf_counter() - start)
        return res

    return _internal
