"""
Utility Module Initialization and Shared Utilities

This module provides the small helpers shared by the screening and oracle
services: an order-preserving parallel map and a timing context manager.
"""

import time
import logging
from typing import Any, Callable, Iterable, List, Optional, TypeVar
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

from tqdm import tqdm

T = TypeVar('T')
R = TypeVar('R')


class Utilities:
    """
    Centralized utility class for common application-wide functions
    """

    def __init__(self):
        """
        Initialize utility services
        """
        self.logger = logging.getLogger(__name__)

    def map_ordered(
        self,
        func: Callable[[T], R],
        items: Iterable[T],
        max_workers: int = 1,
        progress: Optional[str] = None
    ) -> List[R]:
        """
        Apply a function to every item, possibly in parallel, keeping input order

        Exceptions raised by ``func`` propagate to the caller.

        :param func: Function to apply
        :param items: Inputs
        :param max_workers: Maximum number of concurrent workers
        :param progress: Progress bar label, or None for no bar
        :return: Results in input order
        """
        items = list(items)
        bar = tqdm(total=len(items), desc=progress, leave=False) if progress else None
        results: List[Any] = [None] * len(items)
        try:
            if max_workers <= 1 or len(items) <= 1:
                for position, item in enumerate(items):
                    results[position] = func(item)
                    if bar:
                        bar.update(1)
                return results

            with ThreadPoolExecutor(max_workers=max_workers) as executor:
                futures = {
                    executor.submit(func, item): position
                    for position, item in enumerate(items)
                }
                for future, position in futures.items():
                    results[position] = future.result()
                    if bar:
                        bar.update(1)
            return results
        finally:
            if bar:
                bar.close()

    @contextmanager
    def timer(self, label: str = "Operation"):
        """
        Context manager for timing code execution

        :param label: Label for the timed operation
        :yield: Mutable dict receiving ``elapsed`` seconds on exit
        """
        record = {'elapsed': 0.0}
        start_time = time.perf_counter()
        try:
            yield record
        finally:
            record['elapsed'] = time.perf_counter() - start_time
            self.logger.info(f"{label} took {record['elapsed']:.4f} seconds")


# Create a singleton instance
utils = Utilities()

# Export utility functions and class
__all__ = ['utils', 'Utilities']
