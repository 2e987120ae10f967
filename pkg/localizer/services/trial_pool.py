"""
Thread pool for Monte-Carlo trials
Runs independent trials concurrently and returns results in submission order
"""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, TypeVar

from config import settings
from exceptions import CampaignCancelledError

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


class TrialStatus(Enum):
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"
    CANCELLED = "cancelled"


@dataclass
class PoolProgress:
    """Progress information for a batch of trials"""
    label: str = ""
    processed: int = 0
    failed: int = 0
    total: int = 0
    percentage: float = 0.0
    details: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.recompute()

    def recompute(self) -> None:
        if self.total > 0:
            self.percentage = (self.processed / self.total) * 100

    def to_dict(self) -> Dict[str, Any]:
        return {
            'label': self.label,
            'processed': self.processed,
            'failed': self.failed,
            'total': self.total,
            'percentage': self.percentage,
            'details': dict(self.details),
        }


class TrialPool:
    """
    Thread-safe executor for independent trials.

    numpy releases the GIL inside LAPACK calls, so threads give real overlap
    for the dense factorizations each trial performs.
    """

    def __init__(self, max_workers: Optional[int] = None):
        self.max_workers = max_workers or settings.campaign.max_workers
        self.status = TrialStatus.PENDING
        self.progress = PoolProgress()
        self._lock = threading.Lock()
        self._cancelled = threading.Event()
        logger.info(f"TrialPool initialized with max_workers={self.max_workers}")

    def cancel(self) -> None:
        """Request cancellation; trials not yet started are skipped."""
        self._cancelled.set()
        logger.info("Trial pool cancellation requested")

    @property
    def is_cancelled(self) -> bool:
        return self._cancelled.is_set()

    def _update(self, progress_callback: Optional[Callable[[PoolProgress], None]], failed: bool) -> None:
        with self._lock:
            self.progress.processed += 1
            if failed:
                self.progress.failed += 1
            self.progress.recompute()
            snapshot = replace(self.progress, details=dict(self.progress.details))
        if progress_callback:
            progress_callback(snapshot)

    def map(
        self,
        func: Callable[[T], R],
        items: Sequence[T],
        progress_callback: Optional[Callable[[PoolProgress], None]] = None,
        label: str = "trials",
    ) -> List[R]:
        """
        Apply func to every item concurrently.

        Args:
            func: Worker; must not share mutable state between calls
            items: Work items
            progress_callback: Called with a progress snapshot after each item
            label: Name used in progress and logs

        Returns:
            Results in the order of `items`

        Raises:
            CampaignCancelledError: if cancel() was called before completion
            Exception: the first failure in item order, after all items finish
        """
        items = list(items)
        with self._lock:
            self.status = TrialStatus.RUNNING
            self.progress = PoolProgress(label=label, total=len(items))

        def run(item: T) -> R:
            if self._cancelled.is_set():
                raise CampaignCancelledError(label)
            return func(item)

        results: List[Any] = [None] * len(items)
        errors: Dict[int, BaseException] = {}

        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = {executor.submit(run, item): index for index, item in enumerate(items)}
            for future in as_completed(futures):
                index = futures[future]
                try:
                    results[index] = future.result()
                    self._update(progress_callback, failed=False)
                except CampaignCancelledError as e:
                    errors[index] = e
                except Exception as e:
                    logger.exception(f"{label} item {index} failed")
                    errors[index] = e
                    self._update(progress_callback, failed=True)

        if self._cancelled.is_set():
            self.status = TrialStatus.CANCELLED
            raise CampaignCancelledError(label)
        if errors:
            self.status = TrialStatus.FAILED
            raise errors[min(errors)]

        self.status = TrialStatus.COMPLETED
        logger.info(f"{label}: {len(items)} item(s) completed")
        return results
