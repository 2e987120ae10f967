"""
Tests for services/trial_pool.py
"""

import threading
import time

import pytest

from exceptions import CampaignCancelledError
from services.trial_pool import PoolProgress, TrialPool, TrialStatus


@pytest.fixture
def pool():
    """Create a fresh TrialPool instance for testing."""
    return TrialPool(max_workers=3)


class TestPoolProgress:
    """Tests for PoolProgress dataclass."""

    def test_default_values(self):
        progress = PoolProgress()

        assert progress.processed == 0
        assert progress.total == 0
        assert progress.percentage == 0.0
        assert progress.details == {}

    def test_auto_percentage_calculation(self):
        """Test percentage is auto-calculated from processed/total."""
        assert PoolProgress(processed=5, total=10).percentage == 50.0

    def test_zero_total_no_division_error(self):
        assert PoolProgress(processed=5, total=0).percentage == 0.0

    def test_to_dict(self):
        data = PoolProgress(label="sweep", processed=1, total=4).to_dict()

        assert data["label"] == "sweep"
        assert data["percentage"] == 25.0


class TestTrialPool:
    """Tests for TrialPool."""

    def test_default_workers_from_settings(self):
        assert TrialPool().max_workers == 4

    def test_results_in_submission_order(self, pool):
        """Test slow early items do not reorder the results."""
        def work(i):
            time.sleep(0.01 * (5 - i))
            return i * i

        assert pool.map(work, range(6)) == [0, 1, 4, 9, 16, 25]
        assert pool.status == TrialStatus.COMPLETED

    def test_progress_callback(self, pool):
        seen = []
        lock = threading.Lock()

        def record(progress):
            with lock:
                seen.append(progress.processed)

        pool.map(lambda i: i, range(5), progress_callback=record, label="unit")

        assert sorted(seen) == [1, 2, 3, 4, 5]
        assert pool.progress.percentage == 100.0
        assert pool.progress.label == "unit"

    def test_first_failure_in_item_order(self, pool):
        def work(i):
            if i in (2, 4):
                raise ValueError(f"item {i}")
            return i

        with pytest.raises(ValueError, match="item 2"):
            pool.map(work, range(6))
        assert pool.status == TrialStatus.FAILED
        assert pool.progress.failed == 2
        assert pool.progress.processed == 6

    def test_cancel_before_start(self, pool):
        pool.cancel()

        with pytest.raises(CampaignCancelledError):
            pool.map(lambda i: i, range(3))
        assert pool.is_cancelled
        assert pool.status == TrialStatus.CANCELLED

    def test_empty_items(self, pool):
        assert pool.map(lambda i: i, []) == []
