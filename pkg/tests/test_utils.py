import time

import numpy as np
import pytest

from ark_toolkit.utils import CATEGORIES, CategoryTimer, format_bytes, format_seconds, solution_checksum, timed


class TestCategoryTimer:
    """Test suite for exclusive category timing."""

    def test_nested_time_is_exclusive(self):
        """The outer category is paused while the inner one runs."""
        timer = CategoryTimer()
        with timer.total():
            with timer.category("advection"):
                time.sleep(0.01)
                with timer.category("linear solve"):
                    time.sleep(0.02)
        totals = timer.as_dict()
        assert totals["linear solve"] >= 0.02
        assert totals["advection"] >= 0.01
        assert totals["advection"] < totals["linear solve"]
        assert sum(totals.values()) == pytest.approx(timer.wall_time)

    def test_other_is_remainder(self):
        """Unattributed time is reported as other."""
        timer = CategoryTimer()
        with timer.total():
            time.sleep(0.01)
        assert timer.as_dict()["other"] >= 0.01
        assert set(timer.as_dict()) == set(CATEGORIES)

    def test_timed_without_timer(self):
        """timed() is a no-op without a timer."""
        with timed(None, "reaction"):
            pass
        timer = CategoryTimer()
        with timed(timer, "reaction"):
            pass
        assert timer.as_dict()["reaction"] >= 0.0


class TestHelpers:
    """Test suite for hashing and formatting helpers."""

    def test_checksum_is_stable(self):
        """Equal arrays hash equally regardless of dtype and layout."""
        values = np.arange(6.0).reshape(2, 3)
        assert solution_checksum(values) == solution_checksum(values.T.copy().T)
        assert solution_checksum(values) == solution_checksum(np.arange(6).reshape(2, 3))
        assert solution_checksum(values) != solution_checksum(values + 1e-12)
        assert len(solution_checksum(values, "md5")) == 32

    def test_checksum_unknown_algorithm(self):
        with pytest.raises(ValueError, match="Unsupported hash algorithm"):
            solution_checksum(np.zeros(2), "crc32")

    @pytest.mark.parametrize("count,expected", [
        (512, "512.0 B"),
        (2048, "2.0 KB"),
        (3 * 1024 ** 2, "3.0 MB"),
    ])
    def test_format_bytes(self, count, expected):
        assert format_bytes(count) == expected

    @pytest.mark.parametrize("seconds,expected", [
        (5e-6, "5.0 us"),
        (0.25, "250.0 ms"),
        (2.0, "2.00 s"),
    ])
    def test_format_seconds(self, seconds, expected):
        assert format_seconds(seconds) == expected
