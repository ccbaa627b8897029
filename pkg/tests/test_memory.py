import threading

import numpy as np
import pytest

from ark_toolkit.errors import AccessViolation, ConcurrentWriteError, LengthMismatch, UseAfterRelease
from ark_toolkit.memory import MemoryArbiter, MemorySpace, ReleaseResponsibility


class TestMemoryArbiter:
    """Test suite for allocations, copies and the transfer ledger."""

    def test_alloc_release_balance(self):
        """Every arbiter-owned allocation is matched by one release."""
        arbiter = MemoryArbiter()
        blocks = [arbiter.alloc(MemorySpace.HOST, n) for n in (0, 1, 10)]
        blocks.append(arbiter.alloc(MemorySpace.DEVICE, 5))
        assert arbiter.alloc_count == 4
        assert arbiter.outstanding == 4
        assert len(arbiter.live_blocks(MemorySpace.DEVICE)) == 1

        for block in blocks:
            arbiter.release(block)
        assert arbiter.outstanding == 0
        assert arbiter.release_count == 4
        assert arbiter.live_blocks() == []

    def test_double_release_fails(self):
        """Releasing twice raises UseAfterRelease."""
        arbiter = MemoryArbiter()
        block = arbiter.alloc(MemorySpace.HOST, 3)
        arbiter.release(block)
        with pytest.raises(UseAfterRelease):
            arbiter.release(block)

    def test_copy_after_release_fails(self):
        """A released block cannot be copied from."""
        arbiter = MemoryArbiter()
        src = arbiter.alloc(MemorySpace.HOST, 3)
        dst = arbiter.alloc(MemorySpace.DEVICE, 3)
        arbiter.release(src)
        with pytest.raises(UseAfterRelease):
            arbiter.copy(dst, src)

    def test_host_to_device_copy_is_recorded(self):
        """Copying 1000 doubles host to device records one copy of 8000 bytes."""
        arbiter = MemoryArbiter()
        src = arbiter.alloc(MemorySpace.HOST, 1000)
        dst = arbiter.alloc(MemorySpace.DEVICE, 1000)
        arbiter.view(src, MemorySpace.HOST, writable=True)[:] = np.arange(1000.0)

        arbiter.copy(dst, src)

        stats = arbiter.stats()
        assert stats.copy_count(MemorySpace.HOST, MemorySpace.DEVICE) == 1
        assert stats.bytes_copied(MemorySpace.HOST, MemorySpace.DEVICE) == 8000
        assert stats.host_device_array_copies() == 1
        assert stats.scalar_transfer_count == 0
        np.testing.assert_array_equal(arbiter.view(dst, MemorySpace.DEVICE), np.arange(1000.0))

    def test_scalar_copies_counted_separately(self):
        """One-element copies count as scalar transfers, not array copies."""
        arbiter = MemoryArbiter()
        src = arbiter.alloc(MemorySpace.DEVICE, 1)
        dst = arbiter.alloc(MemorySpace.HOST, 1)
        arbiter.copy(dst, src)
        arbiter.copy(dst, src)
        stats = arbiter.stats()
        assert stats.scalar_transfer_count == 2
        assert stats.array_copies(MemorySpace.DEVICE, MemorySpace.HOST) == 0
        assert stats.copy_count(MemorySpace.DEVICE, MemorySpace.HOST) == 2

    def test_length_mismatch(self):
        """Copies between blocks of different length are rejected."""
        arbiter = MemoryArbiter()
        with pytest.raises(LengthMismatch):
            arbiter.copy(arbiter.alloc(MemorySpace.HOST, 4), arbiter.alloc(MemorySpace.DEVICE, 5))

    def test_width_mismatch(self):
        """Copies between blocks of different element width are rejected."""
        arbiter = MemoryArbiter()
        with pytest.raises(LengthMismatch):
            arbiter.copy(arbiter.alloc(MemorySpace.HOST, 4, elem_width=4), arbiter.alloc(MemorySpace.HOST, 4))

    @pytest.mark.parametrize("space,side,allowed", [
        (MemorySpace.HOST, MemorySpace.HOST, True),
        (MemorySpace.HOST, MemorySpace.DEVICE, False),
        (MemorySpace.DEVICE, MemorySpace.HOST, False),
        (MemorySpace.DEVICE, MemorySpace.DEVICE, True),
        (MemorySpace.UNIFIED, MemorySpace.HOST, True),
        (MemorySpace.UNIFIED, MemorySpace.DEVICE, True),
        (MemorySpace.PINNED, MemorySpace.HOST, True),
    ])
    def test_access_guard(self, space, side, allowed):
        """Views are only granted from the side the data is resident on."""
        arbiter = MemoryArbiter()
        block = arbiter.alloc(space, 2)
        if allowed:
            assert arbiter.view(block, side).shape == (2,)
        else:
            with pytest.raises(AccessViolation):
                arbiter.view(block, side)

    def test_read_only_view(self):
        """Views are read-only unless requested writable."""
        arbiter = MemoryArbiter()
        block = arbiter.alloc(MemorySpace.HOST, 2)
        with pytest.raises(ValueError):
            arbiter.view(block, MemorySpace.HOST)[0] = 1.0

    def test_wrap_external_detaches(self):
        """Wrapped buffers are detached on release and keep their contents."""
        arbiter = MemoryArbiter()
        buffer = np.array([1.0, 2.0, 3.0])
        block = arbiter.wrap_external(buffer, MemorySpace.HOST)
        assert block.release_responsibility is ReleaseResponsibility.EXTERNAL
        assert arbiter.alloc_count == 0

        arbiter.release(block)
        assert arbiter.release_count == 0
        np.testing.assert_array_equal(buffer, [1.0, 2.0, 3.0])

    def test_reset_stats_keeps_alloc_counters(self):
        """reset_stats clears the ledger but not the allocation counters."""
        arbiter = MemoryArbiter()
        src = arbiter.alloc(MemorySpace.HOST, 2)
        dst = arbiter.alloc(MemorySpace.DEVICE, 2)
        arbiter.copy(dst, src)
        arbiter.record_reduction()
        arbiter.reset_stats()
        stats = arbiter.stats()
        assert stats.total_copies == 0
        assert stats.reduction_count == 0
        assert arbiter.alloc_count == 2

    def test_concurrent_write_detected(self):
        """A copy into a block that is already being written raises in debug mode."""
        arbiter = MemoryArbiter(debug=True)
        src = arbiter.alloc(MemorySpace.HOST, 2)
        dst = arbiter.alloc(MemorySpace.DEVICE, 2)
        dst._writing = True
        with pytest.raises(ConcurrentWriteError):
            arbiter.copy(dst, src)

    def test_threaded_copies_into_distinct_blocks(self):
        """Copies from many threads into distinct destinations are all recorded."""
        arbiter = MemoryArbiter()
        src = arbiter.alloc(MemorySpace.HOST, 16)
        destinations = [arbiter.alloc(MemorySpace.DEVICE, 16) for _ in range(8)]

        def worker(dst):
            for _ in range(25):
                arbiter.copy(dst, src)

        threads = [threading.Thread(target=worker, args=(dst,)) for dst in destinations]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        assert arbiter.stats().copy_count(MemorySpace.HOST, MemorySpace.DEVICE) == 200

    def test_stats_rows(self):
        """Ledger rows end with the scalar transfer row."""
        arbiter = MemoryArbiter()
        arbiter.copy(arbiter.alloc(MemorySpace.DEVICE, 3), arbiter.alloc(MemorySpace.HOST, 3))
        rows = arbiter.stats().to_rows()
        assert rows[0] == {"src": "host", "dst": "device", "copies": 1, "bytes": 24}
        assert rows[-1]["src"] == "scalar_transfers"

    def test_failed_copy_is_not_recorded(self):
        """A copy that raises leaves the ledger and the destination epoch untouched."""
        arbiter = MemoryArbiter()
        src = arbiter.alloc(MemorySpace.HOST, 4)
        dst = arbiter.alloc(MemorySpace.DEVICE, 4)
        dst._data.flags.writeable = False

        with pytest.raises(ValueError):
            arbiter.copy(dst, src)

        stats = arbiter.stats()
        assert stats.total_copies == 0
        assert stats.bytes_copied(MemorySpace.HOST, MemorySpace.DEVICE) == 0
        assert dst.write_epoch == 0
        assert not dst._writing

        dst._data.flags.writeable = True
        arbiter.copy(dst, src)
        assert arbiter.stats().copy_count(MemorySpace.HOST, MemorySpace.DEVICE) == 1
        assert dst.write_epoch == 1

    def test_rejected_concurrent_copy_is_not_recorded(self):
        """A copy refused for a concurrent writer does not reach the ledger."""
        arbiter = MemoryArbiter(debug=True)
        src = arbiter.alloc(MemorySpace.HOST, 1)
        dst = arbiter.alloc(MemorySpace.DEVICE, 1)
        dst._writing = True
        with pytest.raises(ConcurrentWriteError):
            arbiter.copy(dst, src)
        stats = arbiter.stats()
        assert stats.total_copies == 0
        assert stats.scalar_transfer_count == 0

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_outstanding_tracks_random_sequences(self, seed):
        """outstanding equals allocations minus releases after every operation."""
        rng = np.random.default_rng(seed)
        arbiter = MemoryArbiter()
        live = []
        external = []
        spaces = list(MemorySpace)

        for _ in range(int(rng.integers(1, 1001))):
            choice = rng.integers(0, 4)
            if choice == 0 or not live:
                space = spaces[int(rng.integers(0, len(spaces)))]
                live.append(arbiter.alloc(space, int(rng.integers(0, 8))))
            elif choice == 1:
                block = live.pop(int(rng.integers(0, len(live))))
                arbiter.release(block)
                with pytest.raises(UseAfterRelease):
                    arbiter.release(block)
            elif choice == 2:
                external.append(arbiter.wrap_external(np.zeros(3), MemorySpace.HOST))
            else:
                if external:
                    arbiter.release(external.pop())
            assert arbiter.outstanding == len(live)
            assert arbiter.outstanding == arbiter.alloc_count - arbiter.release_count
            assert len(arbiter.live_blocks()) == len(live) + len(external)

        for block in live:
            arbiter.release(block)
        assert arbiter.outstanding == 0
