"""Live-byte accounting for tensor allocations.

Every tensor data/grad buffer reports its size here on allocation and
release, so peak memory of a code region can be measured analytically
(tracked tensor bytes, not process RSS). Scopes nest; each scope reports
the peak of bytes allocated on top of what was live at scope entry.
"""

import threading
import weakref
from contextlib import contextmanager


class ScopeStats:
    """Per-scope snapshot filled in while the scope is active."""

    def __init__(self, entry_bytes):
        self.entry_bytes = entry_bytes
        self.peak_bytes = 0  # peak of (live - entry) inside the scope

    def note(self, live_bytes):
        delta = live_bytes - self.entry_bytes
        if delta > self.peak_bytes:
            self.peak_bytes = delta


class MemoryTracker:
    """Counts live bytes of tracked buffers and remembers peaks.

    Single lock keeps the counter coherent if scoring workers ever share
    the process; the benchmark itself runs single-threaded.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.live_bytes = 0
        self.peak_bytes = 0
        self._scopes = []
        # Weak registry of live tensors, used by audit().
        self._registry = weakref.WeakSet()
        # Optional shape log for tests that assert on allocation shapes.
        self._shape_log = None

    def alloc(self, nbytes):
        with self._lock:
            self.live_bytes += nbytes
            if self.live_bytes > self.peak_bytes:
                self.peak_bytes = self.live_bytes
            for scope in self._scopes:
                scope.note(self.live_bytes)

    def free(self, nbytes):
        with self._lock:
            self.live_bytes -= nbytes

    def register(self, tensor):
        self._registry.add(tensor)

    def log_shape(self, shape):
        if self._shape_log is not None:
            self._shape_log.append(tuple(shape))

    @contextmanager
    def scope(self):
        """Track peak bytes allocated beyond the live set at entry."""
        stats = ScopeStats(self.live_bytes)
        self._scopes.append(stats)
        try:
            yield stats
        finally:
            self._scopes.remove(stats)

    @contextmanager
    def record_shapes(self):
        """Collect the shape of every tensor allocated inside the block."""
        previous = self._shape_log
        self._shape_log = log = []
        try:
            yield log
        finally:
            self._shape_log = previous

    def audit(self):
        """Sum byte sizes of all live tensors; must equal live_bytes.

        Callers should run gc.collect() first if the graph may contain
        unreleased references.
        """
        return sum(t.tracked_nbytes() for t in self._registry)

    def reset_peak(self):
        with self._lock:
            self.peak_bytes = self.live_bytes


tracker = MemoryTracker()
