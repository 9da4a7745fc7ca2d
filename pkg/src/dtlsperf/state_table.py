"""Open-addressing flow table in the style of a dense hash map.

Keys are 64-bit flow keys that are already uniformly distributed, so the
low bits pick the home slot directly. Collisions are resolved with
triangular probing (offsets 1, 3, 6, 10, ...), which visits every slot of
a power-of-two table. The table doubles, purging tombstones, before an
insert would push ``occupied + tombstones`` past half the capacity.
"""
from __future__ import annotations

INITIAL_CAPACITY = 8
MAX_LOAD = 0.5
MAX_CAPACITY = 1 << 31

_EMPTY = object()
_TOMBSTONE = object()


class CapacityOverflow(Exception):
    pass


class StateTable:
    """Flow key -> state handle map with probe and resize instrumentation.

    ``probe_count`` accumulates slots inspected by lookups (1 for a hit in
    the home slot). ``resize_count`` counts doublings.
    """

    def __init__(self, capacity: int = INITIAL_CAPACITY):
        if capacity < INITIAL_CAPACITY or capacity & (capacity - 1):
            raise ValueError("capacity must be a power of two >= 8")
        self._keys = [_EMPTY] * capacity
        self._values = [None] * capacity
        self.capacity = capacity
        self.occupied = 0
        self.tombstones = 0
        self.resize_count = 0
        self.probe_count = 0
        self.lookup_count = 0

    def __len__(self):
        return self.occupied

    def __contains__(self, key):
        return self._find(key) >= 0

    def _find(self, key, count=False) -> int:
        """Slot index holding ``key`` or -1; adds probes to ``probe_count`` if asked."""
        keys = self._keys
        mask = self.capacity - 1
        idx = key & mask
        step = 0
        probes = 1
        while True:
            k = keys[idx]
            if k is _EMPTY:
                break
            if k == key:
                if count:
                    self.probe_count += probes
                return idx
            step += 1
            if step > mask:
                break
            idx = (idx + step) & mask
            probes += 1
        if count:
            self.probe_count += probes
        return -1

    def lookup(self, key: int):
        """Stored handle for ``key`` or None."""
        self.lookup_count += 1
        idx = self._find(key, count=True)
        return self._values[idx] if idx >= 0 else None

    def insert(self, key: int, state) -> bool:
        """Add ``key`` unless present. Returns False (and keeps the old state) if present."""
        if self._find(key) >= 0:
            return False
        if self.occupied + self.tombstones + 1 > self.capacity * MAX_LOAD:
            self._resize(self.capacity * 2)
        self._place(key, state)
        self.occupied += 1
        return True

    def remove(self, key: int) -> bool:
        idx = self._find(key)
        if idx < 0:
            return False
        self._keys[idx] = _TOMBSTONE
        self._values[idx] = None
        self.occupied -= 1
        self.tombstones += 1
        return True

    def _place(self, key, state):
        # first empty or tombstone slot along the probe sequence;
        # caller guarantees the key is absent
        keys = self._keys
        mask = self.capacity - 1
        idx = key & mask
        step = 0
        while True:
            k = keys[idx]
            if k is _EMPTY or k is _TOMBSTONE:
                if k is _TOMBSTONE:
                    self.tombstones -= 1
                keys[idx] = key
                self._values[idx] = state
                return
            step += 1
            idx = (idx + step) & mask

    def _resize(self, new_capacity):
        if new_capacity > MAX_CAPACITY:
            raise CapacityOverflow(f"capacity would exceed {MAX_CAPACITY}")
        old = [(k, v) for k, v in zip(self._keys, self._values)
               if k is not _EMPTY and k is not _TOMBSTONE]
        self._keys = [_EMPTY] * new_capacity
        self._values = [None] * new_capacity
        self.capacity = new_capacity
        self.tombstones = 0
        for k, v in old:
            self._place(k, v)
        self.resize_count += 1

    def items(self):
        for k, v in zip(self._keys, self._values):
            if k is not _EMPTY and k is not _TOMBSTONE:
                yield k, v

    def keys(self):
        return [k for k, _ in self.items()]

    def counters(self) -> dict:
        return {
            "capacity": self.capacity,
            "occupied": self.occupied,
            "tombstones": self.tombstones,
            "resize_count": self.resize_count,
            "probe_count": self.probe_count,
            "lookup_count": self.lookup_count,
        }
