"""Cycle counters.

On x86-64 Linux the time stamp counter is read through a ten-byte
``rdtsc`` stub mapped executable and called via ctypes. Elsewhere, or if
the mapping is refused, monotonic nanoseconds are scaled by the configured
nominal frequency. The frequency is never auto-detected.
"""
from __future__ import annotations

import ctypes
import enum
import mmap
import platform
import time

# rdtsc; shl rdx, 32; or rax, rdx; ret
_RDTSC_CODE = b"\x0f\x31\x48\xc1\xe2\x20\x48\x09\xd0\xc3"

DEFAULT_NOMINAL_HZ = 3.2e9


class Stage(str, enum.Enum):
    IO_RX = "IO_RX"
    IO_TX = "IO_TX"
    HASH = "HASH"
    TABLE_LOOKUP = "TABLE_LOOKUP"
    TABLE_INSERT = "TABLE_INSERT"
    STATE_ALLOC = "STATE_ALLOC"
    CRYPTO_SEAL = "CRYPTO_SEAL"
    CRYPTO_OPEN = "CRYPTO_OPEN"
    HANDSHAKE = "HANDSHAKE"


class ClockSource(str, enum.Enum):
    TSC = "tsc"
    NS = "ns"


_tsc_cache = []


def _load_rdtsc():
    if _tsc_cache:
        return _tsc_cache[0]
    fn = None
    if platform.machine().lower() in ("x86_64", "amd64") and platform.system() == "Linux":
        try:
            buf = mmap.mmap(-1, len(_RDTSC_CODE),
                            prot=mmap.PROT_READ | mmap.PROT_WRITE | mmap.PROT_EXEC)
            buf.write(_RDTSC_CODE)
            addr = ctypes.addressof(ctypes.c_char.from_buffer(buf))
            fn = ctypes.CFUNCTYPE(ctypes.c_uint64)(addr)
            fn._buf = buf  # keep the mapping alive
            fn()
        except (OSError, ValueError, TypeError):
            fn = None
    _tsc_cache.append(fn)
    return fn


def tsc_available() -> bool:
    return _load_rdtsc() is not None


class CycleClock:
    """Callable returning a cycle count; ``nominal_hz`` converts to seconds."""

    def __init__(self, source: str = "auto", nominal_hz: float = DEFAULT_NOMINAL_HZ):
        if nominal_hz <= 0:
            raise ValueError("nominal_hz must be positive")
        self.nominal_hz = float(nominal_hz)
        if source == "auto":
            source = ClockSource.TSC if tsc_available() else ClockSource.NS
        self.source = ClockSource(source)
        if self.source is ClockSource.TSC:
            fn = _load_rdtsc()
            if fn is None:
                raise RuntimeError("time stamp counter not available on this platform")
            self._read = fn
        else:
            scale = self.nominal_hz / 1e9
            ns = time.perf_counter_ns
            self._read = lambda: int(ns() * scale)

    def __call__(self) -> int:
        return self._read()

    def seconds(self, cycles: float) -> float:
        return cycles / self.nominal_hz

    def describe(self) -> dict:
        return {"source": self.source.value, "nominal_hz": self.nominal_hz}

    def overhead(self, n: int = 2000) -> float:
        """Mean cycles for one back-to-back read pair (timer cost floor)."""
        read = self._read
        best = []
        for _ in range(n):
            a = read()
            b = read()
            best.append(b - a)
        best.sort()
        return float(best[len(best) // 2])
