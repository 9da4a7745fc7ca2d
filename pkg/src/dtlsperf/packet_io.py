"""Batched datagram transport.

Two drivers share one interface: ``rx_batch(max)`` and ``tx_batch(out)``.

* :class:`LoopbackEndpoint` lives on a :class:`LoopbackHub`, an in-memory
  switch that routes by ``(host, port)``. Deterministic, no kernel cost.
* :class:`UdpEndpoint` wraps a non-blocking OS datagram socket.

A :class:`Datagram` handed to ``tx_batch`` carries the *destination* in
``peer``; a datagram returned by ``rx_batch`` carries the *source*.
"""
from __future__ import annotations

import select
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass, field

DEFAULT_BATCH = 32
MTU_PAYLOAD = 1472  # 1500 - IPv4 header - UDP header

Address = tuple  # (host, port)


class TransportError(Exception):
    pass


class DriverClosed(TransportError):
    pass


class PayloadTooLarge(TransportError):
    pass


@dataclass
class Datagram:
    payload: bytes
    peer: Address
    timestamp: int = field(default_factory=time.monotonic_ns)


@dataclass
class IoCounters:
    rx_packets: int = 0
    tx_packets: int = 0
    rx_batches: int = 0
    tx_batches: int = 0
    drops: int = 0


def parse_address(text: str) -> Address:
    """``"host:port"`` -> ``(host, port)``."""
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"expected HOST:PORT, got {text!r}")
    try:
        port_num = int(port)
    except ValueError:
        raise ValueError(f"bad port in {text!r}") from None
    if not 0 <= port_num <= 0xFFFF:
        raise ValueError(f"port out of range in {text!r}")
    return host, port_num


class _Endpoint:
    mtu = MTU_PAYLOAD

    def __init__(self, local: Address):
        self.local = local
        self.counters = IoCounters()
        self.closed = False

    def _check_open(self):
        if self.closed:
            raise DriverClosed(f"endpoint {self.local} is closed")

    def _check_size(self, dgram):
        if len(dgram.payload) > self.mtu:
            raise PayloadTooLarge(f"{len(dgram.payload)} > {self.mtu} bytes")

    def close(self):
        self.closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class LoopbackHub:
    """In-memory switch connecting loopback endpoints by address."""

    def __init__(self):
        self._endpoints = {}
        self._lock = threading.Lock()

    def open(self, local: Address, capacity: int | None = None, drop_on_full: bool = False):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be >= 1")
        with self._lock:
            if local in self._endpoints and not self._endpoints[local].closed:
                raise TransportError(f"address in use: {local}")
            ep = LoopbackEndpoint(self, tuple(local), capacity, drop_on_full)
            self._endpoints[ep.local] = ep
        return ep

    def lookup(self, addr: Address):
        return self._endpoints.get(tuple(addr))


class LoopbackEndpoint(_Endpoint):
    """One address on a :class:`LoopbackHub`.

    The receive queue is single-producer/single-consumer safe: ``deque``
    append and popleft are atomic. When a bounded queue is full the sender's
    ``tx_batch`` stops early, or, if this endpoint was opened with
    ``drop_on_full``, discards the excess and counts it in the sender's
    ``drops``. Either way the return value counts delivered datagrams only.
    Datagrams sent to an address nobody has opened vanish silently.
    """

    def __init__(self, hub, local, capacity=None, drop_on_full=False):
        super().__init__(local)
        self.hub = hub
        self.capacity = capacity
        self.drop_on_full = drop_on_full
        self.queue = deque()

    def __len__(self):
        return len(self.queue)

    def _deliver(self, dgram) -> bool:
        if self.capacity is not None and len(self.queue) >= self.capacity:
            return False
        self.queue.append(dgram)
        return True

    def rx_batch(self, max: int = DEFAULT_BATCH) -> list:
        self._check_open()
        if max < 1:
            raise ValueError("max must be >= 1")
        q = self.queue
        n = min(max, len(q))
        out = [q.popleft() for _ in range(n)]
        if out:
            self.counters.rx_packets += n
            self.counters.rx_batches += 1
        return out

    def tx_batch(self, out) -> int:
        self._check_open()
        if not out:
            return 0
        accepted = 0
        for dgram in out:
            self._check_size(dgram)
            dst = self.hub.lookup(dgram.peer)
            if dst is None or dst.closed:
                # nobody listening: the datagram is gone, as on a real network
                accepted += 1
                continue
            # source address rewritten so the receiver sees who sent it
            if dst._deliver(Datagram(dgram.payload, self.local, dgram.timestamp)):
                accepted += 1
            elif dst.drop_on_full:
                self.counters.drops += 1
            else:
                break
        self.counters.tx_packets += accepted
        self.counters.tx_batches += 1
        return accepted


def loopback_pair(a: Address = ("10.0.0.1", 40000), b: Address = ("10.0.0.2", 4433),
                  capacity: int | None = None, drop_on_full: bool = False):
    """Two endpoints on a fresh hub; ``capacity``/``drop_on_full`` apply to both."""
    hub = LoopbackHub()
    return hub.open(a, capacity, drop_on_full), hub.open(b, capacity, drop_on_full)


class UdpEndpoint(_Endpoint):
    """Non-blocking UDP socket.

    ``rx_batch`` waits at most ``timeout`` seconds for the first datagram,
    then drains whatever else is ready. An empty batch means nothing arrived.
    """

    def __init__(self, bind: Address = ("0.0.0.0", 0), timeout: float = 0.0):
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind(bind)
        sock.setblocking(False)
        super().__init__(sock.getsockname())
        self.sock = sock
        self.timeout = timeout

    def rx_batch(self, max: int = DEFAULT_BATCH) -> list:
        self._check_open()
        if max < 1:
            raise ValueError("max must be >= 1")
        if self.timeout > 0:
            ready, _, _ = select.select([self.sock], [], [], self.timeout)
            if not ready:
                return []
        out = []
        while len(out) < max:
            try:
                payload, peer = self.sock.recvfrom(65535)
            except (BlockingIOError, InterruptedError):
                break
            except ConnectionRefusedError:
                # ICMP port unreachable from an earlier send
                continue
            out.append(Datagram(payload, peer))
        if out:
            self.counters.rx_packets += len(out)
            self.counters.rx_batches += 1
        return out

    def tx_batch(self, out) -> int:
        self._check_open()
        if not out:
            return 0
        accepted = 0
        for dgram in out:
            self._check_size(dgram)
            try:
                self.sock.sendto(dgram.payload, dgram.peer)
            except (BlockingIOError, InterruptedError):
                break
            except ConnectionRefusedError:
                pass
            accepted += 1
        self.counters.tx_packets += accepted
        self.counters.tx_batches += 1
        return accepted

    def close(self):
        if not self.closed:
            self.sock.close()
        super().close()
