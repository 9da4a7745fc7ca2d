"""Security gateway pipeline.

Each :class:`Worker` owns a transport endpoint (or a handoff queue), a
:class:`StateTable` and the connection states in it. Per packet it hashes
the 5-tuple, looks the flow up, and dispatches on the connection phase
through a function table: handshake phases go to the handshake handler,
established flows have their record opened and the plaintext sealed back
to the sender (echo).

:class:`Gateway` spreads flows over ``n`` share-nothing workers with a
software stand-in for receive side scaling (``flow_key mod n``). With one
worker the dispatcher is bypassed.
"""
from __future__ import annotations

import logging
import threading
from collections import Counter, deque
from dataclasses import dataclass, field

from .bench.clock import CycleClock, Stage
from .flow_hash import HashKey, extract_five_tuple, flow_key
from .packet_io import DEFAULT_BATCH, Datagram, DriverClosed
from .secure_channel import (CT_APPLICATION, CT_HANDSHAKE, HEADER_LEN, ChannelConfig,
                             ChannelError, CipherSuite, HandshakeFailure, KexMethod,
                             MalformedRecord, Phase, RecordHeader, handshake_step,
                             new_server_state, open_record, seal)
from .secure_channel.handshake import CLIENT_HELLO
from .state_table import StateTable

log = logging.getLogger(__name__)


def dispatch(key: int, n: int) -> int:
    """Worker index for a flow; depends only on the key and the worker count."""
    if n < 1:
        raise ValueError("worker count must be >= 1")
    return key % n


@dataclass
class GatewayConfig:
    suites: tuple = tuple(CipherSuite)
    kex: KexMethod = KexMethod.ECDHE
    reuse_kex: bool = True
    max_connections: int | None = None
    instrument: bool = False
    batch_size: int = DEFAULT_BATCH
    rng: object = None

    def channel_config(self) -> ChannelConfig:
        # a fresh config per worker: the server key cache is never shared
        return ChannelConfig(suites=self.suites, kex=self.kex, reuse_kex=self.reuse_kex,
                             rng=self.rng)


@dataclass
class WorkerStats:
    rx_packets: int = 0
    tx_packets: int = 0
    rx_bytes: int = 0
    tx_bytes: int = 0
    handshakes: int = 0
    echoes: int = 0
    drops: Counter = field(default_factory=Counter)
    stage_cycles: Counter = field(default_factory=Counter)
    stage_ops: Counter = field(default_factory=Counter)
    total_cycles: int = 0

    @property
    def dropped(self) -> int:
        return sum(self.drops.values())

    def merge(self, other: "WorkerStats") -> "WorkerStats":
        for name in ("rx_packets", "tx_packets", "rx_bytes", "tx_bytes", "handshakes",
                     "echoes", "total_cycles"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        self.drops.update(other.drops)
        self.stage_cycles.update(other.stage_cycles)
        self.stage_ops.update(other.stage_ops)
        return self

    def as_dict(self) -> dict:
        return {
            "rx_packets": self.rx_packets,
            "tx_packets": self.tx_packets,
            "rx_bytes": self.rx_bytes,
            "tx_bytes": self.tx_bytes,
            "handshakes": self.handshakes,
            "echoes": self.echoes,
            "drops": dict(self.drops),
            "stage_cycles": {str(k.value if hasattr(k, "value") else k): v
                             for k, v in self.stage_cycles.items()},
            "total_cycles": self.total_cycles,
        }


class Worker:
    """One single-threaded pipeline. Not safe to share across threads."""

    def __init__(self, id: int, io, local, hash_key: HashKey, cfg: GatewayConfig | None = None,
                 clock: CycleClock | None = None):
        self.id = id
        self.io = io
        self.local = tuple(local)
        self.hash_key = hash_key
        self.cfg = cfg or GatewayConfig()
        self.channel_cfg = self.cfg.channel_config()
        self.table = StateTable()
        self.stats = WorkerStats()
        self.clock = clock if clock is not None else CycleClock()
        self.instrument = self.cfg.instrument
        self.function_table = {
            Phase.AWAITING_HELLO: self._on_handshake,
            Phase.AWAITING_FINISHED: self._on_handshake,
            Phase.ESTABLISHED: self._on_established,
        }

    # -- per-packet pipeline ------------------------------------------------

    def _timed(self, stage, fn, *args):
        if not self.instrument:
            return fn(*args)
        clock = self.clock
        t0 = clock()
        try:
            return fn(*args)
        finally:
            self.stats.stage_cycles[stage] += clock() - t0
            self.stats.stage_ops[stage] += 1

    def _hash(self, dgram):
        return flow_key(self.hash_key, extract_five_tuple(dgram, self.local))

    def process_packet(self, dgram: Datagram, key: int | None = None) -> list:
        """Run one datagram through the pipeline; returns response datagrams."""
        timed = self._timed
        if key is None:
            key = timed(Stage.HASH, self._hash, dgram)
        state = timed(Stage.TABLE_LOOKUP, self.table.lookup, key)
        payload = dgram.payload
        if len(payload) < HEADER_LEN:
            self.stats.drops["malformed"] += 1
            return []
        # only the content type is read here; the handlers validate the
        # full header (open_record for data, RecordHeader.parse for handshakes)
        ctype = payload[0]
        if state is None:
            if not (ctype == CT_HANDSHAKE and len(payload) > HEADER_LEN
                    and payload[HEADER_LEN] == CLIENT_HELLO):
                self.stats.drops["unknown_flow"] += 1
                return []
            limit = self.cfg.max_connections
            if limit is not None and len(self.table) >= limit:
                self.stats.drops["connection_limit"] += 1
                return []
            state = timed(Stage.STATE_ALLOC, new_server_state, self.channel_cfg)
            timed(Stage.TABLE_INSERT, self.table.insert, key, state)
        handler = self.function_table.get(state.phase)
        if handler is None:
            self.stats.drops["closed"] += 1
            return []
        peer = dgram.peer
        return [Datagram(p, peer) for p in handler(key, state, ctype, dgram)]

    def _on_handshake(self, key, state, ctype, dgram):
        if ctype != CT_HANDSHAKE:
            self.stats.drops["not_established"] += 1
            return []
        try:
            RecordHeader.parse(dgram.payload)
        except ChannelError:
            self.stats.drops["malformed"] += 1
            return []
        before = state.phase
        try:
            _, out = self._timed(Stage.HANDSHAKE, handshake_step, state,
                                 dgram.payload[HEADER_LEN:], self.channel_cfg)
        except HandshakeFailure as exc:
            log.debug("worker %d: handshake failed for %s: %s", self.id, dgram.peer, exc)
            self.stats.drops["handshake_failure"] += 1
            self.table.remove(key)
            return []
        if before is not Phase.ESTABLISHED and state.phase is Phase.ESTABLISHED:
            self.stats.handshakes += 1
        return out

    def _on_established(self, key, state, ctype, dgram):
        if ctype == CT_APPLICATION:
            try:
                plaintext = self._timed(Stage.CRYPTO_OPEN, open_record, state, dgram.payload)
                record = self._timed(Stage.CRYPTO_SEAL, seal, state, plaintext)
            except MalformedRecord:
                self.stats.drops["malformed"] += 1
                return []
            except ChannelError as exc:
                self.stats.drops[type(exc).__name__] += 1
                return []
            self.stats.echoes += 1
            return [record]
        if ctype == CT_HANDSHAKE:
            # duplicate handshake flight: ignored by the state machine
            return self._on_handshake(key, state, ctype, dgram)
        self.stats.drops["malformed"] += 1
        return []

    # -- batch loop ---------------------------------------------------------

    def receive(self, max_batch: int | None = None) -> list:
        return self._timed(Stage.IO_RX, self.io.rx_batch, max_batch or self.cfg.batch_size)

    def transmit(self, out: list) -> int:
        if not out:
            return 0
        sent = self._timed(Stage.IO_TX, self.io.tx_batch, out)
        self.stats.tx_packets += sent
        self.stats.tx_bytes += sum(len(d.payload) for d in out[:sent])
        if sent < len(out):
            self.stats.drops["tx_full"] += len(out) - sent
        return sent

    def poll(self, max_batch: int | None = None) -> int:
        """One rx -> process -> tx iteration. Returns packets received."""
        clock = self.clock
        t0 = clock() if self.instrument else 0
        batch = self.receive(max_batch)
        if not batch:
            return 0
        out = []
        for dgram in batch:
            self.stats.rx_packets += 1
            self.stats.rx_bytes += len(dgram.payload)
            out.extend(self.process_packet(dgram))
        self.transmit(out)
        if self.instrument:
            self.stats.total_cycles += clock() - t0
        return len(batch)

    def drain(self) -> int:
        """Poll until the receive side is empty (in-memory transports)."""
        total = 0
        while True:
            n = self.poll()
            if not n:
                return total
            total += n


def run_worker(worker: Worker, stop: threading.Event, idle_sleep: float = 0.0) -> WorkerStats:
    """Loop until ``stop`` is set or the endpoint closes; returns the worker's totals."""
    while not stop.is_set():
        try:
            n = worker.poll()
        except DriverClosed:
            break
        if not n:
            if idle_sleep:
                stop.wait(idle_sleep)
            else:
                # yield the GIL to producers sharing the process
                stop.wait(0)
    return worker.stats


class _QueueIO:
    """Handoff-queue endpoint a dispatched worker reads from and writes to."""

    def __init__(self):
        self.inbox = deque()
        self.outbox = deque()
        self.closed = False

    def rx_batch(self, max=DEFAULT_BATCH):
        if self.closed:
            raise DriverClosed("handoff queue closed")
        q = self.inbox
        return [q.popleft() for _ in range(min(max, len(q)))]

    def tx_batch(self, out):
        self.outbox.extend(out)
        return len(out)


class Gateway:
    """``n`` workers behind a flow-affine dispatcher sharing one endpoint."""

    def __init__(self, io, workers: int = 1, cfg: GatewayConfig | None = None,
                 hash_key: HashKey | None = None, clock: CycleClock | None = None):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.io = io
        self.cfg = cfg or GatewayConfig()
        self.hash_key = hash_key or HashKey.random()
        self.clock = clock if clock is not None else CycleClock()
        local = io.local
        if workers == 1:
            self.workers = [Worker(0, io, local, self.hash_key, self.cfg, self.clock)]
            self._queues = None
        else:
            self._queues = [_QueueIO() for _ in range(workers)]
            self.workers = [Worker(i, q, local, self.hash_key, self.cfg, self.clock)
                            for i, q in enumerate(self._queues)]

    @property
    def n(self) -> int:
        return len(self.workers)

    def _dispatch_once(self) -> int:
        batch = self.io.rx_batch(self.cfg.batch_size)
        for dgram in batch:
            key = flow_key(self.hash_key, extract_five_tuple(dgram, self.io.local))
            self._queues[dispatch(key, self.n)].inbox.append(dgram)
        out = []
        for q in self._queues:
            while q.outbox:
                out.append(q.outbox.popleft())
        if out:
            self.io.tx_batch(out)
        return len(batch) + len(out)

    def poll(self) -> int:
        """Single-threaded step: dispatch, let every worker run once, flush."""
        if self._queues is None:
            return self.workers[0].poll()
        moved = self._dispatch_once()
        for w in self.workers:
            while w.poll():
                pass
        return moved + self._dispatch_once()

    def drain(self) -> int:
        total = 0
        while True:
            n = self.poll()
            if not n:
                return total
            total += n

    def run(self, stop: threading.Event) -> WorkerStats:
        """Threaded mode: one thread per worker plus the dispatcher (this thread)."""
        if self._queues is None:
            return run_worker(self.workers[0], stop)
        threads = [threading.Thread(target=run_worker, args=(w, stop, 0.0005), daemon=True,
                                    name=f"worker-{w.id}") for w in self.workers]
        for t in threads:
            t.start()
        try:
            while not stop.is_set():
                try:
                    if not self._dispatch_once():
                        stop.wait(0.0002)
                except DriverClosed:
                    break
        finally:
            stop.set()
            for q in self._queues:
                q.closed = True
            for t in threads:
                t.join()
            out = [d for q in self._queues for d in q.outbox]
            if out and not self.io.closed:
                self.io.tx_batch(out)
        return self.totals()

    def totals(self) -> WorkerStats:
        total = WorkerStats()
        for w in self.workers:
            total.merge(w.stats)
        return total
