"""DTLS load generator and black-box throughput sweep.

Two targets are supported:

* :class:`InMemoryTarget` runs a gateway on a :class:`LoopbackHub` in this
  process. Without a rate the exchange is lossless and synchronous. With a
  rate, the offered load is replayed in virtual time: packets arrive at
  ``k / rate`` seconds, the gateway's receive queue is bounded with
  drop-on-full, and every gateway poll advances the virtual clock by the
  cycles it actually consumed. This reproduces the saturation regime
  without a second machine and without the load generator stealing CPU
  from the gateway.
* A ``"host:port"`` string targets a gateway over real UDP, paced in wall
  time.

Records are sealed before the clock starts and echoes are verified after
the run, so neither is charged to the gateway.
"""
from __future__ import annotations

import itertools
import logging
import os
import struct
import time
from collections import deque
from dataclasses import asdict, dataclass

from ..flow_hash import HashKey
from ..gateway import Gateway, GatewayConfig
from ..packet_io import Datagram, LoopbackHub, UdpEndpoint, parse_address
from ..secure_channel import (HEADER_LEN, ChannelConfig, ChannelError, CipherSuite, KexMethod,
                              Phase, handshake_step, open_record, seal, start_client)
from .clock import CycleClock
from .micro import gc_paused

log = logging.getLogger(__name__)

DEFAULT_PAYLOAD = 500
IP_UDP_OVERHEAD = 28
RECORD_OVERHEAD = HEADER_LEN + 16


class LoadgenError(Exception):
    pass


class VerificationError(LoadgenError):
    """An echo decrypted to something we never sent: a correctness bug."""


@dataclass
class LoadgenStats:
    connections: int = 0
    established: int = 0
    handshake_timeouts: int = 0
    offered: int = 0
    sent: int = 0
    received: int = 0
    verified: int = 0
    lost: int = 0
    duration: float = 0.0
    offered_pps: float = 0.0
    achieved_pps: float = 0.0
    achieved_bps: float = 0.0

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class BlackboxPoint:
    offered_pps: float
    achieved_pps: float
    achieved_bps: float


class InMemoryTarget:
    """Gateway on an in-memory hub. ``queue_capacity`` bounds its receive queue."""

    def __init__(self, cfg: GatewayConfig | None = None, workers: int = 1,
                 queue_capacity: int | None = None, address=("10.0.0.2", 4433),
                 hash_key: HashKey | None = None, clock: CycleClock | None = None,
                 running: bool = True):
        self.hub = LoopbackHub()
        self.address = tuple(address)
        self.endpoint = self.hub.open(self.address, queue_capacity, drop_on_full=True)
        self.clock = clock if clock is not None else CycleClock()
        self.gateway = Gateway(self.endpoint, workers, cfg, hash_key, self.clock)
        self.running = running
        self.busy_cycles = 0  # clock cycles spent inside pump() and poll()
        self._ports = itertools.count(0)
        self._args = (cfg, workers, queue_capacity, self.address, self.gateway.hash_key)

    def clone(self) -> "InMemoryTarget":
        """A fresh gateway with the same settings, clock and hash key."""
        cfg, workers, cap, address, key = self._args
        return InMemoryTarget(cfg, workers, cap, address, key, self.clock, self.running)

    def new_client_endpoint(self):
        i = next(self._ports)
        host = f"10.1.{(i >> 14) & 0xFF}.{1 + ((i >> 6) & 0xFF) % 254}"
        return self.hub.open((host, 20000 + (i & 0x3FFF)))

    def pump(self) -> int:
        if not self.running:
            return 0
        t0 = self.clock()
        n = self.gateway.drain()
        self.busy_cycles += self.clock() - t0
        return n

    def poll(self) -> int:
        if not self.running:
            return 0
        t0 = self.clock()
        n = self.gateway.poll()
        self.busy_cycles += self.clock() - t0
        return n

    def queued(self) -> int:
        return len(self.endpoint)


@dataclass
class _Conn:
    io: object
    state: object
    sent: dict
    next_id: int = 0


def _make_payload(conn_index: int, packet_id: int, size: int) -> bytes:
    head = struct.pack("!IQ", conn_index, packet_id)
    if size < len(head):
        return head[:size]
    return head + os.urandom(size - len(head))


def _client_cfg(suite, kex, rng):
    return ChannelConfig(suites=(CipherSuite(suite),), kex=KexMethod(kex), rng=rng)


def _handshake_in_memory(target, n, cfg):
    conns = []
    for _ in range(n):
        io = target.new_client_endpoint()
        state, recs = start_client(cfg)
        io.tx_batch([Datagram(r, target.address) for r in recs])
        conns.append(_Conn(io, state, {}))
    # two round trips: hello -> server hello, finished -> finished
    for _ in range(2):
        target.pump()
        for c in conns:
            for d in c.io.rx_batch(64):
                try:
                    _, out = handshake_step(c.state, d.payload[HEADER_LEN:], cfg)
                except ChannelError as exc:
                    log.warning("client handshake failed: %s", exc)
                    continue
                if out:
                    c.io.tx_batch([Datagram(r, target.address) for r in out])
    return conns


def _verify(conns, index, echoes):
    """Open echoed records for one connection; returns how many verified."""
    c = conns[index]
    ok = 0
    for record in echoes:
        try:
            plaintext = open_record(c.state, record)
        except ChannelError as exc:
            raise VerificationError(f"echo failed to open: {exc}") from exc
        _, pid = struct.unpack_from("!IQ", plaintext)
        expected = c.sent.pop(pid, None)
        if expected != plaintext:
            raise VerificationError(f"echo {pid} on connection {index} does not match")
        ok += 1
    return ok


def _prepare(conns, n_packets, payload):
    """Pre-seal ``n_packets`` records round-robin over established connections."""
    out = []
    for k in range(n_packets):
        i = k % len(conns)
        c = conns[i]
        data = _make_payload(i, c.next_id, payload)
        c.sent[c.next_id] = data
        c.next_id += 1
        out.append((i, seal(c.state, data)))
    return out


def _finish(stats, conns, echoes_by_conn, duration, payload):
    verified = 0
    for i, echoes in echoes_by_conn.items():
        verified += _verify(conns, i, echoes)
    stats.received = sum(len(v) for v in echoes_by_conn.values())
    stats.verified = verified
    stats.lost = stats.sent - verified
    stats.duration = duration
    if duration > 0:
        stats.offered_pps = stats.offered / duration
        stats.achieved_pps = verified / duration
        stats.achieved_bps = stats.achieved_pps * (payload + RECORD_OVERHEAD + IP_UDP_OVERHEAD) * 8
    return stats


def run_loadgen(target, connections: int = 1, payload: int = DEFAULT_PAYLOAD,
                packets_per_conn: int = 10, rate: float | None = None,
                duration: float | None = None, suite=CipherSuite.AES256_GCM,
                kex=KexMethod.ECDHE, timeout: float = 1.0, rng=None) -> LoadgenStats:
    """Handshake ``connections`` flows, then send sealed payloads and verify echoes.

    With ``rate`` and ``duration`` the packet count is ``rate * duration``;
    otherwise ``connections * packets_per_conn`` packets are sent unpaced.
    """
    if connections < 1:
        raise ValueError("connections must be >= 1")
    if (rate is None) != (duration is None):
        raise ValueError("rate and duration go together")
    if rate is not None and (rate <= 0 or duration <= 0):
        raise ValueError("rate and duration must be positive")
    cfg = _client_cfg(suite, kex, rng)
    if isinstance(target, str):
        return _run_udp(parse_address(target), connections, payload, packets_per_conn,
                        rate, duration, cfg, timeout)
    return _run_in_memory(target, connections, payload, packets_per_conn, rate, duration, cfg)


class _Session:
    """Established in-memory connections plus a pre-sealed send plan."""

    def __init__(self, target, connections, payload, n_packets, rate, duration, cfg):
        self.target = target
        self.payload = payload
        self.rate = rate
        self.duration = duration
        self.stats = LoadgenStats(connections=connections)
        conns = _handshake_in_memory(target, connections, cfg)
        established = [c for c in conns if c.state.phase is Phase.ESTABLISHED]
        self.stats.established = len(established)
        self.stats.handshake_timeouts = connections - len(established)
        if not established:
            raise LoadgenError("no connection could be established")
        self.conns = established
        self._index = {id(c.io): i for i, c in enumerate(established)}
        self.echoes = {i: [] for i in range(len(established))}
        self.plan = _prepare(established, n_packets, payload)
        self.stats.offered = n_packets
        # virtual-time state for paced runs
        self._arrivals = deque(self.plan)
        self._vt = 0.0
        self._k = 0
        self.done = False

    def collect(self):
        for c in self.conns:
            for d in c.io.rx_batch(1 << 16):
                self.echoes[self._index[id(c.io)]].append(d.payload)

    def run_unpaced(self):
        target, stats = self.target, self.stats
        batch = target.gateway.cfg.batch_size
        for start in range(0, len(self.plan), batch):
            for i, rec in self.plan[start:start + batch]:
                stats.sent += self.conns[i].io.tx_batch([Datagram(rec, target.address)])
            target.pump()
            self.collect()
        self.done = True

    def step(self) -> bool:
        """Advance a paced run by one gateway poll; False once it has finished.

        Arrivals due by the current virtual time are enqueued (the bounded
        receive queue drops the excess), then one poll runs and virtual
        time moves forward by the cycles it consumed.
        """
        if self.done:
            return False
        target, rate, arrivals = self.target, self.rate, self._arrivals
        while True:
            while arrivals and self._k / rate <= self._vt:
                i, rec = arrivals.popleft()
                self.conns[i].io.tx_batch([Datagram(rec, target.address)])
                self.stats.sent += 1
                self._k += 1
            if target.queued():
                break
            if not arrivals:
                self.done = True
                return False
            self._vt = self._k / rate
        clock = target.clock
        t0 = clock()
        n = target.poll()
        self._vt += clock.seconds(clock() - t0)
        if not n:
            self.done = True
        return not self.done

    def finish(self) -> LoadgenStats:
        self.target.pump()
        self.collect()
        # unpaced runs have no meaningful rate: report counts only
        return _finish(self.stats, self.conns, self.echoes, self.duration or 0.0, self.payload)


def _run_in_memory(target, connections, payload, packets_per_conn, rate, duration, cfg):
    n = round(rate * duration) if rate is not None else connections * packets_per_conn
    session = _Session(target, connections, payload, n, rate, duration, cfg)
    if rate is None:
        session.run_unpaced()
    else:
        while session.step():
            pass
    return session.finish()


def _run_udp(addr, connections, payload, packets_per_conn, rate, duration, cfg, timeout):
    stats = LoadgenStats(connections=connections)
    conns = []
    for _ in range(connections):
        io = UdpEndpoint(("0.0.0.0", 0))
        state, recs = start_client(cfg)
        io.tx_batch([Datagram(r, addr) for r in recs])
        conns.append(_Conn(io, state, {}))
    try:
        deadline = time.monotonic() + timeout
        pending = list(conns)
        while pending and time.monotonic() < deadline:
            still = []
            for c in pending:
                for d in c.io.rx_batch(8):
                    try:
                        _, out = handshake_step(c.state, d.payload[HEADER_LEN:], cfg)
                    except ChannelError as exc:
                        log.warning("client handshake failed: %s", exc)
                        continue
                    if out:
                        c.io.tx_batch([Datagram(r, addr) for r in out])
                if c.state.phase is not Phase.ESTABLISHED and c.state.phase is not Phase.CLOSED:
                    still.append(c)
            pending = still
            if pending:
                time.sleep(0.0005)
        established = [c for c in conns if c.state.phase is Phase.ESTABLISHED]
        stats.established = len(established)
        stats.handshake_timeouts = connections - len(established)
        if not established:
            raise LoadgenError(f"no connection to {addr[0]}:{addr[1]} could be established")
        n_packets = round(rate * duration) if rate is not None else len(established) * packets_per_conn
        plan = _prepare(established, n_packets, payload)
        stats.offered = n_packets
        echoes = {i: [] for i in range(len(established))}

        def collect():
            for i, c in enumerate(established):
                for d in c.io.rx_batch(256):
                    echoes[i].append(d.payload)

        t_start = time.monotonic()
        for k, (i, rec) in enumerate(plan):
            if rate is not None:
                due = t_start + k / rate
                while time.monotonic() < due:
                    collect()
            stats.sent += established[i].io.tx_batch([Datagram(rec, addr)])
            if k % 16 == 0:
                collect()
        t_end = time.monotonic()
        # stragglers: stop once nothing has arrived for `timeout` seconds
        quiet_until = time.monotonic() + timeout
        while time.monotonic() < quiet_until:
            before = sum(len(v) for v in echoes.values())
            collect()
            if sum(len(v) for v in echoes.values()) >= stats.sent:
                break
            if sum(len(v) for v in echoes.values()) != before:
                quiet_until = time.monotonic() + timeout
            time.sleep(0.0005)
        measured = duration if rate is not None else max(t_end - t_start, 1e-9)
        return _finish(stats, established, echoes, measured, payload)
    finally:
        for c in conns:
            c.io.close()


def blackbox_sweep(target, rates, duration: float = 0.2, connections: int = 1,
                   payload: int = DEFAULT_PAYLOAD, suite=CipherSuite.AES256_GCM,
                   kex=KexMethod.ECDHE, rng=None, **kwargs) -> list:
    """Achieved throughput for each offered rate (ascending).

    For an in-memory target every rate gets a fresh copy of the gateway and
    all rates are simulated in lockstep, one poll each in turn. All points
    thus share the same stretch of wall time, so slow drift in host speed
    moves the whole curve together instead of bending it. UDP targets are
    swept one rate after another.
    """
    rates = list(rates)
    if not rates:
        raise ValueError("rates must be non-empty")
    if any(r <= 0 for r in rates):
        raise ValueError("rates must be positive")
    if any(b < a for a, b in zip(rates, rates[1:])):
        raise ValueError("rates must be ascending")
    if isinstance(target, str):
        out = []
        for rate in rates:
            st = run_loadgen(target, connections=connections, payload=payload, rate=rate,
                             duration=duration, suite=suite, kex=kex, rng=rng, **kwargs)
            out.append(BlackboxPoint(st.offered_pps, st.achieved_pps, st.achieved_bps))
        return out
    if duration <= 0:
        raise ValueError("duration must be positive")
    cfg = _client_cfg(suite, kex, rng)
    sessions = [_Session(target.clone(), connections, payload, round(rate * duration), rate,
                         duration, cfg)
                for rate in rates]
    active = list(sessions)
    # a cyclic collection would land on whichever session happens to be
    # polling and be charged to its virtual clock
    with gc_paused():
        while active:
            active = [s for s in active if s.step()]
    out = []
    for s in sessions:
        st = s.finish()
        out.append(BlackboxPoint(st.offered_pps, st.achieved_pps, st.achieved_bps))
    return out
