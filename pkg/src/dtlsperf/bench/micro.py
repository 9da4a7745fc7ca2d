"""Single-threaded per-stage microbenchmarks.

Each stage has a closed micro-loop that times one operation per
iteration with the cycle clock. The first ``warmup`` timings are dropped
(caches, allocator and interpreter specialisation settle over the first
few hundred calls) and the rest are aggregated into a :class:`StageSample`.
The garbage collector is paused while a loop runs so that collections do
not land inside a timed operation.
"""
from __future__ import annotations

import gc
import itertools
import os
import random
import statistics
from contextlib import contextmanager
from dataclasses import dataclass, field

from ..flow_hash import FiveTuple, HashKey, extract_five_tuple, flow_key
from ..packet_io import Datagram, LoopbackHub
from ..secure_channel import (HEADER_LEN, ChannelConfig, CipherSuite, KexMethod, Phase,
                              handshake_step, new_server_state, open_record, seal, start_client)
from ..state_table import MAX_LOAD, StateTable
from .clock import CycleClock, Stage

DEFAULT_PAYLOAD = 500
CRYPTO_STAGES = (Stage.CRYPTO_SEAL, Stage.CRYPTO_OPEN, Stage.HANDSHAKE)


class BenchConfigError(ValueError):
    """The stage cannot run with the given configuration."""


@dataclass
class MicroConfig:
    suite: CipherSuite | None = None
    kex: KexMethod = KexMethod.ECDHE
    reuse_kex: bool = True
    payload: int = DEFAULT_PAYLOAD
    connections: int = 1000
    batch: int = 1
    clock: CycleClock = field(default_factory=CycleClock)
    rng: object = None
    seed: int | None = None


@dataclass
class StageSample:
    stage: Stage
    iterations: int
    total_cycles: float
    mean: float
    min: float
    max: float
    bytes: int | None = None
    connections: int | None = None
    timings: list = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.stage = Stage(self.stage)
        if self.iterations <= 0:
            raise ValueError("a sample needs at least one iteration")

    @classmethod
    def from_timings(cls, stage, timings, bytes=None, connections=None, keep=False):
        timings = list(timings)
        if not timings:
            raise ValueError("no timings")
        total = sum(timings)
        return cls(Stage(stage), len(timings), total, total / len(timings), min(timings),
                   max(timings), bytes, connections, timings if keep else None)

    @property
    def median(self) -> float:
        if self.timings is None:
            raise AttributeError("raw timings were not kept")
        return statistics.median(self.timings)


def default_warmup(iterations: int) -> int:
    """10% of the run, at least 100, but always leaving one timed iteration."""
    return max(0, min(max(100, iterations // 10), iterations - 1))


@contextmanager
def gc_paused():
    was = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        yield
    finally:
        if was:
            gc.enable()


def _rng(cfg):
    return random.Random(cfg.seed)


def _tuples(n, rnd):
    return [FiveTuple(f"10.{rnd.randrange(256)}.{rnd.randrange(256)}.{rnd.randrange(1, 255)}",
                      "10.0.0.2", rnd.randrange(1024, 65536), 4433) for _ in range(n)]


def _keys(n, rnd):
    return rnd.sample(range(1, 1 << 62), n) if n < 1 << 20 else [rnd.getrandbits(64) for _ in range(n)]


def established_pair(suite, kex=KexMethod.ECDHE, rng=None):
    """Client and server states that completed a handshake in memory."""
    ccfg = ChannelConfig(suites=(suite,), kex=kex, rng=rng)
    scfg = ChannelConfig(suites=(suite,), kex=kex, rng=rng)
    client, recs = start_client(ccfg)
    server = new_server_state(scfg)
    while recs:
        out = []
        for r in recs:
            _, back = handshake_step(server, r[HEADER_LEN:], scfg)
            for b in back:
                _, more = handshake_step(client, b[HEADER_LEN:], ccfg)
                out.extend(more)
        recs = out
    if client.phase is not Phase.ESTABLISHED or server.phase is not Phase.ESTABLISHED:
        raise RuntimeError("in-memory handshake did not complete")
    return client, server


def _server_handshake_cycles(scfg, ccfg, clock):
    """Run one client/server handshake; returns cycles spent on the server side."""
    client, recs = start_client(ccfg)
    server = new_server_state(scfg)
    spent = 0
    while recs:
        out = []
        for r in recs:
            t0 = clock()
            _, back = handshake_step(server, r[HEADER_LEN:], scfg)
            spent += clock() - t0
            for b in back:
                _, more = handshake_step(client, b[HEADER_LEN:], ccfg)
                out.extend(more)
        recs = out
    if server.phase is not Phase.ESTABLISHED:
        raise RuntimeError("handshake did not complete")
    return spent


def stage_timings(stage, cfg: MicroConfig):
    """Endless iterator of per-operation cycle counts for ``stage``.

    Set-up work (refilling queues, sealing records to open, starting a
    fresh table) happens between timed operations and is never counted.
    Being lazy, the loops of several stages can be interleaved with each
    other or with a gateway run.
    """
    clock = cfg.clock
    rnd = _rng(cfg)
    stage = Stage(stage)
    if stage in CRYPTO_STAGES and cfg.suite is None:
        raise BenchConfigError(f"stage {stage.value} needs a cipher suite")
    if stage is Stage.HASH:
        # same work as the gateway's hash stage: 5-tuple extraction, then SipHash
        key = HashKey(rnd.getrandbits(64), rnd.getrandbits(64))
        local = ("10.0.0.2", 4433)
        dgrams = [Datagram(b"", (t.src_ip, t.src_port)) for t in _tuples(256, rnd)]
        i = 0
        while True:
            d = dgrams[i & 255]
            i += 1
            t0 = clock()
            flow_key(key, extract_five_tuple(d, local))
            yield clock() - t0
    elif stage in (Stage.IO_RX, Stage.IO_TX):
        k = cfg.batch
        if k < 1:
            raise BenchConfigError("batch must be >= 1")
        hub = LoopbackHub()
        a = hub.open(("10.0.0.1", 40000))
        b = hub.open(("10.0.0.2", 4433))
        payload = os.urandom(cfg.payload)
        # one timing per batch of k packets, reported per packet
        while True:
            batch = [Datagram(payload, b.local) for _ in range(k)]
            if stage is Stage.IO_TX:
                t0 = clock()
                a.tx_batch(batch)
                t = clock() - t0
                b.rx_batch(k)
            else:
                a.tx_batch(batch)
                t0 = clock()
                b.rx_batch(k)
                t = clock() - t0
            yield t / k if k > 1 else t
    elif stage is Stage.TABLE_LOOKUP:
        table = StateTable()
        keys = _keys(cfg.connections, rnd)
        for k in keys:
            table.insert(k, None)
        i = 0
        while True:
            k = keys[i % len(keys)]
            i += 1
            t0 = clock()
            table.lookup(k)
            yield clock() - t0
    elif stage is Stage.TABLE_INSERT:
        # a fresh table every `connections` inserts keeps the growth pattern
        while True:
            table = StateTable()
            for k in _keys(cfg.connections, rnd):
                t0 = clock()
                table.insert(k, None)
                yield clock() - t0
    elif stage is Stage.STATE_ALLOC:
        scfg = ChannelConfig(kex=cfg.kex)
        while True:
            t0 = clock()
            new_server_state(scfg)
            yield clock() - t0
    elif stage is Stage.HANDSHAKE:
        scfg = ChannelConfig(suites=(cfg.suite,), kex=cfg.kex, reuse_kex=cfg.reuse_kex, rng=cfg.rng)
        ccfg = ChannelConfig(suites=(cfg.suite,), kex=cfg.kex, rng=cfg.rng)
        while True:
            yield _server_handshake_cycles(scfg, ccfg, clock)
    elif stage in (Stage.CRYPTO_SEAL, Stage.CRYPTO_OPEN):
        client, server = established_pair(cfg.suite, cfg.kex, cfg.rng)
        payload = os.urandom(cfg.payload)
        while True:
            if stage is Stage.CRYPTO_SEAL:
                t0 = clock()
                seal(client, payload)
                yield clock() - t0
            else:
                record = seal(client, payload)
                t0 = clock()
                open_record(server, record)
                yield clock() - t0
    else:
        raise BenchConfigError(f"no micro-loop for stage {stage!r}")


def measure_stage(stage, iterations: int, warmup: int | None = None,
                  cfg: MicroConfig | None = None, keep_timings: bool = False) -> StageSample:
    """Time ``iterations`` operations of ``stage`` and aggregate all but the first ``warmup``."""
    cfg = cfg or MicroConfig()
    stage = Stage(stage)
    if warmup is None:
        warmup = default_warmup(iterations)
    if not 0 <= warmup < iterations:
        raise ValueError("need iterations > warmup >= 0")
    if stage in CRYPTO_STAGES and cfg.suite is None:
        raise BenchConfigError(f"stage {stage.value} needs a cipher suite")
    with gc_paused():
        timings = list(itertools.islice(stage_timings(stage, cfg), iterations))
    kept = timings[warmup:]
    nbytes = cfg.payload if stage in (Stage.IO_RX, Stage.IO_TX, Stage.CRYPTO_SEAL,
                                      Stage.CRYPTO_OPEN) else None
    conns = cfg.connections if stage in (Stage.TABLE_LOOKUP, Stage.TABLE_INSERT) else None
    return StageSample.from_timings(stage, kept, nbytes, conns, keep_timings)


# -- table growth -----------------------------------------------------------

def predicted_resize_points(n: int, capacity: int = 8, max_load: float = MAX_LOAD) -> list:
    """1-based insert numbers that trigger a doubling, from the growth rule alone."""
    points = []
    cap = capacity
    for i in range(1, n + 1):
        # before inserting entry i there are i - 1 live entries
        if i > cap * max_load:
            points.append(i)
            cap *= 2
    return points


@dataclass
class InsertTrace:
    cycles: list
    capacity: list
    resize_at: list


def insert_trace(n: int, clock: CycleClock | None = None, seed: int | None = None) -> InsertTrace:
    """Per-insert cycles into one fresh table, with the capacity after each insert."""
    clock = clock or CycleClock()
    keys = _keys(n, random.Random(seed))
    table = StateTable()
    cycles, caps, resize_at = [], [], []
    with gc_paused():
        for i, k in enumerate(keys, 1):
            before = table.resize_count
            t0 = clock()
            table.insert(k, None)
            cycles.append(clock() - t0)
            caps.append(table.capacity)
            if table.resize_count != before:
                resize_at.append(i)
    return InsertTrace(cycles, caps, resize_at)


def insert_averages(trace: InsertTrace, points) -> list:
    """``(c, mean cycles per insert over the first c inserts)`` for each c in ``points``."""
    out = []
    total = 0
    cum = []
    for v in trace.cycles:
        total += v
        cum.append(total)
    for c in points:
        if not 1 <= c <= len(cum):
            raise ValueError(f"c={c} outside the trace")
        out.append((c, cum[c - 1] / c))
    return out


# -- handshake cost versus connection count ---------------------------------

def handshake_costs(connection_counts, suite=CipherSuite.AES256_GCM, kex=KexMethod.ECDHE,
                    reuse_kex: bool = True, rounds: int = 3, clock: CycleClock | None = None,
                    rng=None) -> dict:
    """Mean server handshake cycles per connection for each connection count.

    A server that has handled ``c`` connections since start-up has paid
    for ``c`` handshakes plus, with key reuse, one key generation. For a
    fair comparison every count covers the same number of handshakes
    (``max(counts)``, split into ``max/c`` fresh servers of ``c``
    connections each) and the counts take turns handshake by handshake,
    so drift in host speed hits all of them alike. Each handshake
    position is summarised by its median over ``rounds`` (a preemption
    lands in one round, not in all of them) and the result is the mean
    over positions, which keeps the key-generation handshakes at the
    start of every server in the average.
    """
    counts = sorted(set(int(c) for c in connection_counts))
    if not counts or counts[0] < 1:
        raise ValueError("connection counts must be >= 1")
    clock = clock or CycleClock()
    span = counts[-1]
    for c in counts:
        if span % c:
            raise ValueError(f"{c} does not divide {span}; pick counts that nest")
    ccfg = ChannelConfig(suites=(suite,), kex=kex, rng=rng)

    def server_cfg():
        return ChannelConfig(suites=(suite,), kex=kex, reuse_kex=reuse_kex, rng=rng)

    # warm the code paths once before timing anything
    _server_handshake_cycles(server_cfg(), ccfg, clock)
    timings = {c: [[] for _ in range(span)] for c in counts}
    with gc_paused():
        for _ in range(rounds):
            cfgs = {}
            for i in range(span):
                for c in counts:
                    if i % c == 0:
                        cfgs[c] = server_cfg()  # a fresh server: its key pair is not cached yet
                    timings[c][i].append(_server_handshake_cycles(cfgs[c], ccfg, clock))
    return {c: statistics.fmean(statistics.median(v) for v in per_pos)
            for c, per_pos in timings.items()}


def kex_comparison(connections: int = 10, suite=CipherSuite.AES256_GCM, rounds: int = 3,
                   clock: CycleClock | None = None) -> dict:
    """Median server handshake cycles per connection for each key-exchange method."""
    clock = clock or CycleClock()
    methods = list(KexMethod)
    cc = {m: ChannelConfig(suites=(suite,), kex=m) for m in methods}
    for m in methods:
        _server_handshake_cycles(ChannelConfig(suites=(suite,), kex=m), cc[m], clock)
    res = {m: [] for m in methods}
    with gc_paused():
        for _ in range(rounds):
            servers = {m: ChannelConfig(suites=(suite,), kex=m) for m in methods}
            totals = dict.fromkeys(methods, 0)
            for _ in range(connections):
                for m in methods:
                    totals[m] += _server_handshake_cycles(servers[m], cc[m], clock)
            for m in methods:
                res[m].append(totals[m] / connections)
    return {m: statistics.median(v) for m, v in res.items()}
