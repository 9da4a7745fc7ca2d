import random
import threading

import pytest

from dtlsperf.bench.clock import Stage
from dtlsperf.flow_hash import HashKey, extract_five_tuple, flow_key
from dtlsperf.gateway import Gateway, GatewayConfig, Worker, dispatch, run_worker
from dtlsperf.packet_io import Datagram, LoopbackHub
from dtlsperf.secure_channel import (HEADER_LEN, ChannelConfig, Phase, handshake_step,
                                     open_record, seal, start_client)

SERVER = ("10.0.0.2", 4433)


def _handshake(worker, client_io):
    ccfg = ChannelConfig()
    state, recs = start_client(ccfg)
    while recs:
        out = []
        for r in recs:
            for resp in worker.process_packet(Datagram(r, client_io.local)):
                _, more = handshake_step(state, resp.payload[HEADER_LEN:], ccfg)
                out.extend(more)
        recs = out
    assert state.phase is Phase.ESTABLISHED
    return state


@pytest.fixture
def setup(fixed_key):
    hub = LoopbackHub()
    server_io = hub.open(SERVER)
    worker = Worker(0, server_io, SERVER, fixed_key, GatewayConfig(instrument=True))
    return hub, server_io, worker


def test_dispatch_basics():
    assert dispatch(12345, 1) == 0
    assert dispatch(10, 4) == 2
    with pytest.raises(ValueError):
        dispatch(1, 0)


def test_dispatch_distribution():
    rnd = random.Random(8)
    counts = [0] * 4
    for _ in range(100_000):
        counts[dispatch(rnd.getrandbits(64), 4)] += 1
    assert all(0.20 <= c / 100_000 <= 0.30 for c in counts)


def test_new_connection_path(setup):
    hub, _, worker = setup
    client = hub.open(("10.9.0.1", 5000))
    state, recs = start_client(ChannelConfig())
    out = worker.process_packet(Datagram(recs[0], client.local))
    assert len(out) == 1 and out[0].peer == client.local
    assert len(worker.table) == 1


def test_echo(setup):
    hub, _, worker = setup
    client = hub.open(("10.9.0.1", 5000))
    state = _handshake(worker, client)
    assert worker.stats.handshakes == 1
    out = worker.process_packet(Datagram(seal(state, b"ping"), client.local))
    assert len(out) == 1
    assert open_record(state, out[0].payload) == b"ping"


def test_garbage_on_unknown_flow(setup):
    hub, _, worker = setup
    out = worker.process_packet(Datagram(b"\x00garbage-garbage", ("10.9.9.9", 1)))
    assert out == [] and worker.stats.dropped == 1 and len(worker.table) == 0
    out = worker.process_packet(Datagram(b"x", ("10.9.9.9", 1)))
    assert out == [] and worker.stats.drops["malformed"] == 1


def test_application_before_handshake_dropped(setup):
    hub, _, worker = setup
    client = hub.open(("10.9.0.1", 5000))
    state = _handshake(worker, client)
    rec = seal(state, b"data")
    other = ("10.9.0.2", 5000)
    assert worker.process_packet(Datagram(rec, other)) == []
    assert worker.stats.drops["unknown_flow"] == 1


def test_tampered_and_replayed_records_dropped(setup):
    hub, _, worker = setup
    client = hub.open(("10.9.0.1", 5000))
    state = _handshake(worker, client)
    rec = seal(state, b"data")
    bad = bytearray(rec)
    bad[-1] ^= 1
    assert worker.process_packet(Datagram(bytes(bad), client.local)) == []
    assert worker.stats.drops["AuthenticationFailure"] == 1
    assert len(worker.process_packet(Datagram(rec, client.local))) == 1
    assert worker.process_packet(Datagram(rec, client.local)) == []
    assert worker.stats.drops["ReplayRejected"] == 1


def test_connection_limit(fixed_key):
    hub = LoopbackHub()
    io = hub.open(SERVER)
    worker = Worker(0, io, SERVER, fixed_key, GatewayConfig(max_connections=1))
    _handshake(worker, hub.open(("10.9.0.1", 1)))
    _, recs = start_client(ChannelConfig())
    assert worker.process_packet(Datagram(recs[0], ("10.9.0.2", 1))) == []
    assert worker.stats.drops["connection_limit"] == 1


def test_run_worker_stop_before_traffic(setup):
    _, _, worker = setup
    stop = threading.Event()
    stop.set()
    stats = run_worker(worker, stop)
    assert stats.rx_packets == 0 and stats.tx_packets == 0 and stats.dropped == 0


def test_run_worker_counts_and_stage_cycles(setup):
    hub, server_io, worker = setup
    client = hub.open(("10.9.0.1", 5000))
    state = _handshake(worker, client)
    worker.stats.rx_packets = worker.stats.tx_packets = 0
    client.tx_batch([Datagram(seal(state, b"p%d" % i), SERVER) for i in range(100)])
    stop = threading.Event()
    t = threading.Thread(target=run_worker, args=(worker, stop))
    t.start()
    got = []
    while len(got) < 100:
        got.extend(client.rx_batch(64))
    stop.set()
    t.join()
    assert worker.stats.rx_packets == 100 and worker.stats.tx_packets == 100
    assert sorted(open_record(state, d.payload) for d in got) == sorted(b"p%d" % i
                                                                         for i in range(100))
    for stage in (Stage.IO_RX, Stage.IO_TX, Stage.HASH, Stage.TABLE_LOOKUP,
                  Stage.CRYPTO_OPEN, Stage.CRYPTO_SEAL):
        assert worker.stats.stage_cycles[stage] > 0
    attributed = sum(v for k, v in worker.stats.stage_cycles.items() if k != Stage.IO_RX)
    assert worker.stats.total_cycles >= attributed


def _multi_worker_run(n, flows, packets):
    hub = LoopbackHub()
    io = hub.open(SERVER)
    gw = Gateway(io, workers=n, hash_key=HashKey.from_bytes(bytes(16)))
    ccfg = ChannelConfig()
    clients = []
    for i in range(flows):
        cio = hub.open((f"10.8.0.{i + 1}", 7000 + i))
        state, recs = start_client(ccfg)
        cio.tx_batch([Datagram(r, SERVER) for r in recs])
        clients.append((cio, state))
    for _ in range(2):
        gw.drain()
        for cio, state in clients:
            for d in cio.rx_batch(64):
                _, out = handshake_step(state, d.payload[HEADER_LEN:], ccfg)
                cio.tx_batch([Datagram(r, SERVER) for r in out])
    gw.drain()
    sent = {}
    for k in range(packets):
        cio, state = clients[k % flows]
        msg = b"%d" % k
        sent.setdefault(cio.local, []).append(msg)
        cio.tx_batch([Datagram(seal(state, msg), SERVER)])
    gw.drain()
    return gw, clients, sent


def test_multi_worker_echo_and_affinity():
    gw, clients, sent = _multi_worker_run(4, 20, 400)
    for cio, state in clients:
        got = [open_record(state, d.payload) for d in cio.rx_batch(1000)]
        assert sorted(got) == sorted(sent[cio.local])
    # share-nothing: every flow lives in exactly the worker the dispatcher picks
    tables = [set(w.table.keys()) for w in gw.workers]
    for i, a in enumerate(tables):
        for b in tables[i + 1:]:
            assert not a & b
    for cio, _ in clients:
        key = flow_key(gw.hash_key, extract_five_tuple(Datagram(b"", cio.local), SERVER))
        assert key in tables[dispatch(key, 4)]
    assert gw.totals().echoes == 400
