"""Three-flight handshake driving a :class:`ConnectionState` to ESTABLISHED.

::

    client                                   server
    ClientHello(random, suite, pub)  ----->
                                     <-----  ServerHello(random, suite, pub)
    Finished(client tag)             ----->
                                     <-----  Finished(server tag)

Handshake bodies travel unencrypted in epoch-0 type-22 records. Each
Finished tag is HMAC-SHA256 under a derived finished key over the running
transcript hash. Messages that do not fit the current phase are ignored,
as datagrams may be duplicated or reordered.
"""
from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass, field

from .errors import HandshakeFailure, KexError
from .kex import KexMethod, ServerKeyCache, kex_agree, kex_generate, os_rng
from .keys import RANDOM_LEN, derive_keys
from .record import CT_HANDSHAKE, ConnectionState, Phase, frame
from .suites import CipherSuite

CLIENT_HELLO = 1
SERVER_HELLO = 2
FINISHED = 20

TAG_BYTES = 32


@dataclass
class ChannelConfig:
    """Handshake settings for one side.

    ``suites`` is what a server accepts; a client offers ``suites[0]``.
    ``key_cache`` holds the server's (possibly reused) ephemeral key pair.
    """

    suites: tuple = tuple(CipherSuite)
    kex: KexMethod = KexMethod.ECDHE
    reuse_kex: bool = True
    rng: object = None
    key_cache: ServerKeyCache = field(default=None, repr=False)

    def __post_init__(self):
        self.suites = tuple(CipherSuite(s) for s in self.suites)
        self.kex = KexMethod(self.kex)
        if self.key_cache is None:
            self.key_cache = ServerKeyCache(self.reuse_kex, self.rng)

    def random(self, n: int) -> bytes:
        return (self.rng or os_rng)(n)


def _hello(msg_type, random, suite, pub) -> bytes:
    return struct.pack("!B32sHH", msg_type, random, suite, len(pub)) + pub


def _parse_hello(msg: bytes):
    if len(msg) < 37:
        raise HandshakeFailure("truncated hello")
    _, random, suite, publen = struct.unpack_from("!B32sHH", msg)
    pub = msg[37:]
    if len(pub) != publen:
        raise HandshakeFailure("hello public value length mismatch")
    return random, suite, pub


def _finished_tag(key: bytes, transcript) -> bytes:
    return hmac.new(key, transcript.digest(), hashlib.sha256).digest()


def _record(state: ConnectionState, body: bytes) -> bytes:
    rec = frame(CT_HANDSHAKE, 0, state.hs_seq, body)
    state.hs_seq += 1
    return rec


def start_client(cfg: ChannelConfig):
    """New client state plus its ClientHello record."""
    state = ConnectionState(role="client", suite=cfg.suites[0], kex=cfg.kex)
    state.local_random = cfg.random(RANDOM_LEN)
    state.key_pair = kex_generate(cfg.kex, cfg.rng)
    body = _hello(CLIENT_HELLO, state.local_random, state.suite, state.key_pair.public)
    state.transcript.update(body)
    return state, [_record(state, body)]


def new_server_state(cfg: ChannelConfig) -> ConnectionState:
    return ConnectionState(role="server", kex=cfg.kex)


def _fail(state, reason):
    state.phase = Phase.CLOSED
    raise HandshakeFailure(reason)


def handshake_step(state: ConnectionState, msg: bytes, cfg: ChannelConfig):
    """Consume one handshake body; returns ``(state, response_records)``.

    Raises :class:`HandshakeFailure` on an unacceptable suite, a bad key
    share or a Finished tag mismatch. Out-of-phase messages return no
    response and leave the state untouched.
    """
    if state.phase is Phase.CLOSED:
        raise HandshakeFailure("connection is closed")
    if not msg:
        raise HandshakeFailure("empty handshake message")
    msg_type = msg[0]
    if state.role == "server":
        if msg_type == CLIENT_HELLO and state.phase is Phase.AWAITING_HELLO:
            return state, _server_on_hello(state, msg, cfg)
        if msg_type == FINISHED and state.phase is Phase.AWAITING_FINISHED:
            return state, _server_on_finished(state, msg)
    else:
        if msg_type == SERVER_HELLO and state.phase is Phase.AWAITING_HELLO:
            return state, _client_on_hello(state, msg, cfg)
        if msg_type == FINISHED and state.phase is Phase.AWAITING_FINISHED:
            _client_on_finished(state, msg)
            return state, []
    return state, []


def _server_on_hello(state, msg, cfg):
    client_random, suite_id, client_pub = _parse_hello(msg)
    try:
        suite = CipherSuite(suite_id)
    except ValueError:
        _fail(state, f"unknown cipher suite 0x{suite_id:04x}")
    if suite not in cfg.suites:
        _fail(state, f"cipher suite {suite.name} not enabled")
    pair = cfg.key_cache.get(cfg.kex)
    try:
        shared = kex_agree(cfg.kex, pair.private, client_pub)
    except KexError as exc:
        _fail(state, f"bad client key share: {exc}")
    state.suite = suite
    state.peer_random = client_random
    state.local_random = cfg.random(RANDOM_LEN)
    state.install_keys(derive_keys(shared, client_random, state.local_random, suite))
    body = _hello(SERVER_HELLO, state.local_random, suite, pair.public)
    state.transcript.update(msg)
    state.transcript.update(body)
    state.phase = Phase.AWAITING_FINISHED
    return [_record(state, body)]


def _client_on_hello(state, msg, cfg):
    server_random, suite_id, server_pub = _parse_hello(msg)
    if suite_id != state.suite:
        _fail(state, f"server selected suite 0x{suite_id:04x}, offered 0x{state.suite:04x}")
    try:
        shared = kex_agree(state.kex, state.key_pair.private, server_pub)
    except KexError as exc:
        _fail(state, f"bad server key share: {exc}")
    state.peer_random = server_random
    state.install_keys(derive_keys(shared, state.local_random, server_random, state.suite))
    state.transcript.update(msg)
    tag = _finished_tag(state.keys.client_finished_key, state.transcript)
    body = bytes([FINISHED]) + tag
    state.transcript.update(body)
    state.phase = Phase.AWAITING_FINISHED
    return [_record(state, body)]


def _check_finished(state, msg, key):
    if len(msg) != 1 + TAG_BYTES:
        _fail(state, "malformed Finished")
    expected = _finished_tag(key, state.transcript)
    if not hmac.compare_digest(msg[1:], expected):
        _fail(state, "Finished tag mismatch")


def _server_on_finished(state, msg):
    _check_finished(state, msg, state.keys.client_finished_key)
    state.transcript.update(msg)
    body = bytes([FINISHED]) + _finished_tag(state.keys.server_finished_key, state.transcript)
    rec = _record(state, body)
    state.establish()
    return [rec]


def _client_on_finished(state, msg):
    _check_finished(state, msg, state.keys.server_finished_key)
    state.transcript.update(msg)
    state.establish()
