"""Record framing, AEAD protection and the anti-replay window.

Wire layout (13-byte header, all big-endian)::

    type(1) | 0xFE 0xFD | epoch(2) | seq(6) | length(2) | body

Nonce is ``salt(4) || epoch(2) || seq(6)``; the AAD is the 13 header bytes.
"""
from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag

from .errors import (AuthenticationFailure, MalformedRecord, NotEstablished,
                     ReplayRejected, SequenceExhausted)
from .suites import TAG_LEN, CipherSuite

HEADER_LEN = 13
VERSION = b"\xfe\xfd"
MAX_SEQ = (1 << 48) - 1
MAX_BODY = 1459  # 1472-byte MTU budget minus header
MAX_PLAINTEXT = MAX_BODY - TAG_LEN
WINDOW = 64

CT_HANDSHAKE = 22
CT_APPLICATION = 23

_HDR = struct.Struct("!B2sHHIH")  # seq split into high 16 and low 32 bits


class Phase(enum.Enum):
    AWAITING_HELLO = "awaiting_hello"
    AWAITING_FINISHED = "awaiting_finished"
    ESTABLISHED = "established"
    CLOSED = "closed"


@dataclass(frozen=True)
class RecordHeader:
    content_type: int
    epoch: int
    seq: int
    length: int

    def pack(self) -> bytes:
        return _HDR.pack(self.content_type, VERSION, self.epoch,
                         self.seq >> 32, self.seq & 0xFFFFFFFF, self.length)

    @classmethod
    def parse(cls, record: bytes) -> "RecordHeader":
        if len(record) < HEADER_LEN:
            raise MalformedRecord(f"record shorter than header ({len(record)} bytes)")
        ctype, version, epoch, seq_hi, seq_lo, length = _HDR.unpack_from(record)
        if version != VERSION:
            raise MalformedRecord(f"bad version {version.hex()}")
        if ctype not in (CT_HANDSHAKE, CT_APPLICATION):
            raise MalformedRecord(f"unknown content type {ctype}")
        if length != len(record) - HEADER_LEN or length > MAX_BODY:
            raise MalformedRecord(f"length field {length} does not match body")
        return cls(ctype, epoch, (seq_hi << 32) | seq_lo, length)


def frame(content_type: int, epoch: int, seq: int, body: bytes) -> bytes:
    return RecordHeader(content_type, epoch, seq, len(body)).pack() + body


@dataclass
class ReplayWindow:
    """Sliding 64-entry bitmap; bit i marks ``highest - i`` as seen."""

    highest: int = -1
    bitmap: int = 0

    def check(self, seq: int):
        if seq > self.highest:
            return
        offset = self.highest - seq
        if offset >= WINDOW:
            raise ReplayRejected(f"seq {seq} is older than the window")
        if self.bitmap >> offset & 1:
            raise ReplayRejected(f"seq {seq} already accepted")

    def mark(self, seq: int):
        if seq > self.highest:
            shift = seq - self.highest
            self.bitmap = ((self.bitmap << shift) | 1) & ((1 << WINDOW) - 1) if shift < WINDOW else 1
            self.highest = seq
        else:
            self.bitmap |= 1 << (self.highest - seq)


@dataclass
class ConnectionState:
    """Per-flow channel state, owned by exactly one worker."""

    role: str  # "client" or "server"
    phase: Phase = Phase.AWAITING_HELLO
    suite: CipherSuite | None = None
    kex: object = None
    send_key: bytes = b""
    recv_key: bytes = b""
    send_salt: bytes = b""
    recv_salt: bytes = b""
    epoch: int = 0
    send_seq: int = 0
    replay: ReplayWindow = field(default_factory=ReplayWindow)
    transcript: object = field(default_factory=hashlib.sha256)
    packets_in: int = 0
    packets_out: int = 0
    bytes_in: int = 0
    bytes_out: int = 0
    # handshake scratch
    hs_seq: int = 0
    local_random: bytes = b""
    peer_random: bytes = b""
    key_pair: object = None
    keys: object = None
    _send_aead: object = field(default=None, repr=False)
    _recv_aead: object = field(default=None, repr=False)

    def install_keys(self, keys):
        if self.role == "client":
            self.send_key, self.recv_key = keys.client_write_key, keys.server_write_key
            self.send_salt, self.recv_salt = keys.client_salt, keys.server_salt
        else:
            self.send_key, self.recv_key = keys.server_write_key, keys.client_write_key
            self.send_salt, self.recv_salt = keys.server_salt, keys.client_salt
        self.keys = keys
        self._send_aead = self.suite.aead(self.send_key)
        self._recv_aead = self.suite.aead(self.recv_key)

    def establish(self):
        self.phase = Phase.ESTABLISHED
        self.epoch = 1
        self.send_seq = 0
        self.replay = ReplayWindow()
        self.key_pair = None  # drop the private key once keys are installed


def _nonce(salt: bytes, epoch: int, seq: int) -> bytes:
    return salt + ((epoch << 48) | seq).to_bytes(8, "big")


def seal(state: ConnectionState, plaintext: bytes) -> bytes:
    """Protect ``plaintext`` as one application record and advance ``send_seq``."""
    if state.phase is not Phase.ESTABLISHED:
        raise NotEstablished(f"cannot seal in phase {state.phase.value}")
    if len(plaintext) > MAX_PLAINTEXT:
        raise ValueError(f"plaintext exceeds {MAX_PLAINTEXT} bytes")
    seq = state.send_seq
    if seq > MAX_SEQ:
        raise SequenceExhausted("send sequence space exhausted")
    header = RecordHeader(CT_APPLICATION, state.epoch, seq, len(plaintext) + TAG_LEN).pack()
    body = state._send_aead.encrypt(_nonce(state.send_salt, state.epoch, seq), plaintext, header)
    state.send_seq = seq + 1
    state.packets_out += 1
    state.bytes_out += len(plaintext)
    return header + body


def open_record(state: ConnectionState, record: bytes) -> bytes:
    """Authenticate and decrypt one application record."""
    if state.phase is not Phase.ESTABLISHED:
        raise NotEstablished(f"cannot open in phase {state.phase.value}")
    hdr = RecordHeader.parse(record)
    if hdr.content_type != CT_APPLICATION:
        raise MalformedRecord("not an application record")
    if hdr.length < TAG_LEN:
        raise MalformedRecord("body shorter than the tag")
    if hdr.epoch != state.epoch:
        raise MalformedRecord(f"unexpected epoch {hdr.epoch}")
    state.replay.check(hdr.seq)
    try:
        plaintext = state._recv_aead.decrypt(
            _nonce(state.recv_salt, hdr.epoch, hdr.seq), record[HEADER_LEN:], record[:HEADER_LEN])
    except InvalidTag:
        raise AuthenticationFailure("record failed authentication") from None
    state.replay.mark(hdr.seq)
    state.packets_in += 1
    state.bytes_in += len(plaintext)
    return plaintext
