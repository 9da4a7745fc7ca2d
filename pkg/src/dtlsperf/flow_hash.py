"""Flow identity: 5-tuple extraction and keyed SipHash-2-4.

The 5-tuple of the outer UDP datagram is serialized into a fixed 13-byte
string and hashed under a per-process secret key. The resulting 64-bit
``FlowKey`` indexes the state table and selects the worker.
"""
from __future__ import annotations

import os
import socket
import struct
from dataclasses import dataclass

UDP = 17
MASK64 = 0xFFFFFFFFFFFFFFFF

_TUPLE = struct.Struct("!4s4sHHB")


@dataclass(frozen=True)
class HashKey:
    """128-bit SipHash key split into two little-endian 64-bit words."""

    k0: int
    k1: int

    def __post_init__(self):
        if not (0 <= self.k0 <= MASK64 and 0 <= self.k1 <= MASK64):
            raise ValueError("key words must be 64-bit unsigned")

    @classmethod
    def from_bytes(cls, raw: bytes) -> "HashKey":
        if len(raw) != 16:
            raise ValueError(f"SipHash key must be 16 bytes, got {len(raw)}")
        k0, k1 = struct.unpack("<QQ", raw)
        return cls(k0, k1)

    @classmethod
    def from_hex(cls, text: str) -> "HashKey":
        try:
            raw = bytes.fromhex(text)
        except ValueError as exc:
            raise ValueError(f"invalid hash key {text!r}") from exc
        return cls.from_bytes(raw)

    @classmethod
    def random(cls) -> "HashKey":
        return cls.from_bytes(os.urandom(16))

    def __repr__(self):
        # keep the secret out of logs and reports
        return "HashKey(<secret>)"


@dataclass(frozen=True, order=True)
class FiveTuple:
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: int = UDP

    def __post_init__(self):
        for port in (self.src_port, self.dst_port):
            if not 0 <= port <= 0xFFFF:
                raise ValueError(f"port out of range: {port}")
        if not 0 <= self.protocol <= 0xFF:
            raise ValueError(f"protocol out of range: {self.protocol}")

    def serialize(self) -> bytes:
        """Canonical 13-byte layout: src_ip, dst_ip, ports (big-endian), protocol."""
        return _TUPLE.pack(
            socket.inet_aton(self.src_ip),
            socket.inet_aton(self.dst_ip),
            self.src_port,
            self.dst_port,
            self.protocol,
        )


def extract_five_tuple(dgram, local) -> FiveTuple:
    """Flow identity of a received datagram: source is the peer, destination is us."""
    peer_host, peer_port = dgram.peer
    local_host, local_port = local
    return FiveTuple(peer_host, local_host, peer_port, local_port, UDP)


def _sipround_source(n):
    """Source for ``n`` SipRounds with the rotations written out inline.

    A helper call per rotation dominates the cost of hashing a 13-byte
    tuple in CPython, so the rounds are generated once at import time.
    """
    one = (
        "v0 = (v0 + v1) & M; v1 = ((v1 << 13) | (v1 >> 51)) & M ^ v0; "
        "v0 = ((v0 << 32) | (v0 >> 32)) & M; "
        "v2 = (v2 + v3) & M; v3 = ((v3 << 16) | (v3 >> 48)) & M ^ v2; "
        "v0 = (v0 + v3) & M; v3 = ((v3 << 21) | (v3 >> 43)) & M ^ v0; "
        "v2 = (v2 + v1) & M; v1 = ((v1 << 17) | (v1 >> 47)) & M ^ v2; "
        "v2 = ((v2 << 32) | (v2 >> 32)) & M"
    )
    return "\n".join("        " + one for _ in range(n))


_SIPHASH_SOURCE = f"""
def siphash24(key, data):
    \"\"\"SipHash-2-4 of ``data`` under ``key`` as an unsigned 64-bit integer.\"\"\"
    M = {MASK64}
    v0 = key.k0 ^ 0x736F6D6570736575
    v1 = key.k1 ^ 0x646F72616E646F6D
    v2 = key.k0 ^ 0x6C7967656E657261
    v3 = key.k1 ^ 0x7465646279746573
    n = len(data)
    end = n - (n % 8)
    # final block: trailing bytes little-endian, length in the top byte
    tail = int.from_bytes(data[end:], "little") | ((n & 0xFF) << 56)
    blocks = list(unpack_from(f"<{{end // 8}}Q", data)) if end else []
    blocks.append(tail)
    for m in blocks:
        v3 ^= m
{_sipround_source(2)}
        v0 ^= m
    v2 ^= 0xFF
    if True:
{_sipround_source(4)}
    return v0 ^ v1 ^ v2 ^ v3
"""

_ns = {"unpack_from": struct.unpack_from}
exec(compile(_SIPHASH_SOURCE, __name__ + "._siphash", "exec"), _ns)  # noqa: S102
siphash24 = _ns["siphash24"]
siphash24.__module__ = __name__


def flow_key(key: HashKey, t: FiveTuple) -> int:
    return siphash24(key, t.serialize())
