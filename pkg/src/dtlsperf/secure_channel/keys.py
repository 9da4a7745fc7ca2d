"""HKDF-SHA256 key schedule: one extract, one labelled expand per output."""
from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDFExpand

from .suites import SALT_LEN, CipherSuite

RANDOM_LEN = 32
FINISHED_KEY_LEN = 32
LABEL_PREFIX = b"dtlsperf 1 "


@dataclass(frozen=True)
class KeyBlock:
    client_write_key: bytes
    server_write_key: bytes
    client_salt: bytes
    server_salt: bytes
    client_finished_key: bytes
    server_finished_key: bytes


def _expand(prk: bytes, label: str, length: int) -> bytes:
    return HKDFExpand(hashes.SHA256(), length, LABEL_PREFIX + label.encode()).derive(prk)


def derive_keys(shared: bytes, client_random: bytes, server_random: bytes,
                suite: CipherSuite) -> KeyBlock:
    if len(client_random) != RANDOM_LEN or len(server_random) != RANDOM_LEN:
        raise ValueError("randoms must be 32 bytes")
    suite = CipherSuite(suite)
    prk = hmac.new(client_random + server_random, shared, hashlib.sha256).digest()
    # the suite id is bound into every label so suites never share keys
    tag = f" {suite.value:04x}"
    return KeyBlock(
        client_write_key=_expand(prk, "c key" + tag, suite.key_len),
        server_write_key=_expand(prk, "s key" + tag, suite.key_len),
        client_salt=_expand(prk, "c salt" + tag, SALT_LEN),
        server_salt=_expand(prk, "s salt" + tag, SALT_LEN),
        client_finished_key=_expand(prk, "c finished" + tag, FINISHED_KEY_LEN),
        server_finished_key=_expand(prk, "s finished" + tag, FINISHED_KEY_LEN),
    )
