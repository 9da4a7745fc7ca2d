"""Ephemeral key agreement: X25519 (ECDHE) and the 2048-bit MODP group (DHE)."""
from __future__ import annotations

import enum
import hmac
import os
from dataclasses import dataclass

from cryptography.hazmat.primitives.asymmetric import dh, x25519

from .errors import KexError

# 2048-bit MODP group, generator 2 (RFC 3526 group 14)
MODP2048_P = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
    "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
    "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
    "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
    "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718"
    "3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF",
    16,
)
MODP2048_G = 2
DHE_BYTES = 256
DHE_EXPONENT_BYTES = 32

_DH_NUMBERS = dh.DHParameterNumbers(MODP2048_P, MODP2048_G)
_DH_PARAMS = _DH_NUMBERS.parameters()


class KexMethod(enum.Enum):
    ECDHE = "ecdhe"
    DHE = "dhe"

    @property
    def public_len(self) -> int:
        return 32 if self is KexMethod.ECDHE else DHE_BYTES

    @property
    def secret_len(self) -> int:
        return 32 if self is KexMethod.ECDHE else DHE_BYTES


@dataclass(frozen=True)
class KeyPair:
    method: KexMethod
    private: object
    public: bytes


def kex_generate(method: KexMethod, rng=None) -> KeyPair:
    """Fresh key pair. ``rng(n) -> bytes`` overrides OS randomness (tests, --seed)."""
    method = KexMethod(method)
    try:
        if method is KexMethod.ECDHE:
            if rng is None:
                priv = x25519.X25519PrivateKey.generate()
            else:
                priv = x25519.X25519PrivateKey.from_private_bytes(rng(32))
            pub = priv.public_key().public_bytes_raw()
        else:
            if rng is None:
                priv = _DH_PARAMS.generate_private_key()
            else:
                x = int.from_bytes(rng(DHE_EXPONENT_BYTES), "big") | 1 << (8 * DHE_EXPONENT_BYTES - 1)
                y = pow(MODP2048_G, x, MODP2048_P)
                priv = dh.DHPrivateNumbers(x, dh.DHPublicNumbers(y, _DH_NUMBERS)).private_key()
            y = priv.public_key().public_numbers().y
            pub = y.to_bytes(DHE_BYTES, "big")
    except Exception as exc:  # randomness or backend failure
        raise KexError(f"{method.value} key generation failed: {exc}") from exc
    return KeyPair(method, priv, pub)


def kex_agree(method: KexMethod, own_private, peer_public: bytes) -> bytes:
    """Shared secret from our private key and the peer's encoded public value."""
    method = KexMethod(method)
    if len(peer_public) != method.public_len:
        raise KexError(f"{method.value} public value must be {method.public_len} bytes, "
                       f"got {len(peer_public)}")
    if method is KexMethod.ECDHE:
        try:
            peer = x25519.X25519PublicKey.from_public_bytes(peer_public)
            shared = own_private.exchange(peer)
        except ValueError as exc:
            # the backend refuses low-order points that yield an all-zero secret
            raise KexError(f"degenerate peer public value: {exc}") from exc
    else:
        y = int.from_bytes(peer_public, "big")
        if not 1 < y < MODP2048_P - 1:
            raise KexError("DHE public value outside (1, p-1)")
        try:
            peer = dh.DHPublicNumbers(y, _DH_NUMBERS).public_key()
            shared = own_private.exchange(peer)
        except ValueError as exc:
            raise KexError(f"DHE agreement failed: {exc}") from exc
        shared = shared.rjust(DHE_BYTES, b"\0")
    if hmac.compare_digest(shared, bytes(len(shared))):
        raise KexError("all-zero shared secret")
    return shared


class ServerKeyCache:
    """Server ephemeral key pair, optionally reused across connections.

    With ``reuse`` the first connection pays for key generation and later
    connections only pay for the agreement. Owned by one worker.
    """

    def __init__(self, reuse: bool = True, rng=None):
        self.reuse = reuse
        self.rng = rng
        self._pairs = {}
        self.generated = 0

    def get(self, method: KexMethod) -> KeyPair:
        pair = self._pairs.get(method) if self.reuse else None
        if pair is None:
            pair = kex_generate(method, self.rng)
            self.generated += 1
            if self.reuse:
                self._pairs[method] = pair
        return pair


def os_rng(n: int) -> bytes:
    return os.urandom(n)
