from __future__ import annotations

import enum

from cryptography.hazmat.primitives.ciphers.aead import AESGCM, ChaCha20Poly1305

TAG_LEN = 16
NONCE_LEN = 12
SALT_LEN = 4


class CipherSuite(enum.IntEnum):
    AES128_GCM = 0x0001
    AES256_GCM = 0x0002
    CHACHA20_POLY1305 = 0x0003

    @property
    def key_len(self) -> int:
        return 16 if self is CipherSuite.AES128_GCM else 32

    def aead(self, key: bytes):
        if len(key) != self.key_len:
            raise ValueError(f"{self.name} needs a {self.key_len}-byte key")
        if self is CipherSuite.CHACHA20_POLY1305:
            return ChaCha20Poly1305(key)
        return AESGCM(key)

    @classmethod
    def from_name(cls, name: str) -> "CipherSuite":
        try:
            return SUITE_NAMES[name.lower()]
        except KeyError:
            raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITE_NAMES)}") from None

    @property
    def short_name(self) -> str:
        return {v: k for k, v in SUITE_NAMES.items()}[self]


SUITE_NAMES = {
    "aes128gcm": CipherSuite.AES128_GCM,
    "aes256gcm": CipherSuite.AES256_GCM,
    "chacha20": CipherSuite.CHACHA20_POLY1305,
}
