"""DTLS-style secure channel: key agreement, key schedule, handshake, records."""
from .errors import (AuthenticationFailure, ChannelError, HandshakeFailure, KexError,
                     MalformedRecord, NotEstablished, ReplayRejected, SequenceExhausted)
from .handshake import (ChannelConfig, handshake_step, new_server_state, start_client)
from .kex import KexMethod, KeyPair, ServerKeyCache, kex_agree, kex_generate
from .keys import KeyBlock, derive_keys
from .record import (CT_APPLICATION, CT_HANDSHAKE, HEADER_LEN, MAX_PLAINTEXT, ConnectionState,
                     Phase, RecordHeader, ReplayWindow, open_record, seal)
from .suites import CipherSuite

open = open_record  # noqa: A001  (mirrors seal/open naming)

__all__ = [
    "AuthenticationFailure", "ChannelConfig", "ChannelError", "CipherSuite",
    "ConnectionState", "CT_APPLICATION", "CT_HANDSHAKE", "HEADER_LEN", "HandshakeFailure",
    "KexError", "KexMethod", "KeyBlock", "KeyPair", "MAX_PLAINTEXT", "MalformedRecord",
    "NotEstablished", "Phase", "RecordHeader", "ReplayRejected", "ReplayWindow",
    "SequenceExhausted", "ServerKeyCache", "derive_keys", "handshake_step", "kex_agree",
    "kex_generate", "new_server_state", "open", "open_record", "seal", "start_client",
]
