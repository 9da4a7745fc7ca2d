class ChannelError(Exception):
    """Base for secure-channel failures."""


class KexError(ChannelError):
    pass


class HandshakeFailure(ChannelError):
    pass


class MalformedRecord(ChannelError):
    pass


class AuthenticationFailure(ChannelError):
    pass


class ReplayRejected(ChannelError):
    pass


class SequenceExhausted(ChannelError):
    pass


class NotEstablished(ChannelError):
    pass
