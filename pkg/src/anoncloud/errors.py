"""Exception types shared across the protocol modules.

Everything that a protocol operation can raise on purpose derives from
ProtocolError, so callers can distinguish modelled failures from bugs.
Configuration and transcript-format problems get their own roots because
they belong to the tooling layer, not the protocol itself.
"""


class ProtocolError(Exception):
    """Base class for failures that the protocol explicitly models."""


class WrongRecipient(ProtocolError):
    """A sealed box or onion layer was opened with a non-matching key pair."""


class Corrupt(ProtocolError):
    """A sealed box body failed structural parsing or integrity checking."""


class AccessDenied(ProtocolError):
    """The requester is not allowed to see the directory listing."""


class DuplicateNode(ProtocolError):
    """A node registration collides with an existing true id or pseudonym."""


class CapacityError(ProtocolError):
    """Not enough distinct slave nodes to satisfy the request."""


class UnknownService(ProtocolError):
    """The requested service number is not in the manager's catalog."""


class TokenReplay(ProtocolError):
    """A token was presented again after it had already been redeemed."""


class DeadAgent(ProtocolError):
    """An operation touched an agent process after it was killed."""


class UnknownPayment(ProtocolError):
    """A payment notification did not match any open payment session."""


class StaleCircuit(ProtocolError):
    """A circuit from an earlier rotation epoch was offered for use."""


class RoutingError(ProtocolError):
    """A relay could not resolve the next-hop pseudonym."""


class EvalError(ProtocolError):
    """A job or sub-job payload was malformed or not evaluable."""


class JobSyntaxError(EvalError):
    """A job expression failed to parse."""


class SubJobError(ProtocolError):
    """A sub-job failed on its assigned slave node.

    Carries the index of the failing sub-job so the master node can
    report which part of the decomposition went wrong.
    """

    def __init__(self, index: int, message: str):
        super().__init__(f"sub-job {index}: {message}")
        self.index = index


class NotReady(ProtocolError):
    """Aggregate results were requested before every sub-result arrived."""


class UnknownPrincipal(ProtocolError):
    """A knowledge query named a principal absent from the key inventory."""


class LivelockSuspected(ProtocolError):
    """The delivery loop exceeded its step budget without going quiescent."""


class ConfigError(Exception):
    """A scenario configuration failed to parse or violated an invariant."""


class SchemaError(Exception):
    """A transcript file carried an unsupported schema version or shape."""
