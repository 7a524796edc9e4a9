"""Exception types shared across the protocol modules."""


class ProtocolError(Exception):
    """Base class for every error raised by this package."""


# --- ledger ---------------------------------------------------------------

class PermissionDenied(ProtocolError):
    pass


class InvalidSignature(ProtocolError):
    pass


class AuthenticationFailure(ProtocolError):
    pass


class UnknownBlockRef(ProtocolError):
    pass


# --- query service --------------------------------------------------------

class NotVerified(ProtocolError):
    pass


class DuplicateId(ProtocolError):
    pass


class UnknownAlgorithm(ProtocolError):
    pass


class DisallowedField(ProtocolError):
    pass


class SuppressedInput(ProtocolError):
    pass


class ZeroBaseline(ProtocolError):
    pass


# --- audit ----------------------------------------------------------------

class MismatchedIds(ProtocolError):
    pass


# --- model store ----------------------------------------------------------

class DimensionMismatch(ProtocolError):
    pass


class NonFiniteParams(ProtocolError):
    pass


class UnknownVersion(ProtocolError):
    pass


class NoConsensualVersion(ProtocolError):
    pass


class StaleBase(ProtocolError):
    pass


# --- learner --------------------------------------------------------------

class EmptyBatch(ProtocolError):
    pass


class EmptyUpdates(ProtocolError):
    pass


# --- consensus ------------------------------------------------------------

class RoundInProgress(ProtocolError):
    pass


class OrphanCandidate(ProtocolError):
    pass


class RoundClosed(ProtocolError):
    pass


class DuplicateFeedback(ProtocolError):
    pass


class LateFeedback(ProtocolError):
    pass


class RoundNotOpen(ProtocolError):
    pass


class NotAccepted(ProtocolError):
    pass


class RoundNotResolved(ProtocolError):
    pass


class WrongSigner(ProtocolError):
    pass


# --- simulator ------------------------------------------------------------

class InvalidConfig(ProtocolError):
    pass


class MissingArtifacts(ProtocolError):
    pass


class KeyRequired(ProtocolError):
    pass
