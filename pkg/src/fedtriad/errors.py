"""Exception hierarchy shared across the simulator."""


class FedTriadError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(FedTriadError):
    """A config value or combination of values is invalid. Carries the offending key."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class InvalidInputError(FedTriadError):
    """An operation received arguments outside its documented domain."""


class FormatError(FedTriadError):
    """A binary/text input could not be parsed. Carries the byte offset when known."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class PartitionError(FedTriadError):
    """Could not produce a valid client partition within the retry budget."""


class DivergenceError(FedTriadError):
    """Training produced a non-finite loss. Carries round/epoch for diagnosis."""

    def __init__(self, message, round_index=None, epoch=None):
        super().__init__(message)
        self.round_index = round_index
        self.epoch = epoch


class CapacityError(FedTriadError):
    """Input exceeds a hard size limit (slot count, search-space bound, ...)."""


class DepthError(FedTriadError):
    """Ciphertext has no modulus levels left for the requested operation."""


class AlignmentError(FedTriadError):
    """Ciphertext operands disagree on level or scale."""


class RangeError(FedTriadError):
    """A value exceeds the representable fixed-point range. Carries the coordinate."""

    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


class InsufficientSharesError(FedTriadError):
    """Fewer than threshold-many share bundles were supplied."""


class AuthenticityError(FedTriadError):
    """Sealed payload failed its integrity check (wrong key or tampering)."""


class ProtocolError(FedTriadError):
    """Share bundles from different clients do not line up index-wise."""


class PipelineOrderError(FedTriadError):
    """A privacy stage received updates in a state it cannot consume."""


class DegenerateRoundError(FedTriadError):
    """Aggregation weights summed to zero; the round update is undefined."""
