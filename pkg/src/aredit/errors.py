"""Exception hierarchy shared across the pipeline."""


class AreditError(Exception):
    """Base class for everything this package raises on purpose."""


class ContractViolation(AreditError):
    """An argument or state violated a documented precondition."""


class ShapeMismatch(ContractViolation):
    """Array shapes incompatible with the requested operation."""


class CacheFormatError(AreditError):
    """Base for persisted-cache parsing problems."""


class BadMagic(CacheFormatError):
    pass


class VersionMismatch(CacheFormatError):
    pass


class Truncated(CacheFormatError):
    pass


class HashMismatch(CacheFormatError):
    pass


class FingerprintMismatch(AreditError):
    """Cache was built against a different model."""


class MissingAttention(AreditError):
    """Attention control requested but the cache holds no attention maps."""


class UnsupportedOperation(AreditError):
    """Operation not available for this backend."""
