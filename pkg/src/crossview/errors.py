"""Exception taxonomy shared across the package.

Every error raised by library code derives from :class:`CrossviewError` so
callers (notably the CLI) can map failures to exit codes without matching
on message text.
"""

from __future__ import annotations


class CrossviewError(Exception):
    """Base class for all package errors."""


# --- file and collection errors -------------------------------------------

class MalformedFile(CrossviewError):
    """File does not conform to its declared format (bad magic, truncation,
    wrong row arity, unparsable cell)."""


class DimensionMismatch(CrossviewError):
    """Vector or matrix dimension differs from the declared/required one."""


class DuplicateId(CrossviewError):
    """A record id occurs more than once within one collection."""


class NonFiniteValue(CrossviewError):
    """A stored vector entry is NaN or infinite."""


class IoFailure(CrossviewError):
    """Underlying read/write failed (permissions, missing directory, ...)."""


# --- numerics --------------------------------------------------------------

class NotSymmetric(CrossviewError):
    """Input matrix is not symmetric within tolerance."""


class NoConvergence(CrossviewError):
    """Iterative solver hit its sweep cap before reaching tolerance."""


class InsufficientSamples(CrossviewError):
    """Fewer samples than the estimator requires."""


class BadTargetDim(CrossviewError):
    """Requested projection dimension is outside the valid range."""


class NonFiniteInput(CrossviewError):
    """Runtime numeric input contains NaN or infinity."""


class MalformedModel(CrossviewError):
    """A persisted whitening model violates its invariants."""


# --- retrieval and evaluation ---------------------------------------------

class EmptyGallery(CrossviewError):
    """Search requested against a gallery with no records."""


class MissingGroundTruth(CrossviewError):
    """A query in the results has no ground-truth entry."""


class MissingQueryEmbedding(CrossviewError):
    """No precomputed embedding exists for a generated satellite tile."""


# --- external service clients ----------------------------------------------

class ClientError(CrossviewError):
    """Base class for geo-service client failures."""


class UnknownImage(ClientError):
    """Image search has no fixture/result for the given image reference."""


class NoLocationFound(ClientError):
    """Location inference produced an empty or unusable answer."""


class PlaceNotFound(ClientError):
    """Geocoder has no coordinate for the given place name."""


class AmbiguousPlace(ClientError):
    """Geocoder returned multiple results with no usable best hit."""


class TileUnavailable(ClientError):
    """No satellite tile available for the requested coordinate."""


class UpstreamFailure(ClientError):
    """Live service kept failing after the configured retries."""


class RateLimited(ClientError):
    """Live service rejected the request for rate reasons after retries."""


class EmptyContext(CrossviewError):
    """Context aggregation received only empty snippets."""


class ConfigurationError(CrossviewError):
    """Client or CLI configuration is incomplete or inconsistent."""
