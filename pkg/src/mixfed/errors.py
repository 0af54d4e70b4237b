"""Exception types raised by the library.

Every contract violation raises a subclass of :class:`MixfedError` so callers
can catch library failures without swallowing unrelated bugs.
"""


class MixfedError(Exception):
    """Base class for all errors raised by this package."""


# numeric core
class ShapeMismatch(MixfedError):
    """Operands have incompatible shapes for the requested op."""


class NonFiniteValue(MixfedError):
    """An op produced (or was handed) NaN or infinity."""


class NoTape(MixfedError):
    """backward() called on a value with no open gradient tape."""


class NonScalarLoss(MixfedError):
    """backward() requires a scalar loss."""


class MissingGrad(MixfedError):
    """Optimizer step requested while a parameter has no gradient."""


class BadDims(MixfedError):
    """Invalid architecture dimensions."""


# networks
class UnknownModality(MixfedError):
    """Modality not in the client's (or the experiment's) modality set."""


class IncompleteRepList(MixfedError):
    """Decoder input must cover every modality, in global order."""


# losses
class EmptyBatch(MixfedError):
    """A loss was evaluated over zero instances."""


class VectorTooShort(MixfedError):
    """Entropy needs at least two vector components."""


class EmptyTripletSet(MixfedError):
    """Anchor/positive/negative set empty despite >=2 modalities (wiring bug)."""


class BundleMismatch(MixfedError):
    """Parameter bundles do not share a manifest."""


# prototype memory
class TooFewPoints(MixfedError):
    """Fewer points than requested cluster centers."""


class DimMismatch(MixfedError):
    """Prototype dimensionality differs from the bank's."""


class EmptyBank(MixfedError):
    """Retrieval from a modality bank that holds no prototypes."""


# federation
class EmptyFederation(MixfedError):
    """No clients registered."""


class EmptyGroup(MixfedError):
    """Aggregation requested over an empty client group."""


# configuration
class ConfigError(MixfedError):
    """Invalid or unknown configuration content."""
