"""Exception types shared across the package.

Every data-dependent failure raises one of these so callers (and the CLI)
can distinguish bad input from programming errors. All inherit from
DeepbowError.
"""


class DeepbowError(Exception):
    """Base class for all deepbow errors."""


# --- file / container errors ---

class BadMagic(DeepbowError):
    pass


class VersionMismatch(DeepbowError):
    pass


class TruncatedFile(DeepbowError):
    pass


class IoFailure(DeepbowError):
    pass


class ParseError(DeepbowError):
    pass


# --- data validation ---

class DimensionMismatch(DeepbowError):
    pass


class DuplicateImageId(DeepbowError):
    pass


class UnknownId(DeepbowError):
    pass


class OutOfBounds(DeepbowError):
    pass


class InvalidBlock(DeepbowError):
    pass


class DegenerateVector(DeepbowError):
    pass


# --- vocabulary / sketching ---

class TooFewPoints(DeepbowError):
    pass


class MaTooLarge(DeepbowError):
    pass


class UnknownWord(DeepbowError):
    pass


class NoTrainingData(DeepbowError):
    pass


class LengthMismatch(DeepbowError):
    pass


# --- curve fitting ---

class NoSamples(DeepbowError):
    pass


class DegenerateFit(DeepbowError):
    pass


# --- index / search ---

class DuplicateImage(DeepbowError):
    pass


class Finalized(DeepbowError):
    pass


class EmptyIndex(DeepbowError):
    pass


class MissingContexts(DeepbowError):
    pass


# --- evaluation ---

class NoRelevant(DeepbowError):
    pass


class BadGroup(DeepbowError):
    pass
