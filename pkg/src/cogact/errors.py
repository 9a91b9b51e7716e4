"""Exception hierarchy.

``DataError`` subclasses describe bad input data (exit code 2 at the CLI);
everything else that escapes is treated as an internal failure.
"""


class DataError(Exception):
    """Input data violates a documented contract."""


class MissingChannel(DataError):
    pass


class NonUniformSampling(DataError):
    pass


class OverlappingLabels(DataError):
    pass


class NaNSample(DataError):
    pass


class TooShort(DataError):
    pass


class FlatSignal(DataError):
    pass


class UnknownPlayer(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class SinglePlayerCorpus(DataError):
    pass


class InsufficientRounds(DataError):
    pass


class SamePlayer(DataError):
    pass


class EmptyDataset(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class FeatureOrderMismatch(DataError):
    pass


class VersionMismatch(DataError):
    pass


class CorruptModel(DataError):
    pass


class EmptyMatrix(DataError):
    pass
