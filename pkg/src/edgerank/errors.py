"""Exception hierarchy shared by every module."""


class EdgeRankError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(EdgeRankError, ValueError):
    pass


class FormatError(EdgeRankError, ValueError):
    """A map file has a bad header or a truncated payload."""


class RangeError(EdgeRankError, ValueError):
    """A map holds values outside the range its type allows."""


class InvalidAnnotationSet(EdgeRankError, ValueError):
    pass


class NoPositivesError(EdgeRankError, ValueError):
    """Rank/sort losses are undefined without at least one positive pixel."""


class CertaintyCoverageError(EdgeRankError, ValueError):
    pass


class ConfigError(EdgeRankError, ValueError):
    pass


class DatasetError(EdgeRankError, ValueError):
    pass
