"""Exception hierarchy shared by every module of the package."""


class XdjdlError(Exception):
    """Base class for all errors raised by :mod:`xdjdl`."""


# preprocessing
class SequenceTooShort(XdjdlError, ValueError):
    pass


class InsufficientPeaks(XdjdlError, ValueError):
    pass


class DegenerateCycle(XdjdlError, ValueError):
    pass


class EmptyDataset(XdjdlError, ValueError):
    pass


# numerics
class DimensionMismatch(XdjdlError, ValueError):
    pass


class SparsityExceedsAtoms(XdjdlError, ValueError):
    pass


class TooFewSamples(XdjdlError, ValueError):
    pass


class SingularSystem(XdjdlError, ArithmeticError):
    pass


class NonFiniteObjective(XdjdlError, ArithmeticError):
    pass


class LabelOutOfRange(XdjdlError, ValueError):
    pass


# evaluation
class DegenerateInput(XdjdlError, ValueError):
    pass


class MissingFiducials(XdjdlError, ValueError):
    pass


class EmptyAfterExclusion(XdjdlError, ValueError):
    pass


# synthetic data
class InvalidParams(XdjdlError, ValueError):
    pass


class CombinatorialGuard(XdjdlError, ValueError):
    pass


# persistence
class FormatError(XdjdlError, ValueError):
    """Malformed file content."""


class BadMagic(FormatError):
    pass


class UnsupportedVersion(FormatError):
    pass


class CorruptEntryTable(FormatError):
    pass


class ShapeMismatch(FormatError):
    pass


class ParseError(FormatError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
