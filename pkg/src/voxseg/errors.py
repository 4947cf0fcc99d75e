"""Error taxonomy shared across the package.

ContractViolation covers misuse of an operation's preconditions, FormatError
covers malformed files, NumericDivergence covers NaN/Inf states that abort a
computation.  The CLI maps these onto distinct exit codes.
"""


class VoxsegError(Exception):
    pass


class ContractViolation(VoxsegError):
    pass


class FormatError(VoxsegError):
    pass


class NumericDivergence(VoxsegError):
    pass


class UndefinedMetric(VoxsegError):
    """A metric has no value for this input (e.g. surface distance of an
    empty mask); callers exclude and flag the case rather than fabricate."""

