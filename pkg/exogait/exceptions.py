from typing import Any, Optional, Union


class ExoGaitError(Exception):
    """
    The base class for exogait's exceptions.

    Every error carries a :code:`detail` (a string or a dictionary) and the
    :code:`exit_code` the command line front-end exits with.

    Example:
        >>> e = ExoGaitError("something went wrong")
        >>> e.detail, e.exit_code
        ('something went wrong', 1)
        >>> str(InvariantViolation({"error": "bad row"}))
        "{'error': 'bad row'}"
    """

    exit_code = 1

    def __init__(self, detail: Union[dict, str]):
        """
        Instantiates the exception object.

        :param detail: dict or string with the details
        """
        self.detail = detail
        super().__init__(detail)


class MissingFile(ExoGaitError):
    """
    A required input file does not exist.
    """


class SchemaMismatch(ExoGaitError):
    """
    A file does not match the declared schema (missing column, unknown unit, bad type).
    """


class InvariantViolation(ExoGaitError):
    """
    A value or a collection violates one of its documented invariants.
    """


class UsageError(ExoGaitError):
    """
    The command line was used incorrectly.
    """

    exit_code = 2


class IoError(ExoGaitError):
    """
    An output could not be written.
    """


# gait data
class EmptyResult(ExoGaitError):
    pass


class EmptyInput(ExoGaitError):
    pass


class MixedChannels(ExoGaitError):
    pass


class InsufficientCycles(ExoGaitError):
    pass


class MissingMarker(ExoGaitError):
    pass


class GridMismatch(ExoGaitError):
    pass


# key events
class NoExtremumInWindow(ExoGaitError):
    pass


class OrderingViolation(ExoGaitError):
    pass


# regression
class RankDeficient(ExoGaitError):
    pass


class NoConvergence(ExoGaitError):
    """
    An iterative solver stopped before reaching its tolerance.
    The last iterate is kept in :code:`result`.
    """

    def __init__(self, detail: Union[dict, str], result: Optional[Any] = None):
        super().__init__(detail)
        self.result = result


class AllZeroWeights(ExoGaitError):
    pass


class InsufficientData(ExoGaitError):
    pass


class NonPositiveResult(ExoGaitError):
    pass


class NonMonotoneEvents(ExoGaitError):
    pass


# trajectory
class IllConditionedSegment(ExoGaitError):
    pass


# kinematics
class Unreachable(ExoGaitError):
    pass


class StrokeLimit(ExoGaitError):
    pass


class BranchAmbiguity(ExoGaitError):
    pass


# evaluation
class FoldError(ExoGaitError):
    """
    A cross-validation fold failed. :code:`fold` is the held-out subject id.
    """

    def __init__(self, detail: Union[dict, str], fold: str):
        super().__init__(detail)
        self.fold = fold


def with_context(error: ExoGaitError, **context: Any) -> ExoGaitError:
    """
    Returns a copy of :code:`error` (same class) whose detail also names the given context,
    e.g. the offending sample index or file.

    :param error: original error
    :param context: extra key-value pairs
    :return: new error instance of the same type
    """
    detail = error.detail
    if not isinstance(detail, dict):
        detail = {"error": str(detail)}
    detail = {**detail, **{k: str(v) for k, v in context.items()}}
    if isinstance(error, FoldError):
        new = FoldError(detail, fold=error.fold)
    elif isinstance(error, NoConvergence):
        new = NoConvergence(detail, result=error.result)
    else:
        new = error.__class__(detail)
    return new
