import math
from typing import Any, Callable, Iterable, Union

Predicate = Callable[[Any], bool]


class RecordValidationError(Exception):
    """
    The error raised if a value fails validation.
    Predicates raise it to provide a custom message.

    Example:
        >>> from exogait.records import validate_record
        >>> def plausible_height(h: float) -> bool:
        ...     if not 1.0 < h < 2.5:
        ...         raise RecordValidationError(f"height must be in (1.0, 2.5) m, got {h}")
        ...     return True
        >>> with validate_record({"height": "1.76"}, {"height": plausible_height}, height=float) as r:
        ...     print(r.height)
        1.76
        >>> with validate_record({"height": "176"}, {"height": plausible_height}, height=float):
        ...     pass
        Traceback (most recent call last):
            ...
        exogait.exceptions.InvariantViolation: ...
    """


class Validator(object):
    """
    Validates the given value using the provided predicates.

    >>> v = Validator(finite, positive)
    >>> v(3.0), v(-1.0), v(float("nan"))
    (True, False, False)

    .. automethod:: __call__
    """

    ValidatorType = Union["Validator", Predicate]
    Predicate = ValidatorType

    def __init__(self, *predicates: Predicate):
        """
        Instantiates the validator.

        :param predicates: predefined predicates
        :type predicates: Callable[[Any], bool]
        """
        self.predicates = list(predicates)

    def add(self, predicate: Predicate) -> "Validator":
        """
        Adds the predicate to the list.

        :param predicate: predicate function
        :return: self
        """
        self.predicates.append(predicate)
        return self

    def __call__(self, value: Any) -> bool:
        """
        Applies all stored predicates to the given value.

        :param value: value to validate
        :return: True if all checks have passed, False otherwise
        """
        for p in self.predicates:
            if not p(value):
                return False
        return True


def finite(value: Any) -> bool:
    try:
        return math.isfinite(float(value))
    except (TypeError, ValueError):
        return False


def positive(value: Any) -> bool:
    return finite(value) and float(value) > 0


def between(lo: float, hi: float, inclusive: bool = False) -> Predicate:
    """
    Builds an interval predicate.

    >>> between(1.0, 2.5)(1.76), between(1.0, 2.5)(2.5), between(1.0, 2.5, inclusive=True)(2.5)
    (True, False, True)

    :param lo: lower bound
    :param hi: upper bound
    :param inclusive: include the bounds
    :return: predicate
    """

    def predicate(value: Any) -> bool:
        if not finite(value):
            return False
        v = float(value)
        return lo <= v <= hi if inclusive else lo < v < hi

    return predicate


def one_of(values: Iterable[Any]) -> Predicate:
    allowed = tuple(values)

    def predicate(value: Any) -> bool:
        if value not in allowed:
            raise RecordValidationError(f"expected one of {allowed}, got {value!r}")
        return True

    return predicate
