from typing import Any, Callable, Dict, Mapping, Optional
from contextlib import contextmanager, AbstractContextManager, ExitStack

from . import utils
from . import exceptions
from .validator import Validator, RecordValidationError


class RecordValidator(AbstractContextManager):
    """
    Converts and validates one raw record, e.g. a row of a delimited file.

    Examples:
        >>> row = {"id": "S01", "age": "25", "height": "1.76"}
        >>> with RecordValidator(row, dict(age=int, height=float, id=None)) as r:
        ...     print(r.id, r.age, r.height, sep=', ')
        S01, 25, 1.76

    .. automethod:: __enter__
    .. automethod:: __exit__
    """

    def __init__(
        self,
        record: Mapping[str, Any],
        factories: Dict[str, Optional[Callable[[Any], Any]]],
        validators: Dict[str, Validator.ValidatorType] = None,
        box_all: bool = True,
        source: str = "<record>",
    ):
        """
        Instantiates the record validator.

        :param record: mapping of :code:`{field -> raw value}`
        :param factories: a mapping of :code:`{field -> factory}`. Providing :code:`None` as a factory
                          keeps the raw value.
        :param validators: a dictionary of pre-defined validators
        :param box_all: include all fields, even if they're not specified in :code:`factories`
        :param source: human-readable location of the record (file and row), used in error messages
        """
        self._record = dict(record)
        self._factories = factories
        self._box_all = box_all
        self.source = source

        self.result: Dict[str, Any] = {
            k: self._record[k]
            for k in (self._record if self._box_all else self._factories)
            if k in self._record
        }
        self._fields: Dict[str, Validator] = {
            k: Validator() for k in set(self.result) | set(self._factories)
        }
        self._fields.update(
            {
                # Convert predicates to validators
                k: Validator(v) if not isinstance(v, Validator) else v
                for k, v in (validators or {}).items()
            }
        )

    def add_predicate(self, field: str, predicate: Callable[[Any], bool]):
        """
        Adds a new check for the provided field.

        :param field: field name
        :param predicate: predicate function
        :return: None
        """
        self._fields.setdefault(field, Validator())
        self._fields[field].add(predicate)

    def check(self, field: str, predicate: Callable[[Any], bool]) -> "RecordValidator":
        """
        Adds a new check for the provided field.

        :param field: field name
        :param predicate: predicate function
        :return: self
        """
        self.add_predicate(field, predicate)
        return self

    def positive(self, field: str) -> "RecordValidator":
        """
        Adds a :code:`greater than zero` check for the provided field.

        >>> with validate_record({"mass": "-3"}, mass=float).positive("mass"):
        ...     pass
        Traceback (most recent call last):
            ...
        exogait.exceptions.InvariantViolation: ...

        :param field: field name
        :return: self
        """
        return self.check(field, lambda x: x > 0)

    @contextmanager
    def _cleanup_on_error(self):
        """
        Unwinds the stack in case of an error.
        """
        with ExitStack() as stack:
            stack.push(self)
            yield
            # The validation checks didn't raise an exception
            stack.pop_all()

    def _validate(self):
        """
        Converts and validates the fields.
        Only KeyError, ValueError and TypeError raised by factories are handled as schema errors.

        :return: None
        """
        for field, cast in self._factories.items():
            try:
                cast = cast or (lambda x: x)
                self.result[field] = cast(self._record[field])
            except KeyError:
                raise exceptions.SchemaMismatch(
                    {"error": f"Missing required field `{field}`.", "source": self.source}
                )
            except (ValueError, TypeError):
                expected = "."
                # Expose only built-in types
                if cast in (int, float):
                    expected = f": expected {cast.__name__}."
                raise exceptions.SchemaMismatch(
                    {
                        "error": f"Invalid type of the `{field}` field{expected}",
                        "value": repr(self._record[field]),
                        "source": self.source,
                    }
                )

        for field, value in self.result.items():
            validator = self._fields.get(field)
            if validator is None:
                continue
            try:
                if not validator(value):
                    raise RecordValidationError(f"Invalid `{field}` value: {value}.")
            except RecordValidationError as e:
                raise exceptions.InvariantViolation(
                    {"error": str(e), "source": self.source}
                ) from e

    def __enter__(self) -> "utils.Record":
        """
        Runs validation on the provided record. See __exit__() for additional info.

        :return: the converted record
        """
        # __exit__() is called with the exception raised inside _validate(),
        # so failures inside the validation and inside the context are handled alike.
        with self._cleanup_on_error():
            self._validate()
        return utils.Record(self.result, self.source)

    def __exit__(self, exc_type, exc_val, exc_tb):
        """
        Passes :class:`ExoGaitError <exogait.exceptions.ExoGaitError>` subclasses through.
        Any other exception is logged together with the record and re-raised as an ExoGaitError.

        :param exc_type: exception type
        :param exc_val: exception instance
        :param exc_tb: exception traceback
        :return: None
        """
        if exc_type is None or issubclass(exc_type, exceptions.ExoGaitError):
            return
        text = (
            f"An error has occurred during the validation or inside the context: exc `{exc_type}` ({exc_val}).\n"
            f"| Source: {self.source}\n"
            f"| Record: {self._record}\n"
            f"| Exception:\n"
        )
        utils.log.error(
            text,
            extra={"stack": True, "record": self._record, "source": self.source},
            exc_info=(exc_type, exc_val, exc_tb),
        )
        raise exceptions.ExoGaitError(
            {"error": f"{exc_type.__name__}: {exc_val}", "source": self.source}
        ) from exc_val


def validate_record(
    record: Mapping[str, Any],
    validators: Dict[str, Validator.ValidatorType] = None,
    box_all: bool = True,
    source: str = "<record>",
    **factories: Optional[Callable[[Any], Any]],
) -> RecordValidator:
    """
    Shortcut for RecordValidator.

    Examples:
        >>> row = {"subject": "S01", "speed": "1.25", "unit": "m/s"}
        >>> with validate_record(row, speed=float) as r:
        ...     print(r.subject, r.speed * 3.6, r.unit)
        S01 4.5 m/s

        >>> with validate_record({"age": "old"}, source="subjects.csv:3", age=float):
        ...     pass  # doctest: +IGNORE_EXCEPTION_DETAIL
        Traceback (most recent call last):
            ...
        exogait.exceptions.SchemaMismatch: {'error': 'Invalid type of the `age` field: expected float.'}

    :param record: a raw record
    :param validators: a dictionary of validators
    :param box_all: include all fields in the output record, even if they're not specified in `factories`
    :param source: location of the record used in error messages
    :param factories: a dictionary of callables that create a python object from their field
    :return: RecordValidator instance
    """
    return RecordValidator(record, factories, validators, box_all, source)
