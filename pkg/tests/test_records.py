import pytest

from exogait import exceptions
from exogait.records import RecordValidator, validate_record
from exogait.validator import Validator, between, positive


def test_chain_validators():
    row = {"id": "S01", "age": "25", "height": "1.76", "mass": "69.25", "speed": "4.5"}
    # fmt: off
    factories = {
        "id": str,
        "age": int,
        "height": float,
        "mass": float,
        "speed": lambda x: float(x) / 3.6,
    }
    # fmt: on

    v = (
        RecordValidator(row, factories)
        .check("height", between(1.0, 2.5))
        .check("age", lambda x: x > 0)
        .check("mass", lambda x: x < 200)
        .positive("speed")
    )
    v.add_predicate("mass", lambda x: x > 20)
    with v as r:
        assert r.id == "S01"
        assert r.age == 25
        assert r.height == 1.76
        assert r.speed == pytest.approx(1.25)

    bad_rows = [
        {**row, "age": "-1"},
        {**row, "height": "176"},
        {**row, "mass": "250"},
        {**row, "speed": "0"},
    ]
    for bad in bad_rows:
        v = RecordValidator(bad, factories).check("height", between(1.0, 2.5)).check("age", positive)
        v.check("mass", lambda x: x < 200).positive("speed")
        with pytest.raises(exceptions.InvariantViolation), v:
            pass


def test_missing_and_malformed_fields():
    with pytest.raises(exceptions.SchemaMismatch) as e, validate_record({"a": "1"}, a=int, b=float):
        pass
    assert "`b`" in e.value.detail["error"]

    with pytest.raises(exceptions.SchemaMismatch) as e, validate_record(
        {"age": "old"}, source="subjects.csv:3", age=float
    ):
        pass
    assert e.value.detail["source"] == "subjects.csv:3"
    assert "expected float" in e.value.detail["error"]


def test_box_all():
    row = {"id": "S01", "age": "25", "unit": "km/h"}
    with validate_record(row, age=int) as r:
        assert r.unit == "km/h"
    with validate_record(row, box_all=False, age=int) as r:
        assert "unit" not in r
        assert r.age == 25


def test_validators_apply_to_unconverted_fields():
    with pytest.raises(exceptions.InvariantViolation):
        with validate_record({"speed": -1.0}, {"speed": positive}):
            pass
    with validate_record({"speed": 1.0}, {"speed": Validator(positive)}) as r:
        assert r.speed == 1.0


def test_errors_inside_context_are_wrapped():
    with pytest.raises(exceptions.ExoGaitError) as e:
        with validate_record({"a": "1"}, a=int):
            raise IOError("disk")
    assert type(e.value) is exceptions.ExoGaitError
    assert "OSError" in e.value.detail["error"]

    # package errors pass through unchanged
    with pytest.raises(exceptions.Unreachable):
        with validate_record({"a": "1"}, a=int):
            raise exceptions.Unreachable("x")
