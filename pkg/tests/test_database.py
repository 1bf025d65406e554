"""
Runs the pipeline on a real gait database exported to delimited text.

Set ``EXOGAIT_DATABASE_ROOT`` to the database directory; ``EXOGAIT_DATABASE_SCHEMA`` selects
a schema other than the bundled one.
"""
import os

import pytest

from exogait.gait_data import CHANNELS, filter_speed_levels, ingest_dataset
from exogait.key_events import TOE_OFF_TEMPLATES_FILE, TEMPLATES_FILE, load_templates
from exogait.regression import train_bank
from exogait.settings import setting
from exogait.trajectory import generate_personalized

ROOT = os.environ.get("EXOGAIT_DATABASE_ROOT")
SCHEMA = os.environ.get(
    "EXOGAIT_DATABASE_SCHEMA",
    os.path.join(os.path.dirname(__import__("exogait").__file__), "data", "wbds_schema.toml"),
)

pytestmark = [
    pytest.mark.database,
    pytest.mark.skipif(ROOT is None, reason="EXOGAIT_DATABASE_ROOT is not set"),
]


@pytest.fixture(scope="module")
def database():
    return filter_speed_levels(ingest_dataset(ROOT, SCHEMA))


def test_kept_cycles_are_labeled_and_below_the_treadmill_limit(database):
    assert database.levels()
    for c in database.cycles:
        assert c.speed_level is not None
        assert c.speed <= setting("TREADMILL_LIMIT")


@pytest.mark.parametrize("templates", [TEMPLATES_FILE, TOE_OFF_TEMPLATES_FILE])
def test_bank_predicts_a_pattern_for_every_subject(database, templates):
    bank = train_bank(database, load_templates(templates))
    for subject in database.subjects[:5]:
        pattern = generate_personalized(bank, subject, subject.self_selected_speed * 0.55)
        assert set(pattern.channels) == set(CHANNELS)
