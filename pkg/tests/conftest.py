import pytest

from exogait.key_events import default_templates
from exogait.regression import train_bank
from exogait.synthetic import synthetic_dataset


@pytest.fixture(scope="session")
def synthetic():
    return synthetic_dataset(n_subjects=12, seed=0)


@pytest.fixture(scope="session")
def bank(synthetic):
    return train_bank(synthetic, default_templates())
