import pytest

from helpers import planted_dataset


@pytest.fixture(scope="session")
def planted_small():
    """6 fields, first 2 informative, 8k rows: cheap selector smoke tests."""
    return planted_dataset()


@pytest.fixture(scope="session")
def planted_tiny():
    """4 fields, first field informative, 1.2k rows: protocol plumbing tests."""
    return planted_dataset(n_fields=4, n_informative=1, vocab=6, n_samples=1200, seed=3)
