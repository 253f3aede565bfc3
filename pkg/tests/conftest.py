import pytest

from lpbfgs.model import TrainSpec, train_toy


@pytest.fixture(scope="session")
def toy():
    """Trained two-class 8x8 blob model and its held-out split."""
    model, report, (train, test) = train_toy(TrainSpec())
    return model, report, test
