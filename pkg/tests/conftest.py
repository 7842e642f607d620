import pytest

from apdmmo.benchmark import make_problem
from apdmmo.glf import TrainConfig, build_dataset, train
from apdmmo.landscape_model import ModelConfig, init_model


@pytest.fixture(scope="session")
def f2_desk_model():
    """F2 surrogate trained on 3/8 of the budget with the desk model size."""
    spec, ev = make_problem("F2")
    ds = build_dataset(ev, 3 / 8, seed=0)
    model, _ = train(init_model(ModelConfig(1, 32, 2), 0), ds, TrainConfig(epochs=100))
    return spec, model
