"""Shared fixtures: small trained models reused across test modules."""

import numpy as np
import pytest

import helpers
from dcqn import iqn
from dcqn.backbone import TcnConfig, TrainConfig

SMALL_TCN = TcnConfig(layers=2, channels=8, kernel_size=3, dilations=(1, 2))


@pytest.fixture(scope="session")
def piecewise_split():
    return helpers.make_piecewise_split(n=800, horizon=4, seed=3)


@pytest.fixture(scope="session")
def trained_piecewise_iqn(piecewise_split):
    """IQN trained on the x-independent piecewise-linear marginal."""
    config = iqn.IqnConfig(
        tcn=SMALL_TCN,
        train=TrainConfig(max_epochs=150, patience=20),
        seed=11,
    )
    model, result = iqn.train_iqn(piecewise_split, config)
    return model, result, config
