"""Shared fixtures: a tiny generated data split and toy models."""

import numpy as np
import pytest

from seglang.model import Model
from seglang.scenes import default_vocab, make_split
from seglang.training import make_toy_config


@pytest.fixture(scope="session")
def tiny_split(tmp_path_factory):
    """Six train scenes / three eval scenes, enough for end-to-end plumbing."""
    root = tmp_path_factory.mktemp("tiny_split")
    make_split(seed=11, n_train=6, n_eval=3, out_dir=str(root))
    return str(root)


@pytest.fixture(scope="session")
def toy_vocab():
    return default_vocab()


@pytest.fixture()
def toy_model(toy_vocab):
    cfg = make_toy_config(0)
    return Model(cfg, toy_vocab, np.random.default_rng(0))
