import numpy as np
import pytest

from anchorkit import EncoderConfig, MockChatBackend, synthesize_dataset


@pytest.fixture(scope="session")
def tiny_encoder_cfg():
    return EncoderConfig(num_layers=1, num_heads=2, model_dim=8, ff_dim=12, max_seq_len=16, seed=5)


@pytest.fixture(scope="session")
def mock_corpus_64():
    backend = MockChatBackend(seed=7)
    triplets, report = synthesize_dataset(backend, n=64, seed=7)
    assert report.accepted == 64
    return triplets


@pytest.fixture
def rng():
    return np.random.default_rng(0)
