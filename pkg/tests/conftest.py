"""Shared fixtures: the canonical desk-scale corpus and trained models.

The desk-scale training runs take ~20s total; everything that needs them
shares these session-scoped fixtures. Canonical seeds are fixed here and
nowhere else.
"""
import numpy as np
import pytest

from surfvae.latent import encode_corpus
from surfvae.synth import SynthConfig, generate
from surfvae.vae import TrainConfig, build_model, train

CANONICAL_SYNTH_SEED = 0
CANONICAL_TRAIN_SEED = 1


@pytest.fixture(scope="session")
def desk_result():
    return generate(SynthConfig(seed=CANONICAL_SYNTH_SEED))


@pytest.fixture(scope="session")
def desk_corpus(desk_result):
    return desk_result.corpus


@pytest.fixture(scope="session")
def pca_trained(desk_corpus):
    model = build_model(seed=CANONICAL_TRAIN_SEED)
    return train(model, desk_corpus, TrainConfig(seed=CANONICAL_TRAIN_SEED))


@pytest.fixture(scope="session")
def pca_model(pca_trained):
    return pca_trained[0]


@pytest.fixture(scope="session")
def pca_history(pca_trained):
    return pca_trained[1]


@pytest.fixture(scope="session")
def classic_trained(desk_corpus):
    model = build_model(seed=CANONICAL_TRAIN_SEED, lambda_cov=0.0)
    return train(model, desk_corpus, TrainConfig(seed=CANONICAL_TRAIN_SEED))


@pytest.fixture(scope="session")
def classic_model(classic_trained):
    return classic_trained[0]


@pytest.fixture(scope="session")
def classic_history(classic_trained):
    return classic_trained[1]


@pytest.fixture(scope="session")
def desk_encoded(pca_model, desk_corpus):
    return encode_corpus(pca_model, desk_corpus)


@pytest.fixture(scope="session")
def tiny_result():
    """Small fast corpus for unit tests that just need plausible data."""
    return generate(SynthConfig(seed=3, n_stocks=2, n_days=150))


@pytest.fixture(scope="session")
def tiny_corpus(tiny_result):
    return tiny_result.corpus


@pytest.fixture(scope="session")
def tiny_model(tiny_corpus):
    model = build_model(seed=5)
    trained, _ = train(model, tiny_corpus, TrainConfig(epochs=4, seed=5))
    return trained


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
