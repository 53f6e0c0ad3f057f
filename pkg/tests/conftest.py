from __future__ import annotations

import numpy as np
import pytest

from corpus import random_bundle

try:
    from hypothesis import settings

    settings.register_profile("suite", deadline=None, max_examples=60)
    settings.load_profile("suite")
except ImportError:
    pass


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def train_bundle(tmp_path, rng):
    """Small train-side bundle with embeddings, on disk and loaded."""
    return random_bundle(
        tmp_path / "train", rng, n_sentences=6, dim=8, side="train", emb_dim=4
    )


@pytest.fixture
def store(tmp_path, train_bundle):
    import knnqe

    return knnqe.build(train_bundle["bundle"], tmp_path / "store")
