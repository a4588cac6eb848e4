import numpy as np
import pytest

from hubnorm import (
    COSINE,
    EmbeddingSet,
    l2_normalize_rows,
    precompute_bank_similarities,
    similarity,
)


def random_embeddings(rng, n, dim, metric):
    data = rng.standard_normal((n, dim))
    emb = EmbeddingSet(data)
    return l2_normalize_rows(emb) if metric == COSINE else emb


def random_instance(rng, metric, n_g=None, n_gbank=None, n_qbank=None, dim=None):
    """A query vector, a test gallery, and precomputed dual banks."""
    n_g = n_g or int(rng.integers(2, 13))
    n_gbank = n_gbank or int(rng.integers(1, 9))
    n_qbank = n_qbank or int(rng.integers(1, 9))
    dim = dim or int(rng.integers(2, 7))
    galleries = random_embeddings(rng, n_g, dim, metric)
    query_bank = random_embeddings(rng, n_qbank, dim, metric)
    gallery_bank = random_embeddings(rng, n_gbank, dim, metric)
    query = random_embeddings(rng, 1, dim, metric)
    banks = precompute_bank_similarities(query_bank, gallery_bank, galleries, metric)
    raw_row = similarity(query, galleries, metric).values[0]
    return {
        "query": query.data[0],
        "galleries": galleries,
        "banks": banks,
        "raw_row": raw_row,
    }


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
