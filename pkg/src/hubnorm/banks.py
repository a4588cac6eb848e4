"""Query/gallery bank construction and the per-gallery precomputations.

The banks are sampled from held-out (training) data and reused verbatim for
every test query, so everything that depends only on the test gallery and
the banks -- the bank similarity matrices and the activation sets -- is
computed once up front.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingSet, SimilarityMatrix, rank_rows, similarity
from .errors import EmptyBank, InvalidK, ValidationError

FROM_GALLERY_BANK = "from_gallery_bank"
FROM_QUERY_BANK = "from_query_bank"


@dataclass(frozen=True)
class DualBanks:
    """Both banks plus their similarities against the (fixed) test gallery.

    gallery_vs_query_bank[i, j]   = s(g_i, q_bank_j)   shape (N_G, N_Qbank)
    gallery_vs_gallery_bank[i, j] = s(g_i, g_bank_j)   shape (N_G, N_Gbank)
    """

    query_bank: EmbeddingSet
    gallery_bank: EmbeddingSet
    gallery_vs_query_bank: SimilarityMatrix
    gallery_vs_gallery_bank: SimilarityMatrix
    sampling_seed: int = 0
    source: str = "train"

    def __post_init__(self):
        n_g = self.gallery_vs_query_bank.n_queries
        if self.gallery_vs_gallery_bank.n_queries != n_g:
            raise ValidationError("bank similarity matrices disagree on the gallery size")
        if self.gallery_vs_query_bank.n_galleries != self.query_bank.n_rows:
            raise ValidationError("gallery_vs_query_bank width != query bank size")
        if self.gallery_vs_gallery_bank.n_galleries != self.gallery_bank.n_rows:
            raise ValidationError("gallery_vs_gallery_bank width != gallery bank size")
        if self.gallery_vs_query_bank.metric != self.gallery_vs_gallery_bank.metric:
            raise ValidationError("bank similarity matrices use different metrics")

    @property
    def n_galleries(self) -> int:
        return self.gallery_vs_query_bank.n_queries

    @property
    def metric(self) -> str:
        return self.gallery_vs_query_bank.metric


@dataclass(frozen=True)
class ActivationSet:
    """Test-gallery indices retrieved at top-k by at least one bank element."""

    gallery_indices: np.ndarray
    k: int
    origin: str

    def __post_init__(self):
        arr = np.unique(np.asarray(self.gallery_indices, dtype=np.int64))
        object.__setattr__(self, "gallery_indices", arr)
        arr.setflags(write=False)
        if self.origin not in (FROM_GALLERY_BANK, FROM_QUERY_BANK):
            raise ValidationError(f"unknown activation-set origin {self.origin!r}")

    def __contains__(self, index: int) -> bool:
        pos = np.searchsorted(self.gallery_indices, index)
        return pos < self.gallery_indices.size and self.gallery_indices[pos] == index

    def __len__(self) -> int:
        return int(self.gallery_indices.size)


def _sample_rows(data: EmbeddingSet, fraction: float, rng: np.random.Generator) -> EmbeddingSet:
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"sample fraction must be in (0, 1], got {fraction}")
    n = data.n_rows
    if fraction == 1.0:
        return data
    keep = int(np.floor(fraction * n + 0.5))
    if keep < 1:
        raise EmptyBank(f"fraction {fraction} of {n} rows leaves an empty bank")
    chosen = np.sort(rng.choice(n, size=keep, replace=False))
    return EmbeddingSet(data.data[chosen], normalized=data.normalized)


def build_banks(
    train_queries: EmbeddingSet,
    train_galleries: EmbeddingSet,
    sample_fraction_q: float = 1.0,
    sample_fraction_g: float = 1.0,
    seed: int = 0,
) -> tuple[EmbeddingSet, EmbeddingSet]:
    """Uniformly subsample the training splits into the two banks.

    Sampling is without replacement (duplicates would skew the softmax
    denominators) and row order is preserved. Fraction 1.0 returns the input
    unchanged. The two banks draw from independent substreams of ``seed``, so
    changing one fraction never perturbs the other bank.
    """
    ss_q, ss_g = np.random.SeedSequence(seed).spawn(2)
    query_bank = _sample_rows(train_queries, sample_fraction_q, np.random.default_rng(ss_q))
    gallery_bank = _sample_rows(train_galleries, sample_fraction_g, np.random.default_rng(ss_g))
    return query_bank, gallery_bank


def precompute_bank_similarities(
    query_bank: EmbeddingSet,
    gallery_bank: EmbeddingSet,
    test_galleries: EmbeddingSet,
    metric: str,
    sampling_seed: int = 0,
    source: str = "train",
) -> DualBanks:
    """Compute both gallery-vs-bank similarity matrices once, for reuse."""
    return DualBanks(
        query_bank=query_bank,
        gallery_bank=gallery_bank,
        gallery_vs_query_bank=similarity(test_galleries, query_bank, metric),
        gallery_vs_gallery_bank=similarity(test_galleries, gallery_bank, metric),
        sampling_seed=sampling_seed,
        source=source,
    )


def build_activation_set(bank_vs_galleries: np.ndarray, k: int, origin: str) -> ActivationSet:
    """Union of each bank element's top-k test-gallery indices.

    ``bank_vs_galleries`` is oriented (bank rows, N_G columns): row b holds
    s(g_j, bank_b) for every test gallery j. Ties break toward the lower
    gallery index.
    """
    sims = np.asarray(bank_vs_galleries, dtype=np.float64)
    if sims.ndim != 2:
        raise ValidationError("bank_vs_galleries must be 2-D (bank rows x galleries)")
    n_g = sims.shape[1]
    if not 1 <= k <= n_g:
        raise InvalidK(f"k={k} outside [1, {n_g}]")
    if k == n_g:
        top = np.tile(np.arange(n_g, dtype=np.int64), (sims.shape[0], 1))
    else:
        top = rank_rows(sims)[:, :k]
    return ActivationSet(np.unique(top), k=k, origin=origin)


def activation_sets_from_banks(banks: DualBanks, k: int) -> tuple[ActivationSet, ActivationSet]:
    """The (gallery-bank, query-bank) activation sets used by the gated methods."""
    act_g = build_activation_set(banks.gallery_vs_gallery_bank.values.T, k, FROM_GALLERY_BANK)
    act_q = build_activation_set(banks.gallery_vs_query_bank.values.T, k, FROM_QUERY_BANK)
    return act_g, act_q
