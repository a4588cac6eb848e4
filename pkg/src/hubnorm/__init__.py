"""hubnorm: dual-bank similarity normalization for cross-modal retrieval.

The library post-processes a query-vs-gallery similarity row using banks of
held-out query and gallery embeddings so that hub points (gallery items that
would otherwise be retrieved by far too many queries) stop dominating the
ranking. It also ships the matching diagnostics (k-occurrence skewness,
recall/median-rank metrics) and Monte-Carlo checks of the theory on
synthetic symmetric distributions.
"""

from .banks import (
    ActivationSet,
    DualBanks,
    activation_sets_from_banks,
    build_activation_set,
    build_banks,
    precompute_bank_similarities,
)
from .embeddings import (
    COSINE,
    NEG_SQ_L2,
    EmbeddingSet,
    Ranking,
    SimilarityMatrix,
    l2_normalize_rows,
    rank,
    similarity,
)
from .hubsim import (
    SyntheticDistribution,
    TheoremReport,
    planted_hub_benchmark,
    sample,
    true_mean,
    verify_corollary1,
    verify_theorem1,
    verify_theorem2,
    verify_theorem3,
)
from .metrics import (
    GroundTruth,
    OccurrenceDistribution,
    RetrievalReport,
    best_correct_ranks,
    build_report,
    k_occurrence,
    rank_stats,
    recall_at_k,
    skewness,
)
from .normalize import (
    NormalizationConfig,
    NormalizedRow,
    PreparedNormalizer,
    csls_normalize,
    dis,
    dual_dis,
    dual_is,
    gc_normalize,
    inverted_softmax,
    normalize_query,
    prepare,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationSet",
    "COSINE",
    "DualBanks",
    "EmbeddingSet",
    "GroundTruth",
    "NEG_SQ_L2",
    "NormalizationConfig",
    "NormalizedRow",
    "OccurrenceDistribution",
    "PreparedNormalizer",
    "Ranking",
    "RetrievalReport",
    "SimilarityMatrix",
    "SyntheticDistribution",
    "TheoremReport",
    "activation_sets_from_banks",
    "best_correct_ranks",
    "build_activation_set",
    "build_banks",
    "build_report",
    "csls_normalize",
    "dis",
    "dual_dis",
    "dual_is",
    "gc_normalize",
    "inverted_softmax",
    "k_occurrence",
    "l2_normalize_rows",
    "normalize_query",
    "planted_hub_benchmark",
    "precompute_bank_similarities",
    "prepare",
    "rank",
    "rank_stats",
    "recall_at_k",
    "sample",
    "similarity",
    "skewness",
    "true_mean",
    "verify_corollary1",
    "verify_theorem1",
    "verify_theorem2",
    "verify_theorem3",
]
