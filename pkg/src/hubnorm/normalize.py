"""Similarity normalization: inverted softmax and its dual-bank variants,
plus the bank-adapted rank (GC) and local-scaling (CSLS) baselines.

All softmax quotients are evaluated in log space::

    exp(beta * s_raw[i] - logsumexp_j(beta * s_bank[i, j]))

which is algebraically the plain quotient but cannot overflow for any
|beta * s| below ~700. Denominators depend only on the gallery point and the
banks, never on the test query, so callers that process many queries should
compute them once via ``prepare``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .banks import ActivationSet, DualBanks
from .embeddings import COSINE, EmbeddingSet, SimilarityMatrix
from .errors import KTooLarge, ShapeMismatch, ValidationError

METHOD_NONE = "none"
METHOD_IS = "is"
METHOD_DIS = "dis"
METHOD_DUAL_IS = "dual_is"
METHOD_DUAL_DIS = "dual_dis"
METHOD_GC = "gc"
METHOD_CSLS = "csls"
METHODS = (
    METHOD_NONE,
    METHOD_IS,
    METHOD_DIS,
    METHOD_DUAL_IS,
    METHOD_DUAL_DIS,
    METHOD_GC,
    METHOD_CSLS,
)

AGG_MULTIPLY = "multiply"
AGG_ADD = "add"


@dataclass(frozen=True)
class NormalizationConfig:
    """Knobs for every normalization method.

    beta1 tempers the gallery-bank branch, beta2 the query-bank branch.
    ``query_gate_uses_gallery_branch`` selects the literal published form of
    the gated query branch (which reuses the gallery-branch quotient) instead
    of the symmetric reading; the symmetric reading is the default.
    """

    method: str = METHOD_DUAL_IS
    beta1: float = 20.0
    beta2: float = 20.0
    aggregation: str = AGG_MULTIPLY
    activation_k: int = 1
    csls_k: int = 10
    query_gate_uses_gallery_branch: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}")
        if not (np.isfinite(self.beta1) and self.beta1 > 0):
            raise ValidationError(f"beta1 must be finite and positive, got {self.beta1}")
        if not (np.isfinite(self.beta2) and self.beta2 > 0):
            raise ValidationError(f"beta2 must be finite and positive, got {self.beta2}")
        if self.aggregation not in (AGG_MULTIPLY, AGG_ADD):
            raise ValidationError(f"unknown aggregation {self.aggregation!r}")
        if self.activation_k < 1:
            raise ValidationError("activation_k must be >= 1")
        if self.csls_k < 1:
            raise ValidationError("csls_k must be >= 1")


@dataclass(frozen=True)
class NormalizedRow:
    """One query's normalized similarities plus which branches actually fired."""

    values: np.ndarray
    gallery_branch_normalized: bool = False
    query_branch_normalized: bool = False

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", arr)
        if arr.ndim != 1:
            raise ShapeMismatch("normalized row must be 1-D")
        if not np.isfinite(arr).all():
            raise ValidationError("normalized row contains non-finite entries")
        arr.setflags(write=False)


@dataclass(frozen=True)
class PreparedNormalizer:
    """Per-gallery log denominators, computed once and shared across queries."""

    log_denom_gallery: np.ndarray
    log_denom_query: np.ndarray
    beta1: float
    beta2: float


def logsumexp_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise logsumexp with the usual max shift; summation order is fixed."""
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=-1, keepdims=True)
    return (m + np.log(np.sum(np.exp(x - m), axis=-1, keepdims=True)))[..., 0]


def prepare(banks: DualBanks, cfg: NormalizationConfig) -> PreparedNormalizer:
    """Precompute both branches' log denominators for every gallery point."""
    return PreparedNormalizer(
        log_denom_gallery=logsumexp_rows(cfg.beta1 * banks.gallery_vs_gallery_bank.values),
        log_denom_query=logsumexp_rows(cfg.beta2 * banks.gallery_vs_query_bank.values),
        beta1=cfg.beta1,
        beta2=cfg.beta2,
    )


def _as_row(q_row, n_expected: int | None = None) -> np.ndarray:
    row = np.ascontiguousarray(q_row, dtype=np.float64)
    if row.ndim != 1:
        raise ShapeMismatch(f"similarity row must be 1-D, got shape {row.shape}")
    if n_expected is not None and row.shape[0] != n_expected:
        raise ShapeMismatch(f"row length {row.shape[0]} != gallery count {n_expected}")
    return row


def _bank_matrix(mat) -> np.ndarray:
    values = mat.values if isinstance(mat, SimilarityMatrix) else np.asarray(mat, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeMismatch("bank similarity matrix must be 2-D (galleries x bank)")
    return values


def inverted_softmax(q_row, gallery_vs_query_bank, beta2: float) -> NormalizedRow:
    """Query-bank inverted softmax: each similarity divided by how strongly
    that gallery point retrieves the bank queries."""
    bank = _bank_matrix(gallery_vs_query_bank)
    row = _as_row(q_row, bank.shape[0])
    log_denom = logsumexp_rows(beta2 * bank)
    return NormalizedRow(np.exp(beta2 * row - log_denom), query_branch_normalized=True)


def _branches(
    row: np.ndarray, banks: DualBanks, cfg: NormalizationConfig, prepared: PreparedNormalizer | None
) -> tuple[np.ndarray, np.ndarray]:
    if prepared is None:
        prepared = prepare(banks, cfg)
    elif prepared.beta1 != cfg.beta1 or prepared.beta2 != cfg.beta2:
        raise ValidationError("prepared denominators were built with different temperatures")
    branch_g = np.exp(cfg.beta1 * row - prepared.log_denom_gallery)
    branch_q = np.exp(cfg.beta2 * row - prepared.log_denom_query)
    return branch_g, branch_q


def _aggregate(branch_g: np.ndarray, branch_q: np.ndarray, aggregation: str) -> np.ndarray:
    return branch_g * branch_q if aggregation == AGG_MULTIPLY else branch_g + branch_q


def dual_is(
    q_row,
    banks: DualBanks,
    cfg: NormalizationConfig,
    prepared: PreparedNormalizer | None = None,
) -> NormalizedRow:
    """Product (or sum) of the gallery-bank and query-bank inverted softmaxes."""
    row = _as_row(q_row, banks.n_galleries)
    branch_g, branch_q = _branches(row, banks, cfg, prepared)
    return NormalizedRow(
        _aggregate(branch_g, branch_q, cfg.aggregation),
        gallery_branch_normalized=True,
        query_branch_normalized=True,
    )


def dual_dis(
    q_row,
    banks: DualBanks,
    activation_g: ActivationSet,
    activation_q: ActivationSet,
    cfg: NormalizationConfig,
    prepared: PreparedNormalizer | None = None,
) -> NormalizedRow:
    """Dual inverted softmax gated per branch by the activation sets.

    The raw top-1 gallery index decides each gate: a branch is normalized only
    when that index was also retrieved by the corresponding bank, otherwise
    the branch passes the raw similarities through.
    """
    row = _as_row(q_row, banks.n_galleries)
    j_star = int(np.argmax(row))
    gate_g = j_star in activation_g
    gate_q = j_star in activation_q
    norm_g = norm_q = None
    if gate_g or gate_q:
        norm_g, norm_q = _branches(row, banks, cfg, prepared)
    branch_g = norm_g if gate_g else row
    if gate_q:
        branch_q = norm_g if cfg.query_gate_uses_gallery_branch else norm_q
    else:
        branch_q = row
    return NormalizedRow(
        _aggregate(branch_g, branch_q, cfg.aggregation),
        gallery_branch_normalized=gate_g,
        query_branch_normalized=gate_q,
    )


def dis(
    q_row,
    banks: DualBanks,
    activation_q: ActivationSet,
    cfg: NormalizationConfig,
    prepared: PreparedNormalizer | None = None,
) -> NormalizedRow:
    """Query-bank-only gated inverted softmax (the single-bank special case).

    The gallery branch contributes nothing here: the output is the query-bank
    inverted softmax when the gate is open and the untouched raw row when it
    is closed.
    """
    row = _as_row(q_row, banks.n_galleries)
    j_star = int(np.argmax(row))
    if j_star not in activation_q:
        return NormalizedRow(row.copy())
    if prepared is None:
        log_denom = logsumexp_rows(cfg.beta2 * banks.gallery_vs_query_bank.values)
    else:
        if prepared.beta2 != cfg.beta2:
            raise ValidationError("prepared denominators were built with different temperatures")
        log_denom = prepared.log_denom_query
    return NormalizedRow(np.exp(cfg.beta2 * row - log_denom), query_branch_normalized=True)


def gc_normalize(q_row, gallery_vs_query_bank) -> NormalizedRow:
    """Subtract, per gallery point, the query's rank among the bank queries.

    From g_i's point of view the candidates are the bank queries plus the test
    query; the test query's 1-based rank under descending similarity (placed
    after bank entries it ties with) is subtracted from the raw similarity.
    """
    bank = _bank_matrix(gallery_vs_query_bank)
    row = _as_row(q_row, bank.shape[0])
    ranks = 1 + np.sum(bank >= row[:, None], axis=1)
    return NormalizedRow(row - ranks)


def csls_normalize(q_row, q_vs_gallery_bank, q_vs_query_bank, csls_k: int) -> NormalizedRow:
    """Double the raw similarity and subtract the query's mean similarity to
    its top-k neighbors in each bank.

    Both corrections are constants per query, so the induced ranking always
    equals the raw ranking; the values still matter for score calibration.
    """
    row = _as_row(q_row)
    to_g = _as_row(q_vs_gallery_bank)
    to_q = _as_row(q_vs_query_bank)
    if csls_k > min(to_g.shape[0], to_q.shape[0]):
        raise KTooLarge(
            f"csls_k={csls_k} exceeds a bank size (gallery {to_g.shape[0]}, query {to_q.shape[0]})"
        )
    mean_g = np.mean(np.partition(to_g, to_g.shape[0] - csls_k)[to_g.shape[0] - csls_k :])
    mean_q = np.mean(np.partition(to_q, to_q.shape[0] - csls_k)[to_q.shape[0] - csls_k :])
    return NormalizedRow(2.0 * row - mean_g - mean_q)


def _query_similarities(query: np.ndarray, targets: EmbeddingSet, metric: str) -> np.ndarray:
    if query.shape[0] != targets.dim:
        raise ShapeMismatch(f"query dim {query.shape[0]} != embedding dim {targets.dim}")
    if metric == COSINE:
        return targets.data @ query
    diff = targets.data - query[None, :]
    return -np.einsum("gd,gd->g", diff, diff)


def normalize_query(
    query,
    galleries: EmbeddingSet,
    banks: DualBanks,
    activation_g: ActivationSet | None,
    activation_q: ActivationSet | None,
    cfg: NormalizationConfig,
    prepared: PreparedNormalizer | None = None,
) -> NormalizedRow:
    """Run one query end to end: raw similarities, then the configured method.

    Pure function of its arguments -- nothing is cached across calls, so
    queries stay invisible to each other as required by the single-query
    retrieval setting.
    """
    query = _as_row(query)
    if cfg.method == METHOD_CSLS:
        # metric consistency: the per-query bank similarities reuse banks.metric
        return csls_normalize(
            _query_similarities(query, galleries, banks.metric),
            _query_similarities(query, banks.gallery_bank, banks.metric),
            _query_similarities(query, banks.query_bank, banks.metric),
            cfg.csls_k,
        )
    row = _query_similarities(query, galleries, banks.metric)
    if cfg.method == METHOD_NONE:
        return NormalizedRow(row)
    if cfg.method == METHOD_IS:
        return inverted_softmax(row, banks.gallery_vs_query_bank, cfg.beta2)
    if cfg.method == METHOD_GC:
        return gc_normalize(row, banks.gallery_vs_query_bank)
    if cfg.method == METHOD_DUAL_IS:
        return dual_is(row, banks, cfg, prepared)
    if cfg.method == METHOD_DIS:
        if activation_q is None:
            raise ValidationError("method 'dis' needs the query-bank activation set")
        return dis(row, banks, activation_q, cfg, prepared)
    if activation_g is None or activation_q is None:
        raise ValidationError("method 'dual_dis' needs both activation sets")
    return dual_dis(row, banks, activation_g, activation_q, cfg, prepared)
