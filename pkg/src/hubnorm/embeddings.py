"""Dense embedding matrices, pairwise similarity, and deterministic ranking.

Everything downstream treats "similar" as "numerically larger": cosine is
used as-is and squared euclidean distance is negated, so a single descending
argsort covers both metrics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, ValidationError, ZeroNormRow

COSINE = "cosine"
NEG_SQ_L2 = "neg_sq_l2"
METRICS = (COSINE, NEG_SQ_L2)

_UNIT_NORM_TOL = 1e-9
_ZERO_NORM_TOL = 1e-12

# queries per block when materializing pairwise differences for neg_sq_l2
_L2_BLOCK = 1 << 22


def _as_matrix(data) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    return arr


@dataclass(frozen=True)
class EmbeddingSet:
    """An (n_rows, dim) float64 matrix of embeddings for one modality.

    ``normalized`` asserts that every row is unit l2-norm; it is checked at
    construction so downstream cosine code can rely on it.
    """

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        arr = _as_matrix(self.data)
        object.__setattr__(self, "data", arr)
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"embedding matrix must be at least 1x1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("embedding matrix contains non-finite entries")
        if self.normalized:
            norms = np.linalg.norm(arr, axis=1)
            if not np.all(np.abs(norms - 1.0) <= _UNIT_NORM_TOL):
                worst = int(np.argmax(np.abs(norms - 1.0)))
                raise ValidationError(
                    f"normalized flag set but row {worst} has norm {norms[worst]!r}"
                )
        arr.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SimilarityMatrix:
    """Pairwise similarities (n_queries, n_galleries) plus the metric used."""

    values: np.ndarray
    metric: str

    def __post_init__(self):
        arr = _as_matrix(self.values)
        object.__setattr__(self, "values", arr)
        if self.metric not in METRICS:
            raise ValidationError(f"unknown metric {self.metric!r}")
        if not np.isfinite(arr).all():
            raise ValidationError("similarity matrix contains non-finite entries")
        arr.setflags(write=False)

    @property
    def n_queries(self) -> int:
        return self.values.shape[0]

    @property
    def n_galleries(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Ranking:
    """Per-query permutation of gallery indices, best match first.

    Ties in similarity are broken by ascending gallery index, which makes the
    permutation reproducible across platforms and thread counts.
    """

    indices: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", arr)
        if arr.ndim != 2:
            raise ValidationError("ranking must be 2-D")
        arr.setflags(write=False)

    @property
    def n_queries(self) -> int:
        return self.indices.shape[0]

    @property
    def n_galleries(self) -> int:
        return self.indices.shape[1]


def l2_normalize_rows(embeddings: EmbeddingSet) -> EmbeddingSet:
    """Scale every row to unit l2 norm, preserving direction.

    Raises ZeroNormRow for rows whose norm is below 1e-12; silently rescaling
    those would fabricate a direction out of rounding noise.
    """
    norms = np.linalg.norm(embeddings.data, axis=1)
    bad = np.nonzero(norms < _ZERO_NORM_TOL)[0]
    if bad.size:
        raise ZeroNormRow(int(bad[0]))
    return EmbeddingSet(embeddings.data / norms[:, None], normalized=True)


def similarity(queries: EmbeddingSet, galleries: EmbeddingSet, metric: str) -> SimilarityMatrix:
    """Pairwise similarity between two embedding sets.

    cosine: plain dot products; both inputs must carry the ``normalized``
    flag so the dot product actually is the cosine.
    neg_sq_l2: ``-||q - g||^2``, computed from explicit differences so the
    result is exactly zero iff the rows are bitwise equal, and never positive.
    """
    if metric not in METRICS:
        raise ValidationError(f"unknown metric {metric!r}")
    if queries.dim != galleries.dim:
        raise DimMismatch(f"query dim {queries.dim} != gallery dim {galleries.dim}")
    if metric == COSINE:
        if not (queries.normalized and galleries.normalized):
            raise ValidationError("cosine similarity requires unit-normalized inputs")
        values = queries.data @ galleries.data.T
    else:
        q, g = queries.data, galleries.data
        values = np.empty((q.shape[0], g.shape[0]), dtype=np.float64)
        block = max(1, _L2_BLOCK // max(1, g.shape[0] * g.shape[1]))
        for start in range(0, q.shape[0], block):
            stop = min(start + block, q.shape[0])
            diff = q[start:stop, None, :] - g[None, :, :]
            values[start:stop] = -np.einsum("qgd,qgd->qg", diff, diff)
    return SimilarityMatrix(values, metric)


def rank(sims: SimilarityMatrix) -> Ranking:
    """Stable descending argsort of each similarity row."""
    return Ranking(rank_rows(sims.values))


def rank_rows(values: np.ndarray) -> np.ndarray:
    """Descending stable argsort along the last axis (ties: lowest index first)."""
    return np.argsort(-np.asarray(values, dtype=np.float64), axis=-1, kind="stable")
