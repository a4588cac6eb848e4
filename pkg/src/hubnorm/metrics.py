"""Retrieval quality metrics and the k-occurrence hubness diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import Ranking
from .errors import DegenerateDistribution, IndexOutOfRange, InvalidK, ValidationError


@dataclass(frozen=True)
class GroundTruth:
    """Per-query set of correct gallery indices (>= 1 each).

    Multi-caption galleries map several correct indices to one query; rank
    statistics then use the best (minimum) rank over the correct set, the
    standard protocol for such benchmarks.
    """

    correct: tuple[np.ndarray, ...]

    def __post_init__(self):
        rows = []
        for q, idx in enumerate(self.correct):
            arr = np.unique(np.asarray(idx, dtype=np.int64))
            if arr.size < 1:
                raise ValidationError(f"query {q} has no correct gallery")
            if arr.min() < 0:
                raise IndexOutOfRange(f"query {q} references a negative gallery index")
            arr.setflags(write=False)
            rows.append(arr)
        object.__setattr__(self, "correct", tuple(rows))
        if not rows:
            raise ValidationError("ground truth must cover at least one query")

    @classmethod
    def one_to_one(cls, indices) -> "GroundTruth":
        return cls(tuple(np.asarray([i]) for i in np.asarray(indices, dtype=np.int64)))

    @property
    def n_queries(self) -> int:
        return len(self.correct)


@dataclass(frozen=True)
class OccurrenceDistribution:
    """counts[i] = number of queries whose top-k retrieval contains gallery i."""

    counts: np.ndarray
    k: int

    def __post_init__(self):
        arr = np.ascontiguousarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", arr)
        arr.setflags(write=False)


@dataclass(frozen=True)
class RetrievalReport:
    """Everything one evaluation run reports for a single method."""

    r_at: dict[int, float]
    mdr: float
    mnr: float
    skewness: float
    k_occurrence: OccurrenceDistribution


def _check_truth(ranking: Ranking, truth: GroundTruth) -> None:
    if truth.n_queries != ranking.n_queries:
        raise ValidationError(
            f"{truth.n_queries} ground-truth rows for {ranking.n_queries} ranked queries"
        )
    for q, idx in enumerate(truth.correct):
        if idx.max() >= ranking.n_galleries:
            raise IndexOutOfRange(
                f"query {q} references gallery {int(idx.max())} >= {ranking.n_galleries}"
            )


def best_correct_ranks(ranking: Ranking, truth: GroundTruth) -> np.ndarray:
    """1-based rank of the best correct gallery for every query."""
    _check_truth(ranking, truth)
    # positions[q, g] = 1-based rank of gallery g in query q's list
    positions = np.empty_like(ranking.indices)
    ar = np.arange(1, ranking.n_galleries + 1, dtype=np.int64)
    np.put_along_axis(positions, ranking.indices, np.broadcast_to(ar, positions.shape), axis=1)
    return np.array(
        [positions[q, idx].min() for q, idx in enumerate(truth.correct)], dtype=np.int64
    )


def recall_at_k(ranking: Ranking, truth: GroundTruth, ks) -> dict[int, float]:
    """Percentage of queries whose best correct gallery is ranked within top K."""
    ranks = best_correct_ranks(ranking, truth)
    return {int(k): float(np.mean(ranks <= int(k)) * 100.0) for k in ks}


def rank_stats(ranking: Ranking, truth: GroundTruth) -> tuple[float, float]:
    """(median rank, mean rank) of the best correct gallery, both 1-based.

    The median interpolates (mean of the two middle ranks) for even query
    counts, matching reported fractional median ranks.
    """
    ranks = best_correct_ranks(ranking, truth)
    return float(np.median(ranks)), float(np.mean(ranks))


def k_occurrence(ranking: Ranking, k: int) -> OccurrenceDistribution:
    """How often each gallery point shows up in the queries' top-k lists."""
    if not 1 <= k <= ranking.n_galleries:
        raise InvalidK(f"k={k} outside [1, {ranking.n_galleries}]")
    counts = np.bincount(ranking.indices[:, :k].ravel(), minlength=ranking.n_galleries)
    return OccurrenceDistribution(counts, k=k)


def skewness(occ: OccurrenceDistribution) -> float:
    """Population third standardized moment of the occurrence counts.

    Large positive values mean a right tail of heavily-retrieved points,
    i.e. pronounced hubness.
    """
    counts = occ.counts.astype(np.float64)
    centered = counts - counts.mean()
    var = np.mean(centered**2)
    if var == 0.0:
        raise DegenerateDistribution("all occurrence counts are equal; skewness undefined")
    return float(np.mean(centered**3) / var**1.5)


def build_report(
    ranking: Ranking,
    truth: GroundTruth,
    ks=(1, 5, 10),
    occurrence_k: int = 1,
    skewness_k: int = 10,
) -> RetrievalReport:
    """Assemble the standard report: R@K, MdR/MnR, skewness, occurrence counts.

    The occurrence histogram uses k=1 (the retrieval-frequency view) while the
    skewness is measured on the k=10 occurrence distribution, both capped at
    the gallery size for small fixtures. A perfectly uniform occurrence
    distribution has undefined skewness and is reported as NaN rather than
    aborting the whole batch; the ``skewness`` operation itself stays strict.
    """
    ks = [int(k) for k in ks if int(k) <= ranking.n_galleries]
    mdr, mnr = rank_stats(ranking, truth)
    occ = k_occurrence(ranking, min(occurrence_k, ranking.n_galleries))
    try:
        skew = skewness(k_occurrence(ranking, min(skewness_k, ranking.n_galleries)))
    except DegenerateDistribution:
        skew = float("nan")
    return RetrievalReport(
        r_at=recall_at_k(ranking, truth, ks),
        mdr=mdr,
        mnr=mnr,
        skewness=skew,
        k_occurrence=occ,
    )
