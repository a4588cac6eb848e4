"""Monte-Carlo verification of the hubness theorems on synthetic data.

The squared-l2 claims reduce to the exact identity

    E_x[ ||x2 - x||^2 - ||x1 - x||^2 ] = ||x2 - mu||^2 - ||x1 - mu||^2

for any sampling distribution with mean ``mu``; the cosine claims reduce to

    E_y[ cos(x1, y) - cos(x2, y) ] = (x1 - x2) . E[y] / r^2

for points on a radius-r hypersphere. The verifiers therefore compare the
Monte-Carlo estimate against those closed forms with a paired standard error:
either can fail only through sampling noise (bounded by the 4-sigma test) or
through an implementation bug, which is the point.

For the cross-space l2 claim the closed form is written with the *query*
space's mean, as in the source derivation; that form is exact only after
averaging over symmetric pairs, so cross-space verifiers redraw the pair
every trial and the standard error is computed on the paired differences.

Sphere sampling uses an angle-and-direction construction: a wrapped angle
from the chosen family around the mean axis plus a uniform orthogonal
direction. This keeps the sphere mean in closed form (radius * E[cos angle]
along the axis) for every family; the ambient-projection family instead gets
its mean magnitude from deterministic quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, stats

from .embeddings import EmbeddingSet
from .errors import InvalidParams, ValidationError
from .metrics import GroundTruth

FAMILY_GAUSSIAN = "gaussian"
FAMILY_UNIFORM_BOX = "uniform_box"
FAMILY_LAPLACIAN = "laplacian"
FAMILY_PROJECTED_SPHERE = "projected_gaussian_sphere"
FAMILIES = (FAMILY_GAUSSIAN, FAMILY_UNIFORM_BOX, FAMILY_LAPLACIAN, FAMILY_PROJECTED_SPHERE)

_CHUNK = 16384
_SIGMAS = 4.0

# planted-hub population: concentration of points about the shared axis,
# the query-side perturbation, and the ambiguous-query fraction/spread
_HUB_AXIS_CONCENTRATION = 2.4
_HUB_QUERY_NOISE = 0.10
_HUB_HARD_FRACTION = 0.10
_HUB_HARD_SPREAD = 0.15


@dataclass(frozen=True)
class SyntheticDistribution:
    """One symmetric sampling family, its center, scale, and dimension.

    scale means: standard deviation (gaussian), half-width (uniform_box),
    diversity (laplacian), or sphere radius (projected_gaussian_sphere, whose
    ambient draws are unit-variance gaussians centered at ``mean``).
    """

    family: str
    mean: np.ndarray
    scale: float
    dim: int

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidParams(f"unknown family {self.family!r}")
        mean = np.ascontiguousarray(self.mean, dtype=np.float64)
        if mean.ndim != 1 or mean.shape[0] != self.dim:
            raise InvalidParams(f"mean must be a length-{self.dim} vector")
        if not np.isfinite(mean).all():
            raise InvalidParams("mean contains non-finite entries")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise InvalidParams(f"scale must be finite and positive, got {self.scale}")
        if self.dim < 1:
            raise InvalidParams("dim must be >= 1")
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)


@dataclass(frozen=True)
class TheoremReport:
    """Outcome of one Monte-Carlo check against its closed-form value."""

    theorem_id: str
    variant: str
    n_trials: int
    empirical_delta: float
    analytic_delta: float
    standard_error: float
    passed: bool


def _draw(dist: SyntheticDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    shape = (n, dist.dim)
    if dist.family == FAMILY_GAUSSIAN:
        return dist.mean + dist.scale * rng.standard_normal(shape)
    if dist.family == FAMILY_UNIFORM_BOX:
        return dist.mean + rng.uniform(-dist.scale, dist.scale, shape)
    if dist.family == FAMILY_LAPLACIAN:
        return dist.mean + rng.laplace(0.0, dist.scale, shape)
    z = dist.mean + rng.standard_normal(shape)
    return dist.scale * z / np.linalg.norm(z, axis=1, keepdims=True)


def sample(dist: SyntheticDistribution, n: int, seed: int) -> EmbeddingSet:
    """Draw n points; deterministic per seed."""
    if n < 1:
        raise InvalidParams("n must be >= 1")
    data = _draw(dist, n, np.random.default_rng(np.random.SeedSequence(seed)))
    normalized = dist.family == FAMILY_PROJECTED_SPHERE and dist.scale == 1.0
    return EmbeddingSet(data, normalized=normalized)


@lru_cache(maxsize=None)
def _projected_mean_factor(center_norm: float, dim: int) -> float:
    """E[(z . u) / ||z||] for z ~ N(center_norm * u, I) in ``dim`` dimensions.

    Reduced to a 2-D integral over the axial normal component and the
    chi-distributed orthogonal magnitude; evaluated by adaptive quadrature.
    """
    c = float(center_norm)
    if dim == 1:
        return float(math.erf(c / math.sqrt(2.0)))
    df = dim - 1
    w_hi = math.sqrt(df) + 14.0

    def integrand(w: float, u: float) -> float:
        a = c + u
        return a / math.hypot(a, w) * stats.norm.pdf(u) * stats.chi.pdf(w, df)

    val, _err = integrate.dblquad(
        integrand, -14.0, 14.0, 0.0, w_hi, epsabs=1e-12, epsrel=1e-12
    )
    return float(val)


def true_mean(dist: SyntheticDistribution) -> np.ndarray:
    """Exact mean vector of the distribution (quadrature for the sphere family)."""
    if dist.family != FAMILY_PROJECTED_SPHERE:
        return dist.mean
    c = float(np.linalg.norm(dist.mean))
    if c == 0.0:
        return np.zeros(dist.dim)
    return dist.scale * _projected_mean_factor(c, dist.dim) * (dist.mean / c)


class _SphereLaw:
    """Sampling law on a radius-r hypersphere with a closed-form mean vector."""

    def __init__(self, axis: np.ndarray, radius: float, angle_family: str, spread: float):
        self.axis = axis
        self.radius = radius
        self.angle_family = angle_family
        self.spread = spread

    def expected_axis_cosine(self) -> float:
        a = self.spread
        if self.angle_family == FAMILY_GAUSSIAN:
            return math.exp(-0.5 * a * a)
        if self.angle_family == FAMILY_UNIFORM_BOX:
            return math.sin(a) / a
        return 1.0 / (1.0 + a * a)

    def mean_vector(self) -> np.ndarray:
        return self.radius * self.expected_axis_cosine() * self.axis

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.angle_family == FAMILY_GAUSSIAN:
            phi = self.spread * rng.standard_normal(n)
        elif self.angle_family == FAMILY_UNIFORM_BOX:
            phi = rng.uniform(-self.spread, self.spread, n)
        else:
            phi = rng.laplace(0.0, self.spread, n)
        # uniform direction in the hyperplane orthogonal to the axis
        z = rng.standard_normal((n, self.axis.shape[0]))
        z -= np.outer(z @ self.axis, self.axis)
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        norms[norms < 1e-300] = 1.0
        w = z / norms
        x = np.cos(phi)[:, None] * self.axis + np.sin(phi)[:, None] * w
        return self.radius * x


class _ProjectedSphereLaw:
    """The ambient-gaussian-projection law, wrapped to the same interface."""

    def __init__(self, dist: SyntheticDistribution):
        self.dist = dist
        self.radius = dist.scale
        norm = float(np.linalg.norm(dist.mean))
        self.axis = dist.mean / norm if norm > 0 else np.zeros(dist.dim)

    def mean_vector(self) -> np.ndarray:
        return true_mean(self.dist)

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return _draw(self.dist, n, rng)


def _spherize(dist: SyntheticDistribution):
    if dist.family == FAMILY_PROJECTED_SPHERE:
        return _ProjectedSphereLaw(dist)
    norm = float(np.linalg.norm(dist.mean))
    if norm == 0.0:
        raise InvalidParams("a sphere law needs a nonzero mean to define its axis")
    if dist.dim < 2:
        raise InvalidParams("sphere laws need dim >= 2")
    return _SphereLaw(dist.mean / norm, 1.0, dist.family, dist.scale)


def _chunk_rng(seed: int, stream: int, chunk: int) -> np.random.Generator:
    # counter-based seeding: chunk results are independent of execution order
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, stream, chunk)))


def _paired_mc(theorem_id: str, variant: str, n_trials: int, make_chunk) -> TheoremReport:
    """Accumulate per-trial (empirical, analytic) values chunk by chunk."""
    if n_trials < 2:
        raise InvalidParams("n_trials must be >= 2")
    sum_d = sum_a = sum_diff = sum_diff_sq = 0.0
    done = 0
    chunk_idx = 0
    while done < n_trials:
        m = min(_CHUNK, n_trials - done)
        d, a = make_chunk(chunk_idx, m)
        diff = d - a
        sum_d += float(d.sum())
        sum_a += float(a.sum())
        sum_diff += float(diff.sum())
        sum_diff_sq += float((diff * diff).sum())
        done += m
        chunk_idx += 1
    emp = sum_d / n_trials
    ana = sum_a / n_trials
    mean_diff = sum_diff / n_trials
    var_diff = max(0.0, (sum_diff_sq - n_trials * mean_diff * mean_diff) / (n_trials - 1))
    se = math.sqrt(var_diff / n_trials)
    passed = abs(emp - ana) <= _SIGMAS * se and emp > 0.0
    return TheoremReport(
        theorem_id=theorem_id,
        variant=variant,
        n_trials=n_trials,
        empirical_delta=emp,
        analytic_delta=ana,
        standard_error=se,
        passed=passed,
    )


def _ordered_pair(x1, x2, key1, key2, invert: bool):
    """Swap pair entries so key1 >= key2 holds row-wise (or the opposite)."""
    wrong = key2 > key1 if not invert else key1 > key2
    if x1.ndim == 1:
        return (x2, x1) if wrong else (x1, x2)
    x1 = x1.copy()
    x2 = x2.copy()
    x1[wrong], x2[wrong] = x2[wrong], x1[wrong].copy()
    return x1, x2


def _sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a - b
    return np.einsum("...d,...d->...", diff, diff)


def verify_theorem1(
    dist: SyntheticDistribution,
    n_trials: int = 100_000,
    seed: int = 0,
    pair: tuple[np.ndarray, np.ndarray] | None = None,
    _invert_precondition: bool = False,
) -> TheoremReport:
    """Same-space l2 check: the point nearer the mean is nearer everyone.

    With ``pair`` given, the two candidate points stay fixed (the closed form
    is exact for any fixed pair) and only the probe point is resampled; by
    default a fresh pair is drawn each trial.
    """
    mu = true_mean(dist)

    if pair is not None:
        x1, x2 = (np.asarray(p, dtype=np.float64) for p in pair)
        x1, x2 = _ordered_pair(
            x1, x2, -_sq_dist(x1, mu), -_sq_dist(x2, mu), _invert_precondition
        )
        analytic = float(_sq_dist(x2, mu) - _sq_dist(x1, mu))

        def make_chunk(chunk, m):
            x = _draw(dist, m, _chunk_rng(seed, 1, chunk))
            return _sq_dist(x2, x) - _sq_dist(x1, x), np.full(m, analytic)

        return _paired_mc("T1", "same_space", n_trials, make_chunk)

    def make_chunk(chunk, m):
        pair_rng = _chunk_rng(seed, 0, chunk)
        x1 = _draw(dist, m, pair_rng)
        x2 = _draw(dist, m, pair_rng)
        x1, x2 = _ordered_pair(
            x1, x2, -_sq_dist(x1, mu), -_sq_dist(x2, mu), _invert_precondition
        )
        x = _draw(dist, m, _chunk_rng(seed, 1, chunk))
        return _sq_dist(x2, x) - _sq_dist(x1, x), _sq_dist(x2, mu) - _sq_dist(x1, mu)

    return _paired_mc("T1", "same_space", n_trials, make_chunk)


def verify_theorem2(
    dist_x: SyntheticDistribution,
    dist_y: SyntheticDistribution,
    n_trials: int = 100_000,
    seed: int = 0,
    _invert_precondition: bool = False,
) -> TheoremReport:
    """Cross-space l2 check: hubness of the pair carries over to space Y.

    The closed form uses only X's mean, so it is independent of Y's mean and
    shape; the pair is redrawn every trial, which is what makes that form
    exact for symmetric X.
    """
    if dist_x.dim != dist_y.dim:
        raise InvalidParams("dist_x and dist_y must share a dimension")
    mu_x = true_mean(dist_x)

    def make_chunk(chunk, m):
        pair_rng = _chunk_rng(seed, 0, chunk)
        x1 = _draw(dist_x, m, pair_rng)
        x2 = _draw(dist_x, m, pair_rng)
        x1, x2 = _ordered_pair(
            x1, x2, -_sq_dist(x1, mu_x), -_sq_dist(x2, mu_x), _invert_precondition
        )
        y = _draw(dist_y, m, _chunk_rng(seed, 1, chunk))
        return _sq_dist(x2, y) - _sq_dist(x1, y), _sq_dist(x2, mu_x) - _sq_dist(x1, mu_x)

    return _paired_mc("T2", "cross_space", n_trials, make_chunk)


def _same_dist(a: SyntheticDistribution, b: SyntheticDistribution) -> bool:
    return (
        a.family == b.family
        and a.scale == b.scale
        and a.dim == b.dim
        and np.array_equal(a.mean, b.mean)
    )


def verify_theorem3(
    dist_x: SyntheticDistribution,
    dist_y: SyntheticDistribution,
    n_trials: int = 100_000,
    seed: int = 0,
    _invert_precondition: bool = False,
) -> TheoremReport:
    """Cosine check on a common hypersphere, same- or cross-space.

    Ambient families are mapped onto the unit sphere by the wrapped-angle
    construction (scale becomes the angular spread about the mean axis);
    the projection family is used as-is. Passing ``dist_y = dist_x`` gives
    the same-space variant. Cross-space laws must share the mean axis for
    the expected gap to stay positive; the closed form handles any axes.
    """
    law_x = _spherize(dist_x)
    law_y = law_x if _same_dist(dist_x, dist_y) else _spherize(dist_y)
    if dist_x.dim != dist_y.dim:
        raise InvalidParams("dist_x and dist_y must share a dimension")
    if law_x.radius != law_y.radius:
        raise InvalidParams("both sphere laws must share one radius")
    r_sq = law_x.radius * law_x.radius
    m_y = law_y.mean_vector()
    axis_x = law_x.axis
    variant = "same_space" if law_y is law_x else "cross_space"

    def make_chunk(chunk, m):
        pair_rng = _chunk_rng(seed, 0, chunk)
        x1 = law_x.draw(m, pair_rng)
        x2 = law_x.draw(m, pair_rng)
        x1, x2 = _ordered_pair(x1, x2, x1 @ axis_x, x2 @ axis_x, _invert_precondition)
        y = law_y.draw(m, _chunk_rng(seed, 1, chunk))
        gap = x1 - x2
        return np.einsum("md,md->m", gap, y) / r_sq, (gap @ m_y) / r_sq

    return _paired_mc("T3", variant, n_trials, make_chunk)


def verify_corollary1(
    dist_x: SyntheticDistribution,
    dist_y: SyntheticDistribution,
    n_trials: int = 100_000,
    seed: int = 0,
) -> TheoremReport:
    """l2 hubness against both spaces at once: T1 and T2 must both hold.

    The reported statistics come from the binding sub-check (a failing one if
    any, else the one closer to its noise budget).
    """
    sub = [
        verify_theorem1(dist_x, n_trials, seed),
        verify_theorem2(dist_x, dist_y, n_trials, seed + 1),
    ]
    failing = [r for r in sub if not r.passed]
    if failing:
        binding = failing[0]
    else:
        def tightness(r: TheoremReport) -> float:
            if r.standard_error == 0.0:
                return 0.0
            return abs(r.empirical_delta - r.analytic_delta) / r.standard_error

        binding = max(sub, key=tightness)
    return TheoremReport(
        theorem_id="C1",
        variant=binding.variant,
        n_trials=n_trials,
        empirical_delta=binding.empirical_delta,
        analytic_delta=binding.analytic_delta,
        standard_error=binding.standard_error,
        passed=all(r.passed for r in sub),
    )


def planted_hub_benchmark(
    n_queries: int,
    n_galleries: int,
    dim: int,
    hub_pull: float,
    seed: int,
) -> tuple[EmbeddingSet, EmbeddingSet, GroundTruth]:
    """Matched query/gallery pairs on the unit sphere with one gallery point
    dragged toward the population centroid.

    Galleries concentrate about a fixed axis (so the centroid is away from
    the origin and "toward the centroid" means something). Most queries are
    tight perturbations of their gallery; a small fraction are "ambiguous"
    and collapse toward the axis instead, the way uncertain encoder inputs
    collapse toward the embedding mode -- these are the queries a central
    point can capture. Gallery 0 is then pulled toward the centroid by
    ``hub_pull`` and renormalized, which by the hubness theorems makes it the
    point every ambiguous query retrieves; ``hub_pull=0`` leaves the data
    untouched and the 1-occurrence counts stay near-uniform. Ground truth
    keeps the original pairing (query i with gallery i mod n_galleries).

    Fixtures for banks come from a second call with a fresh seed and
    ``hub_pull=0``: same population, no planted hub.
    """
    if n_galleries < 2:
        raise InvalidParams("need at least 2 gallery points")
    if n_queries < 1:
        raise InvalidParams("need at least 1 query")
    if not 0.0 <= hub_pull < 1.0:
        raise InvalidParams(f"hub_pull must be in [0, 1), got {hub_pull}")
    if dim < 2:
        raise InvalidParams("dim must be >= 2")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 2)))
    axis = np.zeros(dim)
    axis[0] = 1.0

    g = _HUB_AXIS_CONCENTRATION * axis + rng.standard_normal((n_galleries, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)

    base = g[np.arange(n_queries) % n_galleries]
    q = base + _HUB_QUERY_NOISE * rng.standard_normal((n_queries, dim))
    hard = rng.random(n_queries) < _HUB_HARD_FRACTION
    collapsed = axis + _HUB_HARD_SPREAD * rng.standard_normal((n_queries, dim))
    q[hard] = collapsed[hard]
    q /= np.linalg.norm(q, axis=1, keepdims=True)

    if hub_pull > 0.0:
        centroid = g.mean(axis=0)
        pulled = (1.0 - hub_pull) * g[0] + hub_pull * centroid
        g[0] = pulled / np.linalg.norm(pulled)

    truth = GroundTruth.one_to_one(np.arange(n_queries) % n_galleries)
    return (
        EmbeddingSet(q, normalized=True),
        EmbeddingSet(g, normalized=True),
        truth,
    )
