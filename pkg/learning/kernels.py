"""
Isotropic Gaussian kernels and kernel density estimation

The kernel is kappa(x, x') = amplitude * exp(-|x - x'|^2 / (2 eps^2)). Every
downstream use forms ratios or renormalized sums, so the amplitude and the
1/2 convention cancel as long as this single definition is used everywhere.

Two summation paths exist: a brute-force path over all source/query pairs,
and an accelerated path that hashes sources into a uniform grid with cell
size equal to the truncation radius and drops pairs farther apart than the
radius.
"""

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from utils.errors import InputError

if TYPE_CHECKING:
    from datagen.dataset import Dataset
    from tasks.base import SupportTrace

logger = logging.getLogger(__name__)

# Added to densities before dividing by them
DENSITY_FLOOR = 1e-300

# Pairs evaluated per block on the brute-force path
_BLOCK_PAIRS = 1 << 20


@dataclass(frozen=True)
class KernelSpec:
    variance: float
    truncation_radius_factor: float = 6.0
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.variance > 0:
            raise InputError(f"Kernel variance must be positive, got {self.variance}")
        if not self.truncation_radius_factor >= 3:
            raise InputError(
                f"Truncation radius factor must be at least 3, got {self.truncation_radius_factor}"
            )
        if not self.amplitude > 0:
            raise InputError(f"Kernel amplitude must be positive, got {self.amplitude}")

    @property
    def bandwidth(self) -> float:
        return float(np.sqrt(self.variance))

    @property
    def radius(self) -> float:
        return self.truncation_radius_factor * self.bandwidth

    def scaled(self, factor: float) -> "KernelSpec":
        """The same kernel for coordinates multiplied by `factor`"""
        return KernelSpec(self.variance * factor ** 2, self.truncation_radius_factor, self.amplitude)


@dataclass(frozen=True)
class DensityEstimate:
    values: np.ndarray
    spec: KernelSpec
    source_count: int

    def __len__(self) -> int:
        return len(self.values)


def as_points(points, dim: Optional[int] = None, name: str = "points") -> np.ndarray:
    """Coerce a point or point sequence to a float64 (n, d) array"""
    array = np.asarray(points, dtype=np.float64)
    if array.ndim == 0:
        array = array.reshape(1, 1)
    elif array.ndim == 1:
        array = array.reshape(-1, 1) if dim == 1 else array.reshape(1, -1)
    if array.ndim != 2:
        raise InputError(f"{name} must be a point or a sequence of points")
    if dim is not None and array.shape[1] != dim:
        raise InputError(f"{name} have dimension {array.shape[1]}, expected {dim}")
    return array


def kernel_weight(x, x_prime, spec: KernelSpec) -> float:
    """
    Kernel value between two points

    Args:
        x: First point
        x_prime: Second point
        spec (KernelSpec): Kernel parameters

    Returns:
        float: amplitude * exp(-|x - x'|^2 / (2 eps^2))
    """
    a = np.atleast_1d(np.asarray(x, dtype=np.float64))
    b = np.atleast_1d(np.asarray(x_prime, dtype=np.float64))
    if a.shape != b.shape:
        raise InputError(f"Dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(spec.amplitude * np.exp(-np.dot(diff, diff) / (2.0 * spec.variance)))


def kernel_sums(sources, queries, spec: KernelSpec, weights=None, accelerated: bool = True) -> np.ndarray:
    """
    Weighted kernel sums sum_s w_s kappa(x_s, q) for every query q

    Args:
        sources: (S, d) source points
        queries: (Q, d) query points
        spec (KernelSpec): Kernel parameters
        weights: Optional (S,) or (S, k) source weights, ones by default
        accelerated (bool): Use the truncated grid path

    Returns:
        np.ndarray: (Q,) or (Q, k) sums
    """
    sources = as_points(sources, name="sources")
    queries = as_points(queries, dim=sources.shape[1], name="queries")
    if len(sources) == 0:
        raise InputError("At least one source point is required")

    w = np.ones(len(sources)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape[0] != len(sources):
        raise InputError(f"Got {w.shape[0]} weights for {len(sources)} sources")
    column = w.ndim == 1
    w = w.reshape(len(sources), -1)

    if accelerated:
        out = _grid_sums(sources, queries, spec, w)
    else:
        out = _brute_sums(sources, queries, spec, w)
    return out[:, 0] if column else out


def kernel_matrix(a, b, spec: KernelSpec) -> np.ndarray:
    """Dense (len(a), len(b)) kernel matrix, no truncation"""
    a = as_points(a, name="a")
    b = as_points(b, dim=a.shape[1], name="b")
    return spec.amplitude * np.exp(-_squared_distances(a, b) / (2.0 * spec.variance))


def _squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sum(diff * diff, axis=2)


def _weighted_block(queries, sources, w, spec, radius_sq=None) -> np.ndarray:
    d2 = _squared_distances(queries, sources)
    k = spec.amplitude * np.exp(-d2 / (2.0 * spec.variance))
    if radius_sq is not None:
        k[d2 > radius_sq] = 0.0
    # Pairwise summation over sources in fixed index order
    return np.sum(k[:, :, None] * w[None, :, :], axis=1)


def _brute_sums(sources, queries, spec, w) -> np.ndarray:
    out = np.zeros((len(queries), w.shape[1]))
    block = max(1, _BLOCK_PAIRS // max(1, len(sources) * w.shape[1]))
    for start in range(0, len(queries), block):
        stop = min(start + block, len(queries))
        out[start:stop] = _weighted_block(queries[start:stop], sources, w, spec)
    return out


def _grid_sums(sources, queries, spec, w) -> np.ndarray:
    radius = spec.radius
    radius_sq = radius * radius
    dim = sources.shape[1]
    origin = np.minimum(sources.min(axis=0), queries.min(axis=0))

    source_cells = np.floor((sources - origin) / radius).astype(np.int64)
    query_cells = np.floor((queries - origin) / radius).astype(np.int64)

    # Spatial hash: cell -> ascending source indices
    unique_cells, inverse = np.unique(source_cells, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(unique_cells) + 1))
    table = {
        tuple(cell): order[bounds[i]:bounds[i + 1]]
        for i, cell in enumerate(unique_cells)
    }

    offsets = np.array(np.meshgrid(*([[-1, 0, 1]] * dim), indexing="ij")).reshape(dim, -1).T
    out = np.zeros((len(queries), w.shape[1]))

    query_unique, query_inverse = np.unique(query_cells, axis=0, return_inverse=True)
    query_inverse = query_inverse.reshape(-1)
    for i, cell in enumerate(query_unique):
        members = np.flatnonzero(query_inverse == i)
        nearby = [table.get(tuple(cell + offset)) for offset in offsets]
        nearby = [idx for idx in nearby if idx is not None]
        if not nearby:
            continue
        candidates = np.sort(np.concatenate(nearby))
        block = max(1, _BLOCK_PAIRS // max(1, len(candidates) * w.shape[1]))
        for start in range(0, len(members), block):
            rows = members[start:start + block]
            out[rows] = _weighted_block(queries[rows], sources[candidates], w[candidates], spec, radius_sq)
    return out


def estimate_density(sources, queries, spec: KernelSpec, accelerated: bool = True) -> DensityEstimate:
    """
    Kernel density estimate (1/S) sum_s kappa(x_s, q) at each query

    Args:
        sources: (S, d) points defining the empirical measure
        queries: (Q, d) evaluation points
        spec (KernelSpec): Kernel parameters
        accelerated (bool): Use the truncated grid path

    Returns:
        DensityEstimate: One value per query
    """
    sources = as_points(sources, name="sources")
    if len(sources) == 0:
        raise InputError("Density estimation needs at least one source point")
    values = kernel_sums(sources, queries, spec, accelerated=accelerated) / len(sources)
    return DensityEstimate(values=values, spec=spec, source_count=len(sources))


def calibrate_error_variance(
    dataset: "Dataset",
    model,
    support: "SupportTrace",
    candidates: Sequence[float],
    neighborhood_k: int,
    truncation_radius_factor: float = 6.0,
    accelerated: bool = True,
) -> KernelSpec:
    """
    Choose the support-error kernel variance by leave-one-out estimation

    For the training points nearest to the support, the error at x_i is
    estimated from all other training points and compared with the true
    per-sample loss; the candidate with the smallest mean squared gap wins,
    ties going to the larger variance.

    Args:
        dataset (Dataset): Training data with precomputed densities
        model: Object with `squared_errors(inputs, labels)`
        support (SupportTrace): Current algorithm support
        candidates: Candidate variances
        neighborhood_k (int): Number of training points used for scoring
        truncation_radius_factor (float): Truncation of the returned spec
        accelerated (bool): Use the truncated grid path

    Returns:
        KernelSpec: The selected kernel
    """
    candidates = [float(c) for c in candidates]
    if not candidates:
        raise InputError("At least one candidate variance is required")
    if dataset.n < 2:
        raise InputError("Variance calibration needs at least two training points")
    if not 1 <= neighborhood_k <= dataset.n:
        raise InputError(f"neighborhood_k must lie in [1, {dataset.n}], got {neighborhood_k}")
    if len(candidates) == 1:
        return KernelSpec(candidates[0], truncation_radius_factor)

    densities = dataset.require_densities()
    losses = model.squared_errors(dataset.inputs, dataset.labels)

    distance_to_support, _ = cKDTree(support.points).query(dataset.inputs)
    nearest = np.argsort(distance_to_support, kind="stable")[:neighborhood_k]
    targets = dataset.inputs[nearest]

    inverse_density = 1.0 / (densities + DENSITY_FLOOR)
    source_weights = np.column_stack([losses * inverse_density, inverse_density])

    best_spec, best_score = None, np.inf
    for variance in sorted(candidates, reverse=True):
        spec = KernelSpec(variance, truncation_radius_factor)
        sums = kernel_sums(dataset.inputs, targets, spec, source_weights, accelerated=accelerated)
        # Remove each target's own contribution
        sums = sums - spec.amplitude * source_weights[nearest]
        numerator, denominator = sums[:, 0], sums[:, 1]
        estimate = np.where(denominator > DENSITY_FLOOR, numerator / np.maximum(denominator, DENSITY_FLOOR), 0.0)
        score = float(np.mean((estimate - losses[nearest]) ** 2))
        logger.debug(f"Variance {variance:g}: leave-one-out score {score:.6e}")
        if score < best_score:
            best_spec, best_score = spec, score

    logger.info(f"Calibrated support-error kernel variance: {best_spec.variance:g} (score {best_score:.3e})")
    return best_spec
