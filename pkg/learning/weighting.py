"""
Reweighting coefficients for task-specific training

Given the current model and the support of the downstream task, the
training samples are reweighted so that the weighted empirical risk
approximates a blend of the mean and the maximum prediction error over the
support:

    l(x~_j)  kernel-weighted average of per-sample losses near x~_j
    alpha_j  inverse support density, mean 1
    omega_j  J * softmax(M * l_j / mean(l)) + omega0
    m(x_i)   (1/J) sum_j omega_j alpha_j kappa(x_i, x~_j) / rho_N(x_i), mean 1
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Optional

import numpy as np
from scipy.special import softmax

from learning.kernels import DENSITY_FLOOR, KernelSpec, as_points, estimate_density, kernel_sums
from utils.errors import DegenerateNeighborhood, InputError, TotallyLostSupport

if TYPE_CHECKING:
    from datagen.dataset import Dataset
    from tasks.base import SupportTrace

logger = logging.getLogger(__name__)

# Kernel mass below which a neighborhood counts as empty
WEIGHT_FLOOR = 1e-300


class BaselineScheme(str, Enum):
    M1 = "m1"  # 1/rho: MSE on the uniform measure
    M2 = "m2"  # proportional to the per-sample loss


@dataclass(frozen=True)
class WeightingConfig:
    M: float = 10.0
    omega0: float = 0.5
    kernel_rho: KernelSpec = field(default_factory=lambda: KernelSpec(1.0))
    kernel_nu: KernelSpec = field(default_factory=lambda: KernelSpec(1.0))
    kernel_l: KernelSpec = field(default_factory=lambda: KernelSpec(1.0))
    kernel_m: KernelSpec = field(default_factory=lambda: KernelSpec(1.0))
    accelerated: bool = True

    def __post_init__(self):
        if self.M < 0:
            raise InputError(f"Softmax sharpness M must be nonnegative, got {self.M}")
        if self.omega0 < 0:
            raise InputError(f"omega0 must be nonnegative, got {self.omega0}")
        if self.kernel_m.variance < self.kernel_l.variance:
            raise InputError(
                f"The m kernel variance ({self.kernel_m.variance}) must not be smaller "
                f"than the l kernel variance ({self.kernel_l.variance})"
            )

    def with_error_kernel(self, kernel_l: KernelSpec) -> "WeightingConfig":
        """Replace the l kernel, raising the m kernel to keep it at least as wide"""
        kernel_m = self.kernel_m
        if kernel_m.variance < kernel_l.variance:
            kernel_m = KernelSpec(kernel_l.variance, kernel_m.truncation_radius_factor, kernel_m.amplitude)
        return WeightingConfig(
            self.M, self.omega0, self.kernel_rho, self.kernel_nu, kernel_l, kernel_m, self.accelerated
        )


@dataclass(frozen=True, eq=False)
class WeightState:
    """
    Weighting quantities for one model snapshot

    The support arrays cover the retained support points; support points with
    no training data in their neighborhood are listed in `dropped`.
    """

    support_errors: np.ndarray
    stratification: np.ndarray
    emphasis: np.ndarray
    sample_coefficients: np.ndarray
    risk_RN: float
    metric_RSN: float
    retained: np.ndarray
    dropped: tuple = ()

    @property
    def support_length(self) -> int:
        return len(self.support_errors)


def normalized_sample_weights(dataset: "Dataset", query, spec: KernelSpec, query_index: int = 0) -> np.ndarray:
    """
    Weights K(x_i, q) proportional to kappa(x_i, q) / rho_N(x_i) with mean 1

    Args:
        dataset (Dataset): Training data with densities
        query: A single input-space point
        spec (KernelSpec): Kernel of the support error estimate
        query_index (int): Index reported when the neighborhood is empty

    Returns:
        np.ndarray: N weights averaging to 1
    """
    densities = dataset.require_densities()
    q = as_points(query, dim=dataset.input_dim, name="query")
    if len(q) != 1:
        raise InputError("normalized_sample_weights takes a single query point")
    diff = dataset.inputs - q[0]
    raw = spec.amplitude * np.exp(-np.sum(diff * diff, axis=1) / (2.0 * spec.variance))
    raw = raw / (densities + DENSITY_FLOOR)
    total = np.sum(raw)
    if not total > WEIGHT_FLOOR:
        raise DegenerateNeighborhood(query_index)
    return raw * (dataset.n / total)


def _error_sums(dataset: "Dataset", losses: np.ndarray, points: np.ndarray, spec: KernelSpec, accelerated: bool):
    inverse_density = 1.0 / (dataset.require_densities() + DENSITY_FLOOR)
    weights = np.column_stack([losses * inverse_density, inverse_density])
    sums = kernel_sums(dataset.inputs, points, spec, weights, accelerated=accelerated)
    return sums[:, 0], sums[:, 1]


def estimate_support_errors(
    dataset: "Dataset", model, support: "SupportTrace", spec: KernelSpec, accelerated: bool = True
) -> np.ndarray:
    """
    Estimated prediction error l(x~_j) at every support point

    l(x~_j) = (1/N) sum_i K(x_i, x~_j) |f(x_i) - y_i|^2

    Raises:
        DegenerateNeighborhood: For the first support point without training
            data in its kernel neighborhood
    """
    if model.spec.input_dim != dataset.input_dim:
        raise InputError(
            f"Model input dimension {model.spec.input_dim} does not match the dataset ({dataset.input_dim})"
        )
    points = as_points(support.points, dim=dataset.input_dim, name="support points")
    losses = model.squared_errors(dataset.inputs, dataset.labels)
    numerator, denominator = _error_sums(dataset, losses, points, spec, accelerated)
    empty = np.flatnonzero(~(denominator > WEIGHT_FLOOR))
    if len(empty):
        raise DegenerateNeighborhood(int(empty[0]))
    return numerator / denominator


def stratification_factors(support: "SupportTrace", spec: KernelSpec, accelerated: bool = True) -> np.ndarray:
    """alpha_j proportional to 1 / nu(x~_j), the inverse support density, with mean 1"""
    points = as_points(support.points, name="support points")
    if len(points) == 0:
        raise InputError("The support must contain at least one point")
    nu = estimate_density(points, points, spec, accelerated=accelerated).values
    inverse = 1.0 / nu
    return inverse / np.mean(inverse)


def emphasis_weights(support_errors, M: float, omega0: float) -> np.ndarray:
    """
    omega_j = J * softmax(M * l_j / mean(l)) + omega0

    A zero mean error gives a uniform softmax.
    """
    errors = np.asarray(support_errors, dtype=np.float64).reshape(-1)
    if len(errors) == 0:
        raise InputError("At least one support error is required")
    mean_error = np.mean(errors)
    if mean_error > 0:
        logits = M * errors / mean_error
    else:
        logits = np.zeros_like(errors)
    return len(errors) * softmax(logits) + omega0


def reweighting_coefficients(dataset: "Dataset", model, support: "SupportTrace", cfg: WeightingConfig) -> WeightState:
    """
    Compute the full weight state for the current model and support

    Support points without training data near them are left out of the
    coefficients with a warning; R_SN is infinite while any point is left out.

    Args:
        dataset (Dataset): Training data with densities from cfg.kernel_rho
        model: Current surrogate (must provide `spec` and `squared_errors`)
        support (SupportTrace): Support of the downstream task
        cfg (WeightingConfig): Kernels and emphasis parameters

    Returns:
        WeightState: Normalized coefficients and the derived risks

    Raises:
        TotallyLostSupport: If no support point has training data nearby, or
            the coefficient mass vanishes
    """
    points = as_points(support.points, dim=dataset.input_dim, name="support points")
    if len(points) == 0:
        raise InputError("The support must contain at least one point")
    densities = dataset.require_densities()
    losses = model.squared_errors(dataset.inputs, dataset.labels)

    numerator, denominator = _error_sums(dataset, losses, points, cfg.kernel_l, cfg.accelerated)
    retained = np.flatnonzero(denominator > WEIGHT_FLOOR)
    dropped = tuple(int(j) for j in np.flatnonzero(~(denominator > WEIGHT_FLOOR)))
    if len(retained) == 0:
        raise TotallyLostSupport(
            f"None of the {len(points)} support points has training data within its kernel neighborhood"
        )
    if dropped:
        logger.warning(f"{len(dropped)} of {len(points)} support points lie outside the training data; R_SN is unbounded")

    kept_points = points[retained]
    errors = numerator[retained] / denominator[retained]
    metric_RSN = float("inf") if dropped else float(np.max(errors))
    nu = estimate_density(kept_points, kept_points, cfg.kernel_nu, accelerated=cfg.accelerated).values
    alpha = (1.0 / nu) / np.mean(1.0 / nu)
    omega = emphasis_weights(errors, cfg.M, cfg.omega0)

    mass = kernel_sums(kept_points, dataset.inputs, cfg.kernel_m, omega * alpha, accelerated=cfg.accelerated)
    raw = mass / len(kept_points) / (densities + DENSITY_FLOOR)
    total = np.sum(raw)
    if not total > WEIGHT_FLOOR:
        raise TotallyLostSupport("Reweighting coefficients vanish on every training point")
    coefficients = raw * (dataset.n / total)

    return WeightState(
        support_errors=errors,
        stratification=alpha,
        emphasis=omega,
        sample_coefficients=coefficients,
        risk_RN=float(np.mean(coefficients * losses)),
        metric_RSN=metric_RSN,
        retained=retained,
        dropped=dropped,
    )


def baseline_weights(dataset: "Dataset", model, scheme) -> np.ndarray:
    """
    Ablation weights normalized to mean 1

    M1 weights by 1/rho_N; M2 weights by the per-sample loss and falls back to
    uniform weights when every loss is zero.
    """
    scheme = BaselineScheme(scheme)
    if scheme == BaselineScheme.M1:
        raw = 1.0 / (dataset.require_densities() + DENSITY_FLOOR)
    else:
        raw = model.squared_errors(dataset.inputs, dataset.labels)
        if not np.sum(raw) > 0:
            logger.warning("All per-sample losses are zero; using uniform weights")
            return np.ones(dataset.n)
    return raw * (dataset.n / np.sum(raw))


def relative_l1_change(previous: Optional[np.ndarray], current: np.ndarray) -> float:
    """sum |m_new - m_old| / sum |m_old|, infinite without a previous vector"""
    if previous is None:
        return float("inf")
    previous = np.asarray(previous, dtype=np.float64)
    current = np.asarray(current, dtype=np.float64)
    if previous.shape != current.shape:
        return float("inf")
    scale = np.sum(np.abs(previous))
    if scale == 0:
        return float("inf")
    return float(np.sum(np.abs(current - previous)) / scale)
