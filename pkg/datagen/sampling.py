import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from datagen.ground_truth import STATE_A, energy_and_gradient
from utils.errors import InputError
from utils.rng import STREAM_LANGEVIN, STREAM_SAMPLING, make_rng

logger = logging.getLogger(__name__)


class SamplerKind(str, Enum):
    UNIFORM = "uniform"
    MIXTURE = "mixture"
    KERNEL_PERTURBED_SUPPORT = "kernel_perturbed_support"
    LANGEVIN = "langevin"


@dataclass(frozen=True)
class SamplingSpec:
    """
    Description of a sampling measure

    Uniform boxes, Gaussian perturbations of reference points, overdamped
    Langevin samples of the double-well Boltzmann distribution, and two-part
    mixtures (1 - alpha) * base + alpha * perturbed of any of these.
    """

    kind: SamplerKind
    lower: Tuple[float, ...] = ()
    upper: Tuple[float, ...] = ()
    clip_lower: Tuple[float, ...] = ()
    clip_upper: Tuple[float, ...] = ()
    alpha: float = 0.0
    base: Optional["SamplingSpec"] = None
    perturbed: Optional["SamplingSpec"] = None
    reference_points: Tuple[Tuple[float, ...], ...] = ()
    perturbation_variance: float = 1.0
    beta_inv: float = 1.0
    dt: float = 1e-3
    burn_in: int = 10000
    thinning: int = 10
    chains: int = 64
    start: Tuple[float, ...] = field(default_factory=lambda: tuple(STATE_A))

    def __post_init__(self):
        kind = SamplerKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not 0.0 <= self.alpha <= 1.0:
            raise InputError(f"Mixture weight alpha must lie in [0, 1], got {self.alpha}")
        if len(self.clip_lower) != len(self.clip_upper):
            raise InputError("clip_lower and clip_upper must have the same length")
        if kind == SamplerKind.UNIFORM:
            if not self.lower or len(self.lower) != len(self.upper):
                raise InputError("Uniform sampling needs lower and upper bounds of equal length")
            if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
                raise InputError("Uniform bounds must satisfy lower < upper per coordinate")
        elif kind == SamplerKind.MIXTURE:
            if self.base is None or self.perturbed is None:
                raise InputError("Mixture sampling needs both a base and a perturbed component")
            if self.base.dim != self.perturbed.dim:
                raise InputError("Mixture components must have the same dimension")
        elif kind == SamplerKind.KERNEL_PERTURBED_SUPPORT:
            if not self.reference_points:
                raise InputError("Perturbed-support sampling needs reference points")
            if self.perturbation_variance <= 0:
                raise InputError("perturbation_variance must be positive")
        elif kind == SamplerKind.LANGEVIN:
            if self.beta_inv <= 0 or self.dt <= 0:
                raise InputError("Langevin sampling needs positive beta_inv and dt")
            if self.burn_in < 0 or self.thinning < 1 or self.chains < 1:
                raise InputError("Langevin sampling needs burn_in >= 0, thinning >= 1, chains >= 1")

    @property
    def dim(self) -> int:
        if self.kind == SamplerKind.UNIFORM:
            return len(self.lower)
        if self.kind == SamplerKind.MIXTURE:
            return self.base.dim
        if self.kind == SamplerKind.KERNEL_PERTURBED_SUPPORT:
            return len(self.reference_points[0])
        return len(self.start)

    def describe(self) -> dict:
        """JSON-compatible description, used as dataset provenance"""
        info = {"kind": self.kind.value}
        if self.kind == SamplerKind.UNIFORM:
            info.update(lower=list(self.lower), upper=list(self.upper))
        elif self.kind == SamplerKind.MIXTURE:
            info.update(alpha=self.alpha, base=self.base.describe(), perturbed=self.perturbed.describe())
        elif self.kind == SamplerKind.KERNEL_PERTURBED_SUPPORT:
            info.update(
                variance=self.perturbation_variance,
                reference_count=len(self.reference_points),
                reference_digest=hashlib.sha256(
                    np.asarray(self.reference_points, dtype="<f8").tobytes()
                ).hexdigest()[:16],
            )
        else:
            info.update(
                beta_inv=self.beta_inv, dt=self.dt, burn_in=self.burn_in,
                thinning=self.thinning, chains=self.chains, start=list(self.start),
            )
        if self.clip_lower:
            info.update(clip_lower=[_json_float(v) for v in self.clip_lower],
                        clip_upper=[_json_float(v) for v in self.clip_upper])
        return info

    def digest(self) -> str:
        text = json.dumps(self.describe(), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def sample(spec: SamplingSpec, n: int, seed: int) -> np.ndarray:
    """
    Draw n input points from a sampling measure

    Args:
        spec (SamplingSpec): The sampling measure
        n (int): Number of samples
        seed (int): Seed; identical (spec, n, seed) give identical samples

    Returns:
        np.ndarray: (n, dim) array of samples
    """
    if n < 1:
        raise InputError(f"Number of samples must be positive, got {n}")
    return _draw(spec, n, seed, ())


def _draw(spec: SamplingSpec, n: int, seed: int, path: Tuple[int, ...]) -> np.ndarray:
    if spec.kind == SamplerKind.MIXTURE:
        selector = make_rng(seed, STREAM_SAMPLING, *path, 0)
        from_perturbed = selector.random(n) < spec.alpha
        n_perturbed = int(np.count_nonzero(from_perturbed))
        out = np.empty((n, spec.dim))
        if n_perturbed < n:
            out[~from_perturbed] = _draw(spec.base, n - n_perturbed, seed, path + (1,))
        if n_perturbed > 0:
            out[from_perturbed] = _draw(spec.perturbed, n_perturbed, seed, path + (2,))
        return out

    rng = make_rng(seed, STREAM_SAMPLING, *path)
    if spec.kind == SamplerKind.UNIFORM:
        points = rng.uniform(np.asarray(spec.lower), np.asarray(spec.upper), size=(n, spec.dim))
    elif spec.kind == SamplerKind.KERNEL_PERTURBED_SUPPORT:
        reference = np.asarray(spec.reference_points, dtype=np.float64)
        picks = rng.integers(0, len(reference), size=n)
        noise = rng.normal(0.0, np.sqrt(spec.perturbation_variance), size=(n, spec.dim))
        points = reference[picks] + noise
    else:
        points = langevin_samples(spec, n, seed, path)

    if spec.clip_lower:
        points = np.clip(points, np.asarray(spec.clip_lower), np.asarray(spec.clip_upper))
    return points


def langevin_samples(spec: SamplingSpec, n: int, seed: int, path: Tuple[int, ...] = ()) -> np.ndarray:
    """
    Euler-Maruyama samples of dx = -grad E dt + sqrt(2 / beta) dW

    Independent chains start at `spec.start`, run `burn_in` steps, then emit
    one sample every `thinning` steps.
    """
    rng = make_rng(seed, STREAM_LANGEVIN, *path)
    chains = spec.chains
    per_chain = -(-n // chains)
    noise_scale = np.sqrt(2.0 * spec.beta_inv * spec.dt)
    state = np.tile(np.asarray(spec.start, dtype=np.float64), (chains, 1))

    def advance(x):
        _, grad = energy_and_gradient(x)
        return x - spec.dt * grad + noise_scale * rng.standard_normal(x.shape)

    logger.info(f"Running {chains} Langevin chains: {spec.burn_in} burn-in steps, {per_chain} samples each")
    for _ in range(spec.burn_in):
        state = advance(state)

    collected = np.empty((per_chain, chains, state.shape[1]))
    for k in range(per_chain):
        for _ in range(spec.thinning):
            state = advance(state)
        collected[k] = state
    return collected.reshape(-1, state.shape[1])[:n]


def uniform_spec(lower: Sequence[float], upper: Sequence[float], clip_lower=(), clip_upper=()) -> SamplingSpec:
    return SamplingSpec(
        kind=SamplerKind.UNIFORM,
        lower=tuple(float(v) for v in lower),
        upper=tuple(float(v) for v in upper),
        clip_lower=tuple(float(v) for v in clip_lower),
        clip_upper=tuple(float(v) for v in clip_upper),
    )


def perturbed_support_spec(reference_points, variance: float) -> SamplingSpec:
    points = np.atleast_2d(np.asarray(reference_points, dtype=np.float64))
    return SamplingSpec(
        kind=SamplerKind.KERNEL_PERTURBED_SUPPORT,
        reference_points=tuple(tuple(float(v) for v in row) for row in points),
        perturbation_variance=float(variance),
    )


def mixture_spec(base: SamplingSpec, perturbed: SamplingSpec, alpha: float) -> SamplingSpec:
    return SamplingSpec(kind=SamplerKind.MIXTURE, base=base, perturbed=perturbed, alpha=float(alpha))


def _json_float(value: float):
    if np.isfinite(value):
        return value
    return "inf" if value > 0 else "-inf"
