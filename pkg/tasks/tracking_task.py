"""
Tracking control of the pendulum on a cart

The surrogate supplies the angular acceleration f(x1, x2, u). The state
(x1, x2, x3, x4) = (angle, angular velocity, cart position, cart velocity)
follows (x2, f(x1, x2, u), x4, u) under explicit Euler with the refined step
tau_hat = tau / N_tau, and u is constant on each of the N_T control
intervals. The control is chosen to track x_r(t) = (pi + 1 - t, t - 1, 0, 0).
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from datagen.ground_truth import pendulum_field
from tasks.base import DownstreamTask, FieldFn, SupportTrace, TaskOutput
from utils.errors import DivergedRollout, InputError, NumericalOverflow
from utils.rng import STREAM_TRACKING_RESTARTS, make_rng


@dataclass(frozen=True)
class TrackingConfig:
    horizon: float = 1.0
    intervals: int = 20
    substeps: int = 10
    control_lower: float = -10.0
    control_upper: float = 10.0
    iterations: int = 100
    step_size: float = 1.0
    restarts: int = 3
    fd_step: float = 1e-4

    def __post_init__(self):
        if not self.control_lower < self.control_upper:
            raise InputError("Control bounds must satisfy lower < upper")
        if self.intervals < 1 or self.substeps < 1:
            raise InputError("intervals and substeps must be positive")
        if not self.horizon > 0:
            raise InputError("horizon must be positive")
        if self.restarts < 1 or self.iterations < 0:
            raise InputError("Need at least one start and nonnegative iterations")

    @property
    def tau(self) -> float:
        return self.horizon / self.intervals

    @property
    def tau_hat(self) -> float:
        return self.tau / self.substeps

    @property
    def total_steps(self) -> int:
        return self.intervals * self.substeps


def reference_state(t) -> np.ndarray:
    """x_r(t) = (pi + 1 - t, t - 1, 0, 0)"""
    t = np.asarray(t, dtype=np.float64)
    return np.stack([np.pi + 1.0 - t, t - 1.0, np.zeros_like(t), np.zeros_like(t)], axis=-1)


def _simulate(f: FieldFn, controls: np.ndarray, cfg: TrackingConfig, strict: bool) -> np.ndarray:
    """Euler states of a (B, N_T) batch of controls, shaped (B, N_T * N_tau + 1, 4)"""
    batch = controls.shape[0]
    states = np.empty((batch, cfg.total_steps + 1, 4))
    states[:, 0] = reference_state(0.0)
    h = cfg.tau_hat
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(cfg.total_steps):
            x = states[:, k]
            u = controls[:, k // cfg.substeps]
            acceleration = np.asarray(f(np.column_stack([x[:, 0], x[:, 1], u])), dtype=np.float64).reshape(batch)
            states[:, k + 1] = x + h * np.column_stack([x[:, 1], acceleration, x[:, 3], u])
            if strict and not np.all(np.isfinite(states[:, k + 1])):
                raise DivergedRollout(k + 1)
    return states


def tracking_simulate(f: FieldFn, u, cfg: TrackingConfig) -> np.ndarray:
    """
    Integrate the controlled system from x_r(0)

    Args:
        f: Acceleration model on (n, 3) rows (x1, x2, u)
        u: N_T controls, or a (B, N_T) batch of control vectors
        cfg (TrackingConfig): Horizon, intervals, substeps and bounds

    Returns:
        np.ndarray: States at every substep, (N_T N_tau + 1, 4) or batched

    Raises:
        DivergedRollout: If a state becomes non-finite
    """
    controls = np.asarray(u, dtype=np.float64)
    single = controls.ndim == 1
    controls = np.atleast_2d(controls)
    if controls.shape[1] != cfg.intervals:
        raise InputError(f"Expected {cfg.intervals} controls, got {controls.shape[1]}")
    if np.any(controls < cfg.control_lower) or np.any(controls > cfg.control_upper):
        raise InputError("Controls must lie within the control bounds")
    states = _simulate(f, controls, cfg, strict=True)
    return states[0] if single else states


def _costs_from_states(states: np.ndarray, cfg: TrackingConfig) -> np.ndarray:
    times = cfg.tau * np.arange(1, cfg.intervals + 1)
    at_intervals = states[:, cfg.substeps::cfg.substeps]
    diff = at_intervals - reference_state(times)[None, :, :]
    return cfg.tau * np.sum(diff * diff, axis=(1, 2))


def tracking_cost(f: FieldFn, u, cfg: TrackingConfig) -> np.ndarray:
    """
    Discretized tracking cost sum_j tau |x(j tau) - x_r(j tau)|^2

    Non-finite trajectories cost infinity.
    """
    controls = np.asarray(u, dtype=np.float64)
    single = controls.ndim == 1
    states = _simulate(f, np.atleast_2d(controls), cfg, strict=False)
    with np.errstate(over="ignore", invalid="ignore"):
        costs = _costs_from_states(states, cfg)
    costs = np.where(np.isfinite(costs), costs, np.inf)
    return float(costs[0]) if single else costs


def _fd_gradient(f: FieldFn, u: np.ndarray, cfg: TrackingConfig) -> np.ndarray:
    h = cfg.fd_step
    shifts = h * np.eye(cfg.intervals)
    costs = tracking_cost(f, np.vstack([u + shifts, u - shifts]), cfg)
    grad = (costs[:cfg.intervals] - costs[cfg.intervals:]) / (2.0 * h)
    if not np.all(np.isfinite(grad)):
        raise NumericalOverflow("tracking_cost", "finite-difference gradient")
    return grad


def projected_gradient_descent(f: FieldFn, u0: np.ndarray, cfg: TrackingConfig) -> Tuple[np.ndarray, List[float]]:
    """
    Box-constrained descent accepting only cost-decreasing steps

    A rejected step halves the step size; an accepted one lets it grow back
    toward cfg.step_size.

    Returns:
        tuple: (controls, costs of the accepted iterates)
    """
    u = np.clip(np.asarray(u0, dtype=np.float64), cfg.control_lower, cfg.control_upper)
    cost = tracking_cost(f, u, cfg)
    if not np.isfinite(cost):
        raise NumericalOverflow("tracking_cost", "initial control")
    history = [cost]
    step = cfg.step_size

    for _ in range(cfg.iterations):
        grad = _fd_gradient(f, u, cfg)
        accepted = False
        while step > 1e-12:
            candidate = np.clip(u - step * grad, cfg.control_lower, cfg.control_upper)
            if np.array_equal(candidate, u):
                break
            candidate_cost = tracking_cost(f, candidate, cfg)
            if candidate_cost < cost:
                u, cost = candidate, candidate_cost
                history.append(cost)
                step = min(2.0 * step, cfg.step_size)
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    return u, history


def tracking_support(f: FieldFn, u: np.ndarray, cfg: TrackingConfig) -> SupportTrace:
    """The J = N_T N_tau evaluation triples (x1, x2, u) along the trajectory"""
    states = tracking_simulate(f, u, cfg)
    controls = np.repeat(np.asarray(u, dtype=np.float64), cfg.substeps)
    return SupportTrace(np.column_stack([states[:-1, 0], states[:-1, 1], controls]))


def tracking_optimize(f: FieldFn, cfg: TrackingConfig, seed: int) -> Tuple[np.ndarray, SupportTrace, float]:
    """
    Optimal control for the model f by multi-start projected gradient

    Starts from u = 0 and from cfg.restarts - 1 seeded random controls; the
    best final cost wins, the earliest start on ties.

    Args:
        f: Acceleration model
        cfg (TrackingConfig): Problem and optimizer settings
        seed (int): Seed of the random starts

    Returns:
        tuple: (controls, support of f along them, predicted cost)
    """
    rng = make_rng(seed, STREAM_TRACKING_RESTARTS)
    spread = 0.25 * (cfg.control_upper - cfg.control_lower)
    starts = [np.zeros(cfg.intervals)]
    starts += [rng.uniform(-spread, spread, cfg.intervals) for _ in range(cfg.restarts - 1)]

    best_u, best_cost = None, np.inf
    for start in starts:
        u, history = projected_gradient_descent(f, start, cfg)
        if history[-1] < best_cost:
            best_u, best_cost = u, history[-1]
    return best_u, tracking_support(f, best_u, cfg), float(best_cost)


def tracking_output_error(u_surrogate, u_true, cfg: TrackingConfig, f_star: FieldFn = pendulum_field) -> float:
    """
    Tracking cost gap C(u_theta; f*) - C(u*; f*) of the surrogate's control

    Args:
        u_surrogate: Controls optimized with the surrogate
        u_true: Controls optimized with f* itself
        cfg (TrackingConfig): Problem settings
        f_star: True acceleration (the pendulum ground truth by default)

    Returns:
        float: The gap, nonnegative up to the suboptimality of u_true
    """
    return float(tracking_cost(f_star, u_surrogate, cfg) - tracking_cost(f_star, u_true, cfg))


class TrackingTask(DownstreamTask):
    """Tracking optimal control; the output is the optimized control vector"""

    name = "tracking"

    def __init__(self, cfg: TrackingConfig, f_star: FieldFn, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.f_star = f_star
        self.seed = seed

    @property
    def input_dim(self) -> int:
        return 3

    def metric(self, u_a: np.ndarray, u_b: np.ndarray) -> float:
        """Signed difference of the true tracking costs of two controls"""
        gap = tracking_output_error(u_a, u_b, self.cfg, self.f_star)
        if gap < 0:
            self.logger.warning(f"Negative tracking cost gap {gap:.4e}: the reference control is not optimal")
        return gap

    def run(self, f: FieldFn) -> Tuple[SupportTrace, TaskOutput]:
        u, support, cost = tracking_optimize(f, self.cfg, self.seed)
        self.logger.debug(f"Tracking optimum: predicted cost {cost:.6e}")
        return support, TaskOutput(u, self.metric, {"predicted_cost": cost})

    def output_error(self, f: FieldFn, f_star: Optional[FieldFn] = None) -> float:
        f_star = f_star or self.f_star
        u_surrogate, _, _ = tracking_optimize(f, self.cfg, self.seed)
        u_true, _, _ = tracking_optimize(f_star, self.cfg, self.seed)
        return tracking_output_error(u_surrogate, u_true, self.cfg, f_star)
