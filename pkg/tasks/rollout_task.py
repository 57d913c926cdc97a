"""
Multistep prediction by repeated application of a model

In flow-map mode the model is the one-step map itself; in Euler mode the
model is a vector field and each step is x <- x + tau * f(x).
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from tasks.base import DownstreamTask, FieldFn, SupportTrace, TaskOutput
from utils.errors import DivergedRollout, InputError


def mean_l2(a: np.ndarray, b: np.ndarray) -> float:
    """Average Euclidean discrepancy along two trajectories"""
    return float(np.mean(np.linalg.norm(np.asarray(a) - np.asarray(b), axis=1)))


def l2(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean norm of the stacked trajectory difference"""
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


METRICS = {"mean_l2": mean_l2, "l2": l2}


@dataclass(frozen=True)
class RolloutConfig:
    x0: Tuple[float, ...]
    steps: int
    euler_step: Optional[float] = None
    metric: str = "mean_l2"

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))
        if self.steps < 1:
            raise InputError(f"Rollout needs at least one step, got {self.steps}")
        if self.euler_step is not None and not self.euler_step > 0:
            raise InputError("euler_step must be positive")
        if self.metric not in METRICS:
            raise InputError(f"Unknown rollout metric {self.metric!r}")


def rollout_run(f: FieldFn, cfg: RolloutConfig) -> Tuple[SupportTrace, TaskOutput]:
    """
    Roll a model forward from x0

    Args:
        f: Model callback on (n, d) batches
        cfg (RolloutConfig): Start point, number of steps, Euler step

    Returns:
        tuple: Support [x0, ..., x_{N-1}] and output [x_1, ..., x_N]

    Raises:
        DivergedRollout: If a state becomes non-finite
    """
    state = np.asarray(cfg.x0, dtype=np.float64)
    trajectory = np.empty((cfg.steps + 1, len(state)))
    trajectory[0] = state
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(cfg.steps):
            value = np.asarray(f(state[None, :]), dtype=np.float64).reshape(-1)
            if cfg.euler_step is None:
                state = value
            else:
                state = state + cfg.euler_step * value
            if state.shape != trajectory[0].shape:
                raise InputError(f"Model returned shape {state.shape}, expected {trajectory[0].shape}")
            if not np.all(np.isfinite(state)):
                raise DivergedRollout(j + 1)
            trajectory[j + 1] = state
    support = SupportTrace(trajectory[:-1])
    output = TaskOutput(trajectory[1:], METRICS[cfg.metric])
    return support, output


class RolloutTask(DownstreamTask):
    """Multistep trajectory prediction from a fixed initial condition"""

    name = "rollout"

    def __init__(self, cfg: RolloutConfig):
        super().__init__()
        self.cfg = cfg

    @property
    def input_dim(self) -> int:
        return len(self.cfg.x0)

    def run(self, f: FieldFn) -> Tuple[SupportTrace, TaskOutput]:
        return rollout_run(f, self.cfg)
