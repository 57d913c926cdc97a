"""
Minimum energy path by the simplified string method

Each iteration moves every node along the field, phi_k <- phi_k + tau_s f(phi_k),
and redistributes the nodes at equal arc length along the resulting
polyline. The string starts as the straight segment between the two minima.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from datagen.ground_truth import STATE_A, STATE_B
from tasks.base import DownstreamTask, FieldFn, SupportTrace, TaskOutput
from utils.errors import ConvergenceFailure, DivergedRollout, InputError


@dataclass(frozen=True)
class MepConfig:
    start: Tuple[float, ...] = tuple(STATE_A)
    end: Tuple[float, ...] = tuple(STATE_B)
    nodes: int = 41
    step: float = 1e-2
    max_iterations: int = 100000
    tolerance: float = 1e-8
    pin_endpoints: bool = True

    def __post_init__(self):
        if self.nodes < 3:
            raise InputError(f"The string needs at least 3 nodes, got {self.nodes}")
        if not self.tolerance > 0 or not self.step > 0:
            raise InputError("tolerance and step must be positive")
        if len(self.start) != len(self.end):
            raise InputError("Endpoints must have the same dimension")


def mean_node_distance(a: np.ndarray, b: np.ndarray) -> float:
    """(1/(K+1)) sum_k |phi_k - phi*_k|"""
    return float(np.mean(np.linalg.norm(np.asarray(a) - np.asarray(b), axis=1)))


def initial_string(cfg: MepConfig) -> np.ndarray:
    weights = np.linspace(0.0, 1.0, cfg.nodes)[:, None]
    return (1.0 - weights) * np.asarray(cfg.start) + weights * np.asarray(cfg.end)


def arc_lengths(nodes: np.ndarray) -> np.ndarray:
    """Cumulative arc length along the polyline, starting at 0"""
    segments = np.linalg.norm(np.diff(nodes, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(segments)])


def reparameterize(nodes: np.ndarray) -> np.ndarray:
    """Redistribute nodes at equal arc length by piecewise-linear interpolation"""
    s = arc_lengths(nodes)
    if s[-1] == 0:
        return nodes.copy()
    s = s / s[-1]
    targets = np.linspace(0.0, 1.0, len(nodes))
    out = np.column_stack([np.interp(targets, s, nodes[:, i]) for i in range(nodes.shape[1])])
    out[0], out[-1] = nodes[0], nodes[-1]
    return out


def string_method_run(
    f: FieldFn, cfg: MepConfig, initial: Optional[np.ndarray] = None
) -> Tuple[SupportTrace, TaskOutput]:
    """
    Evolve and reparameterize the string until the nodes stop moving

    Args:
        f: Negative energy gradient on (n, d) batches
        cfg (MepConfig): Endpoints, node count, step and stopping rule
        initial: Optional starting string (warm start) with cfg.nodes rows

    Returns:
        tuple: The converged nodes as both support and output

    Raises:
        ConvergenceFailure: If the displacement is still above the tolerance
            after cfg.max_iterations
    """
    nodes = initial_string(cfg) if initial is None else np.array(initial, dtype=np.float64)
    if nodes.shape != (cfg.nodes, len(cfg.start)):
        raise InputError(f"Initial string must have shape {(cfg.nodes, len(cfg.start))}")
    start, end = np.asarray(cfg.start), np.asarray(cfg.end)

    displacement = np.inf
    with np.errstate(over="ignore", invalid="ignore"):
        for iteration in range(1, cfg.max_iterations + 1):
            moved = nodes + cfg.step * np.asarray(f(nodes), dtype=np.float64)
            if not np.all(np.isfinite(moved)):
                raise DivergedRollout(iteration)
            if cfg.pin_endpoints:
                moved[0], moved[-1] = start, end
            moved = reparameterize(moved)
            displacement = float(np.max(np.linalg.norm(moved - nodes, axis=1)))
            nodes = moved
            if displacement < cfg.tolerance:
                break
        else:
            raise ConvergenceFailure(displacement, cfg.max_iterations)

    support = SupportTrace(nodes)
    output = TaskOutput(nodes, mean_node_distance, {"iterations": iteration, "displacement": displacement})
    return support, output


def transition_state_estimate(nodes: np.ndarray, energy_fn: Callable[[np.ndarray], np.ndarray]) -> Tuple[np.ndarray, float]:
    """
    Maximum of the parabola through the highest interior node and its neighbors

    The parabola is fitted to the node energies as a function of arc length;
    the returned point is interpolated along the string.

    Returns:
        tuple: (estimated transition state, estimated energy)
    """
    nodes = np.asarray(nodes, dtype=np.float64)
    energies = np.asarray(energy_fn(nodes), dtype=np.float64).reshape(-1)
    s = arc_lengths(nodes)
    k = int(np.argmax(energies[1:-1])) + 1
    coeffs = np.polyfit(s[k - 1:k + 2], energies[k - 1:k + 2], 2)
    if coeffs[0] >= 0:
        return nodes[k].copy(), float(energies[k])
    s_peak = float(np.clip(-coeffs[1] / (2.0 * coeffs[0]), s[k - 1], s[k + 1]))
    point = np.array([np.interp(s_peak, s, nodes[:, i]) for i in range(nodes.shape[1])])
    return point, float(np.polyval(coeffs, s_peak))


class MepTask(DownstreamTask):
    """
    String method between two minima

    With `warm_start` the previous converged string seeds the next run, which
    makes repeated runs with slowly changing fields much cheaper.
    """

    name = "mep"

    def __init__(self, cfg: MepConfig, warm_start: bool = False):
        super().__init__()
        self.cfg = cfg
        self.warm_start = warm_start
        self._last_string: Optional[np.ndarray] = None

    @property
    def input_dim(self) -> int:
        return len(self.cfg.start)

    def run(self, f: FieldFn) -> Tuple[SupportTrace, TaskOutput]:
        initial = self._last_string if self.warm_start else None
        support, output = string_method_run(f, self.cfg, initial)
        self.logger.debug(f"String converged after {output.details['iterations']} iterations")
        if self.warm_start:
            self._last_string = output.value.copy()
        return support, output

    def reset(self):
        self._last_string = None
