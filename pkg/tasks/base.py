"""
Downstream tasks: black-box algorithms that consume a model through
pointwise evaluations

A task returns the ordered points where it evaluated the model (its support)
and its output, together with the metric that compares two outputs.
"""

import csv
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Tuple

import numpy as np

from utils.errors import InputError

logger = logging.getLogger(__name__)

# A model evaluation callback: (n, d_in) points -> (n, d_out) values
FieldFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class SupportTrace:
    """Ordered support points x~_1 ... x~_J of one task run"""

    points: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        if points.ndim != 2 or len(points) == 0:
            raise InputError("A support trace needs at least one point")
        if not np.all(np.isfinite(points)):
            raise InputError("Support points must be finite")
        points.flags.writeable = False
        object.__setattr__(self, "points", points)

    @property
    def J(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.J


@dataclass(frozen=True, eq=False)
class TaskOutput:
    """
    Output A(f) of a task

    Args:
        value: Task payload (trajectory, control vector, node path)
        metric: Distance between two payloads of this task
        details: Extra task-specific results such as a realized cost
    """

    value: np.ndarray
    metric: Callable[[np.ndarray, np.ndarray], float]
    details: Dict[str, Any] = field(default_factory=dict)

    def distance(self, reference: "TaskOutput") -> float:
        return float(self.metric(self.value, reference.value))


class DownstreamTask(ABC):
    """Base class for all downstream tasks"""

    name = "task"

    def __init__(self):
        self.logger = logging.getLogger(self.__class__.__module__)

    @property
    @abstractmethod
    def input_dim(self) -> int:
        """Dimension of the model's input space"""

    @abstractmethod
    def run(self, f: FieldFn) -> Tuple[SupportTrace, TaskOutput]:
        """Run the algorithm with model callback f"""

    def output_error(self, f: FieldFn, f_star: FieldFn) -> float:
        """J_A: distance between the outputs obtained with f and with f*"""
        _, output = self.run(f)
        _, reference = self.run(f_star)
        return output.distance(reference)


def export_support_csv(trace: SupportTrace, path) -> Path:
    """Write a support trace as `j,x0,x1,...` rows"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["j"] + [f"x{i}" for i in range(trace.dim)])
        for j, point in enumerate(trace.points):
            writer.writerow([j] + [repr(float(v)) for v in point])
    return path
