"""
Training datasets and the TSSD file format

TSSD v1 layout:
    magic        b"TSSD\\x01"
    header line  "N d_x d_y seed spec_digest\\n"
    provenance   "provenance <json>\\n", optional
    rows         N * (d_x + d_y) little-endian f64, x then y per row
    optional     "density <variance> <radius_factor> <amplitude>\\n" + N f64
"""

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from datagen.ground_truth import lorenz_flow_map, negative_energy_gradient, pendulum_field, example2_field
from datagen.sampling import SamplingSpec, sample
from learning.kernels import KernelSpec, estimate_density
from utils.errors import FormatError, InputError

logger = logging.getLogger(__name__)

MAGIC = b"TSSD\x01"
_F64 = np.dtype("<f8")
PROVENANCE_TAG = b"provenance "


class Labeler(str, Enum):
    LORENZ_FLOW_MAP = "lorenz_flow_map"
    PENDULUM_ACCEL = "pendulum_accel"
    NEG_ENERGY_GRAD = "neg_energy_grad"
    EXAMPLE2 = "example2"

    def label(self, inputs: np.ndarray, **options) -> np.ndarray:
        if self == Labeler.LORENZ_FLOW_MAP:
            return lorenz_flow_map(inputs, options.get("tau", 0.01), options.get("substeps", 10))
        if self == Labeler.PENDULUM_ACCEL:
            return pendulum_field(inputs)
        if self == Labeler.NEG_ENERGY_GRAD:
            return negative_energy_gradient(inputs)
        return example2_field(inputs, options.get("field_alpha", 1.0))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable training pairs (x_i, y_i) with optional sampling densities"""

    inputs: np.ndarray
    labels: np.ndarray
    densities: Optional[np.ndarray] = None
    density_spec: Optional[KernelSpec] = None
    seed: int = 0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        inputs = np.array(self.inputs, dtype=np.float64, ndmin=2)
        labels = np.array(self.labels, dtype=np.float64, ndmin=2)
        if inputs.shape[0] != labels.shape[0]:
            raise InputError(f"{inputs.shape[0]} inputs but {labels.shape[0]} labels")
        if inputs.shape[0] == 0:
            raise InputError("A dataset needs at least one sample")
        inputs.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)
        if self.densities is not None:
            densities = np.array(self.densities, dtype=np.float64).reshape(-1)
            if densities.shape[0] != inputs.shape[0]:
                raise InputError("Density vector length does not match the dataset")
            if np.any(densities <= 0):
                raise InputError("Sampling densities must be positive")
            densities.flags.writeable = False
            object.__setattr__(self, "densities", densities)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.labels.shape[1]

    @property
    def digest(self) -> str:
        return self.provenance.get("digest", "-")

    def with_densities(self, spec: KernelSpec, accelerated: bool = True) -> "Dataset":
        """Return a copy with rho_N evaluated at every training input"""
        if self.densities is not None and self.density_spec == spec:
            return self
        estimate = estimate_density(self.inputs, self.inputs, spec, accelerated=accelerated)
        return replace(self, densities=estimate.values, density_spec=spec)

    def require_densities(self) -> np.ndarray:
        if self.densities is None:
            raise InputError("Dataset densities have not been computed")
        return self.densities


def build_dataset(spec: SamplingSpec, n: int, labeler: Labeler, seed: int, **label_options) -> Dataset:
    """
    Sample inputs and label them with a ground truth

    Args:
        spec (SamplingSpec): Sampling measure of the inputs
        n (int): Number of samples
        labeler (Labeler): Ground truth used for the labels
        seed (int): Sampling seed
        **label_options: Labeler options (flow time, substeps, field_alpha)

    Returns:
        Dataset: The labelled dataset, without densities
    """
    labeler = Labeler(labeler)
    inputs = sample(spec, n, seed)
    labels = labeler.label(inputs, **label_options)
    provenance = {
        "sampling": spec.describe(),
        "labeler": labeler.value,
        "options": label_options,
        "digest": spec.digest(),
    }
    logger.info(f"Built dataset: {n} samples, labeler {labeler.value}, seed {seed}")
    return Dataset(inputs=inputs, labels=labels, seed=seed, provenance=provenance)


def write_dataset(dataset: Dataset, path) -> Path:
    """Write a dataset to a TSSD file"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"{dataset.n} {dataset.input_dim} {dataset.output_dim} {dataset.seed} {dataset.digest}\n"
    provenance = PROVENANCE_TAG + json.dumps(dataset.provenance, sort_keys=True).encode("utf-8") + b"\n"
    rows = np.hstack([dataset.inputs, dataset.labels]).astype(_F64)

    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(header.encode("ascii"))
        handle.write(provenance)
        handle.write(rows.tobytes(order="C"))
        if dataset.densities is not None:
            spec = dataset.density_spec
            handle.write(
                f"density {spec.variance!r} {spec.truncation_radius_factor!r} {spec.amplitude!r}\n".encode("ascii")
            )
            handle.write(dataset.densities.astype(_F64).tobytes())
    logger.info(f"Wrote dataset with {dataset.n} samples to {path}")
    return path


def read_dataset(path, expected_input_dim: Optional[int] = None) -> Dataset:
    """
    Read a TSSD file

    Raises:
        FormatError: On a bad magic, malformed header, truncated payload or a
            dimension different from `expected_input_dim`
    """
    path = Path(path)
    data = path.read_bytes()
    return parse_dataset(data, expected_input_dim, source=str(path))


def parse_dataset(data: bytes, expected_input_dim: Optional[int] = None, source: str = "<bytes>") -> Dataset:
    if not data.startswith(MAGIC):
        raise FormatError(f"{source}: not a TSSD v1 file")
    offset = len(MAGIC)

    header, offset = _read_line(data, offset, source)
    parts = header.split()
    if len(parts) != 5:
        raise FormatError(f"{source}: malformed header {header!r}")
    try:
        n, d_x, d_y, seed = (int(v) for v in parts[:4])
    except ValueError as e:
        raise FormatError(f"{source}: malformed header {header!r}") from e
    if n < 1 or d_x < 1 or d_y < 1:
        raise FormatError(f"{source}: invalid sizes in header {header!r}")
    if expected_input_dim is not None and d_x != expected_input_dim:
        raise FormatError(f"{source}: input dimension {d_x}, expected {expected_input_dim}")

    provenance = {}
    if data.startswith(PROVENANCE_TAG, offset):
        line, offset = _read_line(data, offset, source)
        try:
            provenance = json.loads(line[len(PROVENANCE_TAG):])
        except json.JSONDecodeError as e:
            raise FormatError(f"{source}: provenance is not valid JSON") from e

    payload = n * (d_x + d_y) * _F64.itemsize
    if len(data) < offset + payload:
        raise FormatError(f"{source}: truncated payload")
    rows = np.frombuffer(data, dtype=_F64, count=n * (d_x + d_y), offset=offset).reshape(n, d_x + d_y)
    offset += payload

    densities, density_spec = None, None
    if offset < len(data):
        line, offset = _read_line(data, offset, source)
        fields = line.split()
        if len(fields) != 4 or fields[0] != "density":
            raise FormatError(f"{source}: malformed density block header {line!r}")
        try:
            density_spec = KernelSpec(float(fields[1]), float(fields[2]), float(fields[3]))
        except (ValueError, InputError) as e:
            raise FormatError(f"{source}: malformed density block header {line!r}") from e
        if len(data) != offset + n * _F64.itemsize:
            raise FormatError(f"{source}: density block length mismatch")
        densities = np.frombuffer(data, dtype=_F64, count=n, offset=offset)

    return Dataset(
        inputs=rows[:, :d_x],
        labels=rows[:, d_x:],
        densities=densities,
        density_spec=density_spec,
        seed=seed,
        provenance=provenance,
    )


def export_csv(dataset: Dataset, path) -> Path:
    """Write `x0..x{dx-1},y0..y{dy-1}` rows for inspection"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [f"x{i}" for i in range(dataset.input_dim)] + [f"y{i}" for i in range(dataset.output_dim)]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for x, y in zip(dataset.inputs, dataset.labels):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])
    return path


def _read_line(data: bytes, offset: int, source: str):
    end = data.find(b"\n", offset)
    if end < 0:
        raise FormatError(f"{source}: unterminated header line")
    try:
        return data[offset:end].decode("utf-8"), end + 1
    except UnicodeDecodeError as e:
        raise FormatError(f"{source}: header is not valid text") from e
