"""
Hypothesis spaces with hand-written parameter gradients

    resnet      f(x) = x + tau * (W1 elu(W0 x + b0) + b1)          flow map
    fnn         f(x) = W1 elu(W0 x + b0) + b1                       scalar
    polynomial  f(x) = sum_k c_k x^a_k, graded-lex monomials       any output
    energy      f(x) = -grad_x E(x),
                E(x) = 1e-4 |x|^2 + (w0.x + b0)^2 + w2.elu(W1 x + b1) + b2

The resnet, fnn and polynomial kinds standardize inputs, and the resnet and
fnn kinds rescale their network output; the constants live next to theta in
ModelParams and in the model file.
"""

import itertools
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from math import comb
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from utils.errors import FormatError, InputError, NumericalOverflow
from utils.rng import STREAM_INIT, make_rng

logger = logging.getLogger(__name__)

MAGIC = b"TSSM\x01"
_F64 = np.dtype("<f8")
_SCALING_DIMS = {"input_shift": "input", "input_scale": "input", "output_shift": "output", "output_scale": "output"}

# Coercivity weight of the energy model
ENERGY_COERCIVITY = 1e-4


class ModelKind(str, Enum):
    RESNET = "resnet"
    FNN = "fnn"
    POLYNOMIAL = "polynomial"
    ENERGY = "energy"


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    input_dim: int
    output_dim: int
    width_or_degree: int
    step_scale: float = 1.0

    def __post_init__(self):
        kind = ModelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.input_dim < 1 or self.output_dim < 1:
            raise InputError("Model dimensions must be positive")
        if kind == ModelKind.POLYNOMIAL:
            if self.width_or_degree < 0:
                raise InputError("Polynomial degree must be nonnegative")
        elif self.width_or_degree < 1:
            raise InputError("Hidden width must be positive")
        if kind == ModelKind.RESNET and self.output_dim != self.input_dim:
            raise InputError("A ResNet flow map needs output_dim == input_dim")
        if kind == ModelKind.FNN and self.output_dim != 1:
            raise InputError("A scalar FNN needs output_dim == 1")
        if kind == ModelKind.ENERGY and (self.input_dim != 3 or self.output_dim != 3):
            raise InputError("The energy-gradient model is defined on R^3")

    @property
    def standardized(self) -> bool:
        return self.kind != ModelKind.ENERGY

    @property
    def parameter_count(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in parameter_shapes(self))


@dataclass(frozen=True, eq=False)
class Standardization:
    """Input shift/scale and output shift/scale applied around the parameterized map"""

    input_shift: np.ndarray
    input_scale: np.ndarray
    output_shift: np.ndarray
    output_scale: np.ndarray

    @classmethod
    def identity(cls, input_dim: int, output_dim: int) -> "Standardization":
        return cls(np.zeros(input_dim), np.ones(input_dim), np.zeros(output_dim), np.ones(output_dim))

    def __post_init__(self):
        for name in ("input_shift", "input_scale", "output_shift", "output_scale"):
            value = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            value.flags.writeable = False
            object.__setattr__(self, name, value)
        if np.any(self.input_scale <= 0) or np.any(self.output_scale <= 0):
            raise InputError("Standardization scales must be positive")

    def rows(self) -> List[Tuple[str, np.ndarray]]:
        return [
            ("input_shift", self.input_shift),
            ("input_scale", self.input_scale),
            ("output_shift", self.output_shift),
            ("output_scale", self.output_scale),
        ]


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Flat theta with its block table"""

    theta: np.ndarray
    layout: Tuple[Tuple[str, int, int], ...]
    scaling: Standardization

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        total = sum(length for _, _, length in self.layout)
        if len(theta) != total:
            raise InputError(f"theta has {len(theta)} entries, layout expects {total}")
        if not np.all(np.isfinite(theta)):
            raise InputError("theta contains non-finite values")
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)

    def with_theta(self, theta) -> "ModelParams":
        return replace(self, theta=theta)

    def block(self, name: str) -> np.ndarray:
        for block, offset, length in self.layout:
            if block == name:
                return self.theta[offset:offset + length]
        raise KeyError(name)


def parameter_shapes(spec: ModelSpec) -> List[Tuple[str, Tuple[int, ...]]]:
    """Named parameter blocks with their shapes, in theta order"""
    n, d = spec.input_dim, spec.width_or_degree
    if spec.kind in (ModelKind.RESNET, ModelKind.FNN):
        return [("w0", (d, n)), ("b0", (d,)), ("w1", (spec.output_dim, d)), ("b1", (spec.output_dim,))]
    if spec.kind == ModelKind.POLYNOMIAL:
        return [("c", (polynomial_feature_count(n, d), spec.output_dim))]
    return [("w0", (3,)), ("b0", (1,)), ("w1", (d, 3)), ("b1", (d,)), ("w2", (d,)), ("b2", (1,))]


def parameter_layout(spec: ModelSpec) -> Tuple[Tuple[str, int, int], ...]:
    layout, offset = [], 0
    for name, shape in parameter_shapes(spec):
        length = int(np.prod(shape))
        layout.append((name, offset, length))
        offset += length
    return tuple(layout)


def _unpack(spec: ModelSpec, theta: np.ndarray) -> Dict[str, np.ndarray]:
    blocks, offset = {}, 0
    for name, shape in parameter_shapes(spec):
        length = int(np.prod(shape))
        blocks[name] = theta[offset:offset + length].reshape(shape)
        offset += length
    return blocks


def _pack(spec: ModelSpec, grads: Dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([grads[name].reshape(-1) for name, _ in parameter_shapes(spec)])


def init_params(spec: ModelSpec, seed: int) -> ModelParams:
    """
    Glorot-uniform weights and zero biases

    Polynomial coefficients start at zero.
    """
    rng = make_rng(seed, STREAM_INIT)
    blocks = []
    for name, shape in parameter_shapes(spec):
        if spec.kind == ModelKind.POLYNOMIAL or name.startswith("b"):
            blocks.append(np.zeros(shape))
            continue
        if len(shape) == 2:
            fan_out, fan_in = shape
        else:
            fan_in, fan_out = shape[0], 1
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        blocks.append(rng.uniform(-limit, limit, size=shape))
    theta = np.concatenate([b.reshape(-1) for b in blocks])
    return ModelParams(theta, parameter_layout(spec), Standardization.identity(spec.input_dim, spec.output_dim))


def zero_params(spec: ModelSpec) -> ModelParams:
    return ModelParams(
        np.zeros(spec.parameter_count),
        parameter_layout(spec),
        Standardization.identity(spec.input_dim, spec.output_dim),
    )


# Activation

def elu(t: np.ndarray) -> np.ndarray:
    return np.where(t >= 0, t, np.expm1(np.minimum(t, 0.0)))


def elu_prime(t: np.ndarray) -> np.ndarray:
    return np.where(t >= 0, 1.0, np.exp(np.minimum(t, 0.0)))


def elu_second(t: np.ndarray) -> np.ndarray:
    # Undefined at 0; taken as 0
    return np.where(t < 0, np.exp(np.minimum(t, 0.0)), 0.0)


# Polynomial features

def polynomial_exponents(n_vars: int, degree: int) -> np.ndarray:
    """
    Exponent vectors of all monomials with total degree <= degree

    Graded-lexicographic: by total degree, then lexicographically descending
    in the exponents, so x1 precedes x2 within a degree.
    """
    rows = []
    for total in range(degree + 1):
        level = [e for e in itertools.product(range(total + 1), repeat=n_vars) if sum(e) == total]
        rows.extend(sorted(level, reverse=True))
    return np.array(rows, dtype=np.int64).reshape(-1, n_vars)


def polynomial_feature_count(n_vars: int, degree: int) -> int:
    return comb(n_vars + degree, degree)


def polynomial_features(x: np.ndarray, degree: int) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    exponents = polynomial_exponents(x.shape[1], degree)
    return np.prod(x[:, None, :] ** exponents[None, :, :], axis=2)


# Evaluation

def _as_batch(spec: ModelSpec, x) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise InputError(f"Expected points with {spec.input_dim} coordinates, got shape {np.shape(x)}")
    return x, single


def _standardize(params: ModelParams, x: np.ndarray) -> np.ndarray:
    return (x - params.scaling.input_shift) / params.scaling.input_scale


def _forward(spec: ModelSpec, params: ModelParams, x: np.ndarray):
    """Batch forward pass; returns outputs and the intermediates of the backward pass"""
    p = _unpack(spec, params.theta)
    scaling = params.scaling
    if spec.kind in (ModelKind.RESNET, ModelKind.FNN):
        xs = _standardize(params, x)
        z = xs @ p["w0"].T + p["b0"]
        h = elu(z)
        v = h @ p["w1"].T + p["b1"]
        out = scaling.output_shift + scaling.output_scale * v
        if spec.kind == ModelKind.RESNET:
            out = x + spec.step_scale * out
        return out, {"xs": xs, "z": z, "h": h}
    if spec.kind == ModelKind.POLYNOMIAL:
        phi = polynomial_features(_standardize(params, x), spec.width_or_degree)
        return scaling.output_shift + scaling.output_scale * (phi @ p["c"]), {"phi": phi}

    a = x @ p["w0"] + p["b0"][0]
    z = x @ p["w1"].T + p["b1"]
    q = p["w2"] * elu_prime(z)
    grad_energy = 2.0 * ENERGY_COERCIVITY * x + 2.0 * a[:, None] * p["w0"] + q @ p["w1"]
    return -grad_energy, {"a": a, "z": z, "q": q}


def evaluate(spec: ModelSpec, params: ModelParams, x) -> np.ndarray:
    """
    Evaluate f_theta at a point or a batch of points

    Args:
        spec (ModelSpec): Hypothesis space
        params (ModelParams): Parameters
        x: A point with input_dim coordinates or an (n, input_dim) batch

    Returns:
        np.ndarray: f_theta(x), shaped (output_dim,) or (n, output_dim)
    """
    batch, single = _as_batch(spec, x)
    out, _ = _forward(spec, params, batch)
    return out[0] if single else out


def energy_value(spec: ModelSpec, params: ModelParams, x):
    """E_theta at a point or batch, including the coercivity terms"""
    if spec.kind != ModelKind.ENERGY:
        raise InputError(f"energy_value needs an energy model, got {spec.kind.value}")
    batch, single = _as_batch(spec, x)
    p = _unpack(spec, params.theta)
    a = batch @ p["w0"] + p["b0"][0]
    hidden = elu(batch @ p["w1"].T + p["b1"])
    energy = ENERGY_COERCIVITY * np.sum(batch * batch, axis=1) + a * a + hidden @ p["w2"] + p["b2"][0]
    return float(energy[0]) if single else energy


def _check_finite(name: str, value: np.ndarray):
    if not np.all(np.isfinite(value)):
        raise NumericalOverflow(name)


def weighted_loss_gradient(spec: ModelSpec, params: ModelParams, inputs, labels, weights) -> Tuple[float, np.ndarray]:
    """
    Weighted squared loss (1/B) sum_i m_i |f(x_i) - y_i|^2 and its exact gradient

    Args:
        spec (ModelSpec): Hypothesis space
        params (ModelParams): Parameters
        inputs: (B, input_dim) batch
        labels: (B, output_dim) targets
        weights: (B,) coefficients m_i

    Returns:
        tuple: (loss, flat gradient matching theta)

    Raises:
        NumericalOverflow: If any intermediate or gradient block is non-finite
    """
    x, _ = _as_batch(spec, inputs)
    y = np.asarray(labels, dtype=np.float64).reshape(len(x), spec.output_dim)
    m = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(m) != len(x):
        raise InputError(f"Got {len(m)} weights for a batch of {len(x)}")

    out, cache = _forward(spec, params, x)
    _check_finite("output", out)
    residual = out - y
    batch = len(x)
    loss = float(np.sum(m * np.sum(residual * residual, axis=1)) / batch)
    g = (2.0 / batch) * m[:, None] * residual  # dL/df
    p = _unpack(spec, params.theta)
    scaling = params.scaling

    if spec.kind in (ModelKind.RESNET, ModelKind.FNN):
        gv = g * scaling.output_scale
        if spec.kind == ModelKind.RESNET:
            gv = gv * spec.step_scale
        dz = (gv @ p["w1"]) * elu_prime(cache["z"])
        grads = {
            "w1": gv.T @ cache["h"],
            "b1": gv.sum(axis=0),
            "w0": dz.T @ cache["xs"],
            "b0": dz.sum(axis=0),
        }
    elif spec.kind == ModelKind.POLYNOMIAL:
        grads = {"c": cache["phi"].T @ (g * scaling.output_scale)}
    else:
        pg = -g  # dL/d(grad E)
        z, q, a = cache["z"], cache["q"], cache["a"]
        pw0 = pg @ p["w0"]
        r = pg @ p["w1"].T
        t = p["w2"] * elu_second(z) * r
        grads = {
            "w0": 2.0 * (pw0 @ x) + 2.0 * (a @ pg),
            "b0": np.array([2.0 * np.sum(pw0)]),
            "w1": q.T @ pg + t.T @ x,
            "b1": t.sum(axis=0),
            "w2": np.sum(elu_prime(z) * r, axis=0),
            "b2": np.zeros(1),
        }

    for name, value in grads.items():
        _check_finite(name, value)
    return loss, _pack(spec, grads)


@dataclass
class Model:
    """A hypothesis space together with its current parameters"""

    spec: ModelSpec
    params: ModelParams = field(default=None)

    def __post_init__(self):
        if self.params is None:
            self.params = zero_params(self.spec)

    def __call__(self, x) -> np.ndarray:
        return evaluate(self.spec, self.params, x)

    def predict(self, x) -> np.ndarray:
        return evaluate(self.spec, self.params, x)

    def squared_errors(self, inputs, labels) -> np.ndarray:
        """Per-sample |f(x_i) - y_i|^2"""
        out = evaluate(self.spec, self.params, np.atleast_2d(inputs))
        residual = out - np.asarray(labels, dtype=np.float64).reshape(out.shape)
        return np.sum(residual * residual, axis=1)

    def mse(self, inputs, labels) -> float:
        return float(np.mean(self.squared_errors(inputs, labels)))

    def with_params(self, params: ModelParams) -> "Model":
        return Model(self.spec, params)


# TSSM files

def serialize(spec: ModelSpec, params: ModelParams) -> bytes:
    """
    Encode a model as TSSM v1

    Header line, standardization lines, block table, blank line, then theta
    as little-endian f64.
    """
    lines = [
        f"{spec.kind.value} {spec.input_dim} {spec.output_dim} {spec.width_or_degree} "
        f"{float(spec.step_scale)!r} {len(params.theta)}"
    ]
    for name, values in params.scaling.rows():
        lines.append(" ".join([name] + [repr(float(v)) for v in values]))
    for name, offset, length in params.layout:
        lines.append(f"{name} {offset} {length}")
    text = "\n".join(lines) + "\n\n"
    return MAGIC + text.encode("ascii") + params.theta.astype(_F64).tobytes()


def deserialize(data: bytes) -> Tuple[ModelSpec, ModelParams]:
    """
    Decode a TSSM v1 byte string

    Raises:
        FormatError: On a malformed header, unsupported version or payload
            length mismatch
    """
    if len(data) < len(MAGIC) or not data.startswith(MAGIC[:4]):
        raise FormatError("Malformed model header: missing TSSM magic")
    if data[4:5] != MAGIC[4:5]:
        raise FormatError(f"Unsupported TSSM version {data[4]}")
    end = data.find(b"\n\n", len(MAGIC))
    if end < 0:
        raise FormatError("Malformed model header: no end of block table")
    try:
        lines = data[len(MAGIC):end].decode("ascii").split("\n")
    except UnicodeDecodeError as e:
        raise FormatError("Malformed model header: not ASCII") from e

    fields = lines[0].split()
    if len(fields) != 6:
        raise FormatError(f"Malformed model header line: {lines[0]!r}")
    try:
        spec = ModelSpec(ModelKind(fields[0]), int(fields[1]), int(fields[2]), int(fields[3]), float(fields[4]))
        n_params = int(fields[5])
    except (ValueError, InputError) as e:
        raise FormatError(f"Malformed model header line: {lines[0]!r}") from e

    scaling_values, layout = {}, []
    for line in lines[1:]:
        parts = line.split()
        if not parts:
            raise FormatError("Malformed block table: empty line")
        if parts[0] not in _SCALING_DIMS and len(parts) != 3:
            raise FormatError(f"Malformed block table line: {line!r}")
        try:
            if parts[0] in _SCALING_DIMS:
                scaling_values[parts[0]] = [float(v) for v in parts[1:]]
            else:
                layout.append((parts[0], int(parts[1]), int(parts[2])))
        except ValueError as e:
            raise FormatError(f"Malformed block table line: {line!r}") from e

    if tuple(layout) != parameter_layout(spec):
        raise FormatError("Block table does not match the model kind")
    payload = data[end + 2:]
    if n_params != spec.parameter_count or len(payload) != n_params * _F64.itemsize:
        raise FormatError(
            f"Parameter length mismatch: header {n_params}, payload {len(payload) // _F64.itemsize}"
        )

    if scaling_values:
        dims = {"input": spec.input_dim, "output": spec.output_dim}
        for name, values in scaling_values.items():
            if len(values) != dims[_SCALING_DIMS[name]]:
                raise FormatError(
                    f"Standardization line {name} has {len(values)} values, expected {dims[_SCALING_DIMS[name]]}"
                )
        try:
            scaling = Standardization(**scaling_values)
        except TypeError as e:
            raise FormatError("Incomplete standardization lines") from e
        except InputError as e:
            raise FormatError(f"Invalid standardization: {e}") from e
    else:
        scaling = Standardization.identity(spec.input_dim, spec.output_dim)
    theta = np.frombuffer(payload, dtype=_F64).copy()
    return spec, ModelParams(theta, tuple(layout), scaling)


def save_model(model: Model, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(serialize(model.spec, model.params))
    logger.info(f"Saved {model.spec.kind.value} model ({model.spec.parameter_count} parameters) to {path}")


def load_model(path) -> Model:
    spec, params = deserialize(Path(path).read_bytes())
    return Model(spec, params)
