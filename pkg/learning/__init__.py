from learning.kernels import DensityEstimate, KernelSpec, estimate_density, kernel_weight
from learning.models import Model, ModelKind, ModelParams, ModelSpec
from learning.optim import ControllerPolicy, OptimizerState
from learning.weighting import WeightingConfig, WeightState

__all__ = [
    "ControllerPolicy",
    "DensityEstimate",
    "KernelSpec",
    "Model",
    "ModelKind",
    "ModelParams",
    "ModelSpec",
    "OptimizerState",
    "WeightState",
    "WeightingConfig",
    "estimate_density",
    "kernel_weight",
]
