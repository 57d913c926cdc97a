"""
Mean-square-error pretraining and fixed-weight fits

Neural kinds are trained with Adam; polynomial models are fitted exactly by
a QR least-squares solve. The same routine fits the baseline-weighted
ablation models.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from learning.models import (
    ModelKind,
    ModelParams,
    ModelSpec,
    Standardization,
    init_params,
    polynomial_features,
)
from learning.optim import OptimizerState, run_reweighted_training, weighted_loss
from utils.errors import InputError

logger = logging.getLogger(__name__)

# Seed offset separating pretraining minibatch streams from the task-specific ones
_MSE_SEED_STREAM = 1 << 20


@dataclass(frozen=True)
class MseConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 500
    patience: int = 20
    tolerance: float = 1e-6
    batch_size: int = 256

    def __post_init__(self):
        if not self.learning_rate > 0 or self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise InputError("Invalid MSE training configuration")


def _safe_scale(values: np.ndarray) -> np.ndarray:
    scale = np.std(values, axis=0)
    return np.where(scale > 1e-12, scale, 1.0)


def fit_standardization(spec: ModelSpec, inputs: np.ndarray, labels: np.ndarray) -> Standardization:
    """
    Per-coordinate shift/scale from the data

    Inputs are standardized for every kind except the energy model; the
    network output is scaled to the labels (fnn) or to the residual
    (y - x) / tau (resnet).
    """
    if not spec.standardized:
        return Standardization.identity(spec.input_dim, spec.output_dim)
    input_shift, input_scale = np.mean(inputs, axis=0), _safe_scale(inputs)
    if spec.kind == ModelKind.RESNET:
        target = (labels - inputs) / spec.step_scale
    elif spec.kind == ModelKind.FNN:
        target = labels
    else:
        return Standardization(input_shift, input_scale, np.zeros(spec.output_dim), np.ones(spec.output_dim))
    return Standardization(input_shift, input_scale, np.mean(target, axis=0), _safe_scale(target))


def _fit_polynomial(spec: ModelSpec, scaling: Standardization, inputs, labels, weights) -> np.ndarray:
    phi = polynomial_features((inputs - scaling.input_shift) / scaling.input_scale, spec.width_or_degree)
    root = np.sqrt(weights)[:, None]
    phi, labels = phi * root, labels * root
    if phi.shape[0] >= phi.shape[1]:
        q, r = linalg.qr(phi, mode="economic")
        diagonal = np.abs(np.diag(r))
        if diagonal.min() > 1e-12 * diagonal.max():
            return linalg.solve_triangular(r, q.T @ labels)
    logger.warning("Polynomial design matrix is rank deficient; using a least-squares solve")
    coefficients, *_ = linalg.lstsq(phi, labels)
    return coefficients


def train_weighted(
    spec: ModelSpec,
    dataset,
    weights,
    cfg: MseConfig,
    seed: int,
    init: Optional[ModelParams] = None,
) -> ModelParams:
    """
    Minimize the weighted squared loss (1/N) sum_i m_i |f(x_i) - y_i|^2

    Neural kinds run Adam until the relative improvement over `cfg.patience`
    epochs drops below `cfg.tolerance` or `cfg.max_epochs` is reached;
    polynomial models are solved exactly.

    Args:
        spec (ModelSpec): Hypothesis space
        dataset (Dataset): Training data
        weights: N nonnegative sample weights
        cfg (MseConfig): Adam settings and stopping rule
        seed (int): Seed of initialization and minibatch order
        init (ModelParams): Optional starting point; a fresh initialization
            with standardization fitted to the data otherwise

    Returns:
        ModelParams: The fitted parameters
    """
    if dataset.input_dim != spec.input_dim or dataset.output_dim != spec.output_dim:
        raise InputError("Dataset dimensions do not match the model")
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if init is None:
        scaling = fit_standardization(spec, dataset.inputs, dataset.labels)
        fresh = init_params(spec, seed)
        params = ModelParams(fresh.theta, fresh.layout, scaling)
    else:
        params = init

    if spec.kind == ModelKind.POLYNOMIAL:
        coefficients = _fit_polynomial(spec, params.scaling, dataset.inputs, dataset.labels, weights)
        params = params.with_theta(coefficients.reshape(-1))
        logger.info(f"Exact polynomial fit, weighted loss {_loss(spec, params, dataset, weights):.6e}")
        return params

    opt = OptimizerState.adam(cfg.learning_rate, 1, spec.parameter_count, cfg.batch_size)
    history = [_loss(spec, params, dataset, weights)]
    logger.info(f"Training a {spec.kind.value} model, initial loss {history[0]:.6e}")

    for epoch in range(cfg.max_epochs):
        params, opt, loss = run_reweighted_training(
            spec, params, dataset, weights, opt, seed * _MSE_SEED_STREAM + epoch
        )
        history.append(loss)
        if len(history) > cfg.patience:
            reference = history[-1 - cfg.patience]
            if reference <= 0 or (reference - loss) / reference < cfg.tolerance:
                logger.info(f"Training converged after {epoch + 1} epochs, loss {loss:.6e}")
                break
    else:
        logger.info(f"Training stopped at max_epochs={cfg.max_epochs}, loss {history[-1]:.6e}")
    return params


def train_mse(spec: ModelSpec, dataset, cfg: MseConfig, seed: int) -> ModelParams:
    """
    Minimize the unweighted mean square error from a fresh initialization

    Args:
        spec (ModelSpec): Hypothesis space
        dataset (Dataset): Training data
        cfg (MseConfig): Adam settings and stopping rule
        seed (int): Seed of initialization and minibatch order

    Returns:
        ModelParams: The fitted parameters
    """
    return train_weighted(spec, dataset, np.ones(dataset.n), cfg, seed)


def _loss(spec: ModelSpec, params: ModelParams, dataset, weights) -> float:
    return weighted_loss(spec, params, dataset.inputs, dataset.labels, weights)
