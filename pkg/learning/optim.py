"""
Optimizers for the reweighted empirical risk and the controller that adapts
them between training iterations
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from learning.models import ModelParams, ModelSpec, weighted_loss_gradient
from utils.errors import InputError, NumericalOverflow
from utils.rng import STREAM_MINIBATCH, make_rng

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


class ControllerAction(str, Enum):
    CONTINUE = "continue"
    RESTORE_AND_RESET_SGD = "restore_and_reset_sgd"


@dataclass(frozen=True, eq=False)
class OptimizerState:
    kind: OptimizerKind
    learning_rate: float
    epochs_per_iteration: int
    parameter_count: int
    batch_size: int = 256
    adam_m: Optional[np.ndarray] = None
    adam_v: Optional[np.ndarray] = None
    adam_t: int = 0
    consecutive_successes: int = 0
    restored: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", OptimizerKind(self.kind))
        if not self.learning_rate >= 0:
            raise InputError(f"Learning rate must be nonnegative, got {self.learning_rate}")
        if self.epochs_per_iteration < 1 or self.batch_size < 1:
            raise InputError("epochs_per_iteration and batch_size must be positive")
        has_moments = self.adam_m is not None and self.adam_v is not None
        if has_moments != (self.kind == OptimizerKind.ADAM):
            raise InputError("Adam moments must be present exactly when the optimizer is Adam")

    @classmethod
    def sgd(cls, learning_rate: float, epochs: int, parameter_count: int, batch_size: int = 256) -> "OptimizerState":
        return cls(OptimizerKind.SGD, learning_rate, epochs, parameter_count, batch_size)

    @classmethod
    def adam(cls, learning_rate: float, epochs: int, parameter_count: int, batch_size: int = 256) -> "OptimizerState":
        return cls(
            OptimizerKind.ADAM, learning_rate, epochs, parameter_count, batch_size,
            adam_m=np.zeros(parameter_count), adam_v=np.zeros(parameter_count),
        )

    def describe(self) -> str:
        return f"{self.kind.value} lr={self.learning_rate:g} epochs={self.epochs_per_iteration}"


@dataclass(frozen=True)
class ControllerPolicy:
    sgd_lr: float = 1e-3
    adam_lr_ratio: float = 0.1
    epochs_min: int = 1
    epochs_max: int = 32
    epoch_growth: float = 2.0
    m_change_threshold: float = 0.1
    batch_size: int = 256

    def __post_init__(self):
        if not self.sgd_lr > 0:
            raise InputError("sgd_lr must be positive")
        if not 0 < self.adam_lr_ratio < 1:
            raise InputError("adam_lr_ratio must lie in (0, 1)")
        if not 1 <= self.epochs_min <= self.epochs_max:
            raise InputError("Need 1 <= epochs_min <= epochs_max")
        if not self.epoch_growth > 1:
            raise InputError("epoch_growth must be greater than 1")
        if not self.m_change_threshold > 0:
            raise InputError("m_change_threshold must be positive")

    def clamp(self, epochs: float) -> int:
        return int(min(max(epochs, self.epochs_min), self.epochs_max))


def initial_optimizer(policy: ControllerPolicy, parameter_count: int) -> OptimizerState:
    """Plain SGD with the smallest epoch count"""
    return OptimizerState.sgd(policy.sgd_lr, policy.epochs_min, parameter_count, policy.batch_size)


def apply_update(opt: OptimizerState, theta: np.ndarray, grad: np.ndarray) -> Tuple[np.ndarray, OptimizerState]:
    """One SGD or Adam step; returns the new theta and optimizer state"""
    if opt.kind == OptimizerKind.SGD:
        return theta - opt.learning_rate * grad, opt

    t = opt.adam_t + 1
    m = ADAM_BETA1 * opt.adam_m + (1.0 - ADAM_BETA1) * grad
    v = ADAM_BETA2 * opt.adam_v + (1.0 - ADAM_BETA2) * grad * grad
    m_hat = m / (1.0 - ADAM_BETA1 ** t)
    v_hat = v / (1.0 - ADAM_BETA2 ** t)
    theta = theta - opt.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPSILON)
    return theta, replace(opt, adam_m=m, adam_v=v, adam_t=t)


def weighted_loss(spec: ModelSpec, params: ModelParams, inputs, labels, weights) -> float:
    """L_N(theta; m) over the whole dataset"""
    loss, _ = weighted_loss_gradient(spec, params, inputs, labels, weights)
    return loss


def run_reweighted_training(
    spec: ModelSpec,
    params: ModelParams,
    dataset,
    weights,
    opt: OptimizerState,
    rng_seed: int,
) -> Tuple[ModelParams, OptimizerState, float]:
    """
    Minibatch passes over the reweighted empirical risk with fixed weights

    Args:
        spec (ModelSpec): Hypothesis space
        params (ModelParams): Starting parameters
        dataset (Dataset): Training data
        weights: N coefficients with mean 1
        opt (OptimizerState): Optimizer and its epoch count
        rng_seed (int): Seed of the minibatch order

    Returns:
        tuple: (params, optimizer state, final L_N(theta; m))
    """
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(weights) != dataset.n:
        raise InputError(f"Got {len(weights)} weights for {dataset.n} samples")
    theta = np.array(params.theta)
    inputs, labels = dataset.inputs, dataset.labels

    for epoch in range(opt.epochs_per_iteration):
        order = make_rng(rng_seed, STREAM_MINIBATCH, epoch).permutation(dataset.n)
        for step, start in enumerate(range(0, dataset.n, opt.batch_size)):
            batch = order[start:start + opt.batch_size]
            try:
                _, grad = weighted_loss_gradient(
                    spec, params.with_theta(theta), inputs[batch], labels[batch], weights[batch]
                )
            except NumericalOverflow as e:
                raise e.with_context(f"epoch {epoch}, step {step}") from e
            theta, opt = apply_update(opt, theta, grad)
            if not np.all(np.isfinite(theta)):
                raise NumericalOverflow("theta", f"epoch {epoch}, step {step}")

    params = params.with_theta(theta)
    return params, opt, weighted_loss(spec, params, inputs, labels, weights)


def controller_update(
    policy: ControllerPolicy,
    opt: OptimizerState,
    prev_RSN: float,
    new_RSN: float,
    m_rel_change: float,
    checkpoint_available: bool,
) -> Tuple[OptimizerState, ControllerAction]:
    """
    Adapt optimizer and epoch count after one training iteration

    - Adam with an increased R_SN falls back to SGD with halved epochs and
      asks for the previous parameters to be restored (if a checkpoint exists)
    - SGD that succeeds while already at epochs_max switches to Adam with the
      reduced learning rate and fresh moments, but never on the first update
      after a reset
    - otherwise epochs grow on success or on a small change of m, and shrink
      on failure

    An infinite R_SN (support outside the data) is never a success.
    """
    if np.isnan(prev_RSN) or np.isnan(new_RSN):
        raise InputError("R_SN values must not be NaN")
    success = new_RSN < prev_RSN

    if opt.kind == OptimizerKind.ADAM and new_RSN > prev_RSN:
        epochs = policy.clamp(opt.epochs_per_iteration // 2)
        reset = replace(OptimizerState.sgd(policy.sgd_lr, epochs, opt.parameter_count, opt.batch_size), restored=True)
        action = ControllerAction.RESTORE_AND_RESET_SGD if checkpoint_available else ControllerAction.CONTINUE
        logger.warning(f"R_SN increased under Adam ({prev_RSN:.4e} -> {new_RSN:.4e}); resetting to SGD")
        return reset, action

    at_max = opt.epochs_per_iteration >= policy.epochs_max
    if opt.kind == OptimizerKind.SGD and success and at_max and not opt.restored:
        logger.info(f"Switching to Adam with learning rate {policy.sgd_lr * policy.adam_lr_ratio:g}")
        switched = OptimizerState.adam(
            policy.sgd_lr * policy.adam_lr_ratio, opt.epochs_per_iteration, opt.parameter_count, opt.batch_size
        )
        return replace(switched, consecutive_successes=opt.consecutive_successes + 1), ControllerAction.CONTINUE

    if success or m_rel_change < policy.m_change_threshold:
        epochs = policy.clamp(np.ceil(opt.epochs_per_iteration * policy.epoch_growth))
    else:
        epochs = policy.clamp(np.floor(opt.epochs_per_iteration / policy.epoch_growth))
    successes = opt.consecutive_successes + 1 if success else 0
    return (
        replace(opt, epochs_per_iteration=epochs, consecutive_successes=successes, restored=False),
        ControllerAction.CONTINUE,
    )
