import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from datagen.dataset import Dataset
from learning.models import ModelKind, ModelSpec, init_params, polynomial_features, zero_params
from learning.optim import (
    ControllerAction,
    ControllerPolicy,
    OptimizerKind,
    OptimizerState,
    apply_update,
    controller_update,
    initial_optimizer,
    run_reweighted_training,
    weighted_loss,
)
from utils.errors import InputError, NumericalOverflow

POLICY = ControllerPolicy(sgd_lr=1e-3, adam_lr_ratio=0.1, epochs_min=1, epochs_max=32, epoch_growth=2.0)


@pytest.fixture
def line_data():
    return Dataset(inputs=[[-1.0], [2.0]], labels=[[1.0], [0.0]])


class TestOptimizerState:
    def test_moments_only_for_adam(self):
        with pytest.raises(InputError):
            OptimizerState(OptimizerKind.SGD, 1e-3, 1, 4, adam_m=np.zeros(4), adam_v=np.zeros(4))
        with pytest.raises(InputError):
            OptimizerState(OptimizerKind.ADAM, 1e-3, 1, 4)

    def test_initial_optimizer(self):
        opt = initial_optimizer(POLICY, 10)
        assert opt.kind == OptimizerKind.SGD
        assert opt.epochs_per_iteration == POLICY.epochs_min
        assert opt.learning_rate == POLICY.sgd_lr


class TestApplyUpdate:
    def test_sgd_step(self):
        opt = OptimizerState.sgd(0.5, 1, 2)
        theta, _ = apply_update(opt, np.array([1.0, 2.0]), np.array([2.0, -4.0]))
        assert_allclose(theta, [0.0, 4.0])

    def test_first_adam_step_has_learning_rate_size(self):
        opt = OptimizerState.adam(0.01, 1, 2)
        theta, opt = apply_update(opt, np.array([1.0, 1.0]), np.array([3.0, -0.5]))
        assert_allclose(theta, [0.99, 1.01], rtol=1e-6)
        assert opt.adam_t == 1

    def test_adam_on_quadratic(self):
        opt = OptimizerState.adam(1e-3, 1, 1)
        theta = np.array([1.0])
        for _ in range(5000):
            theta, opt = apply_update(opt, theta, theta)
        assert abs(theta[0]) < 0.05


class TestRunReweightedTraining:
    def test_zero_learning_rate(self, line_data):
        spec = ModelSpec(ModelKind.POLYNOMIAL, 1, 1, 1)
        params = zero_params(spec).with_theta([0.3, -0.2])
        weights = np.array([0.5, 1.5])
        out, _, loss = run_reweighted_training(spec, params, line_data, weights, OptimizerState.sgd(0.0, 3, 2), 0)
        assert_array_equal(out.theta, params.theta)
        assert loss == weighted_loss(spec, params, line_data.inputs, line_data.labels, weights)

    def test_full_batch_sgd_step(self, line_data):
        spec = ModelSpec(ModelKind.POLYNOMIAL, 1, 1, 1)
        theta = np.array([0.3, -0.2])
        weights = np.array([0.5, 1.5])
        opt = OptimizerState.sgd(0.1, 1, 2, batch_size=2)
        out, _, _ = run_reweighted_training(spec, zero_params(spec).with_theta(theta), line_data, weights, opt, 7)

        phi = polynomial_features(line_data.inputs, 1)
        residual = phi @ theta - line_data.labels[:, 0]
        grad = 2.0 / 2 * phi.T @ (weights * residual)
        assert_allclose(out.theta, theta - 0.1 * grad, rtol=1e-12)

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1.0, 1.0, size=(300, 1))
        dataset = Dataset(inputs=x, labels=np.sin(3.0 * x))
        spec = ModelSpec(ModelKind.FNN, 1, 1, 8)
        params = init_params(spec, 1)
        opt = OptimizerState.adam(1e-2, 3, spec.parameter_count, batch_size=32)
        a, _, loss_a = run_reweighted_training(spec, params, dataset, np.ones(300), opt, 42)
        b, _, loss_b = run_reweighted_training(spec, params, dataset, np.ones(300), opt, 42)
        assert_array_equal(a.theta, b.theta)
        assert loss_a == loss_b
        assert loss_a < weighted_loss(spec, params, dataset.inputs, dataset.labels, np.ones(300))

    @pytest.mark.parametrize(
        "spec",
        [
            ModelSpec(ModelKind.RESNET, 3, 3, 5, 0.1),
            ModelSpec(ModelKind.FNN, 2, 1, 6),
            ModelSpec(ModelKind.POLYNOMIAL, 2, 2, 3),
            ModelSpec(ModelKind.ENERGY, 3, 3, 4),
        ],
        ids=lambda spec: spec.kind.value,
    )
    def test_small_full_batch_step_descends(self, spec):
        rng = np.random.default_rng(11)
        for trial in range(5):
            x = rng.normal(size=(40, spec.input_dim))
            dataset = Dataset(inputs=x, labels=rng.normal(size=(40, spec.output_dim)))
            weights = rng.uniform(0.1, 2.0, size=40)
            weights *= 40 / weights.sum()
            params = init_params(spec, trial)
            before = weighted_loss(spec, params, dataset.inputs, dataset.labels, weights)
            opt = OptimizerState.sgd(1e-6, 1, spec.parameter_count, batch_size=40)
            _, _, after = run_reweighted_training(spec, params, dataset, weights, opt, trial)
            assert after < before

    def test_weight_count_mismatch(self, line_data):
        spec = ModelSpec(ModelKind.POLYNOMIAL, 1, 1, 1)
        with pytest.raises(InputError):
            run_reweighted_training(spec, zero_params(spec), line_data, np.ones(3), OptimizerState.sgd(0.1, 1, 2), 0)

    def test_divergence_raises_overflow(self, line_data):
        spec = ModelSpec(ModelKind.POLYNOMIAL, 1, 1, 1)
        opt = OptimizerState.sgd(1e305, 5, 2)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NumericalOverflow):
                run_reweighted_training(spec, zero_params(spec), line_data, np.ones(2), opt, 0)


class TestControllerUpdate:
    def test_success_grows_epochs(self):
        opt, action = controller_update(POLICY, OptimizerState.sgd(1e-3, 4, 5), 1.0, 0.5, 1.0, True)
        assert opt.epochs_per_iteration == 8
        assert opt.kind == OptimizerKind.SGD
        assert action == ControllerAction.CONTINUE

    def test_success_at_max_switches_to_adam(self):
        opt, action = controller_update(POLICY, OptimizerState.sgd(1e-3, 32, 5), 1.0, 0.5, 1.0, True)
        assert opt.kind == OptimizerKind.ADAM
        assert opt.learning_rate == pytest.approx(1e-4)
        assert_array_equal(opt.adam_m, np.zeros(5))
        assert action == ControllerAction.CONTINUE

    def test_adam_increase_restores_and_resets(self):
        opt, action = controller_update(POLICY, OptimizerState.adam(1e-4, 32, 5), 0.5, 0.6, 1.0, True)
        assert action == ControllerAction.RESTORE_AND_RESET_SGD
        assert opt.kind == OptimizerKind.SGD
        assert opt.epochs_per_iteration == 16
        assert opt.adam_m is None

    def test_adam_increase_without_checkpoint_continues(self):
        opt, action = controller_update(POLICY, OptimizerState.adam(1e-4, 8, 5), 0.5, 0.6, 1.0, False)
        assert action == ControllerAction.CONTINUE
        assert opt.kind == OptimizerKind.SGD

    def test_failure_with_large_change_shrinks(self):
        opt, _ = controller_update(POLICY, OptimizerState.sgd(1e-3, 8, 5), 0.5, 0.6, 1.0, True)
        assert opt.epochs_per_iteration == 4

    def test_failure_with_small_change_grows(self):
        opt, _ = controller_update(POLICY, OptimizerState.sgd(1e-3, 8, 5), 0.5, 0.6, 0.01, True)
        assert opt.epochs_per_iteration == 16

    def test_epochs_stay_in_range(self):
        opt, _ = controller_update(POLICY, OptimizerState.sgd(1e-3, 1, 5), 0.5, 0.6, 1.0, True)
        assert opt.epochs_per_iteration == 1
        opt, _ = controller_update(POLICY, OptimizerState.adam(1e-4, 32, 5), 0.5, 0.4, 1.0, True)
        assert opt.epochs_per_iteration == 32

    def test_nan_metric(self):
        with pytest.raises(InputError):
            controller_update(POLICY, OptimizerState.sgd(1e-3, 4, 5), np.nan, 0.5, 1.0, True)

    def test_unbounded_metric_is_an_increase(self):
        opt, action = controller_update(POLICY, OptimizerState.adam(1e-4, 32, 5), 0.5, np.inf, 1.0, True)
        assert action == ControllerAction.RESTORE_AND_RESET_SGD
        opt, _ = controller_update(POLICY, OptimizerState.sgd(1e-3, 8, 5), 0.5, np.inf, 1.0, True)
        assert opt.epochs_per_iteration == 4

    def test_recovery_from_unbounded_metric(self):
        opt, _ = controller_update(POLICY, OptimizerState.sgd(1e-3, 4, 5), np.inf, 0.5, 1.0, True)
        assert opt.epochs_per_iteration == 8
        assert opt.consecutive_successes == 1

    @pytest.mark.parametrize("policy", [POLICY, ControllerPolicy(epochs_min=4, epochs_max=4)])
    def test_no_adam_right_after_restore(self, policy):
        opt = OptimizerState.adam(1e-4, policy.epochs_max, 5)
        opt, action = controller_update(policy, opt, 0.5, 0.6, 1.0, True)
        assert action == ControllerAction.RESTORE_AND_RESET_SGD
        assert opt.kind == OptimizerKind.SGD
        opt, action = controller_update(policy, opt, 0.6, 0.1, 1.0, True)
        assert opt.kind == OptimizerKind.SGD
        assert action == ControllerAction.CONTINUE

    def test_adam_allowed_again_after_one_sgd_update(self):
        policy = ControllerPolicy(epochs_min=4, epochs_max=4)
        opt, _ = controller_update(policy, OptimizerState.adam(1e-4, 4, 5), 0.5, 0.6, 1.0, True)
        opt, _ = controller_update(policy, opt, 0.6, 0.4, 1.0, True)
        opt, _ = controller_update(policy, opt, 0.4, 0.3, 1.0, True)
        assert opt.kind == OptimizerKind.ADAM

    def test_policy_validation(self):
        with pytest.raises(InputError):
            ControllerPolicy(epochs_min=8, epochs_max=4)
