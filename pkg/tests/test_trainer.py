import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from datagen.dataset import Dataset
from datagen.ground_truth import example2_closed_form_error_sq
from learning.kernels import KernelSpec
from learning.models import Model, ModelKind, ModelSpec, zero_params
from learning.optim import ControllerPolicy
from learning.weighting import WeightingConfig
from tasks.base import SupportTrace
from tasks.rollout_task import RolloutConfig, RolloutTask
from trainer.experiment import ExperimentRunner, ablation_cells, run_ablation, run_cell
from trainer.mse import MseConfig, train_mse, train_weighted
from trainer.supervisor import GroundTruthOracle, StoppingConfig, TaskSpecificTrainer, support_density_diagnostic
from utils.config import ExperimentConfig
from utils.errors import ConfigError, InputError
from utils.rng import make_rng


def example2_config(*overrides):
    base = ["data.n=2000", "stopping.max_iterations=30"]
    return ExperimentConfig.from_preset("example2").with_overrides(base + list(overrides))


@pytest.fixture(scope="module")
def example2_runner():
    return ExperimentRunner(example2_config(), 0)


@pytest.fixture(scope="module")
def example2_mse(example2_runner):
    return example2_runner.train("mse")


@pytest.fixture(scope="module")
def example2_ts(example2_runner, example2_mse):
    return example2_runner.train("ts", example2_mse.model.params)


class TestMseTraining:
    def test_example2_affine_fit(self, example2_mse):
        values = example2_mse.model(np.array([[-0.5], [0.0], [0.5]]))
        assert np.max(np.abs(values + 0.5)) < 1e-2

    def test_example2_output_error_matches_closed_form(self, example2_runner, example2_mse):
        evaluation = example2_runner.evaluate(example2_mse.model)
        expected = math.sqrt(example2_closed_form_error_sq(1.0, 0.1, 20))
        assert evaluation.J_A == pytest.approx(expected, rel=0.1)
        assert evaluation.J == 20

    def test_residual_identity_stays_exact(self):
        spec = ModelSpec(ModelKind.RESNET, 2, 2, 4, 0.1)
        inputs = make_rng(0, 5).uniform(-1.0, 1.0, (64, 2))
        dataset = Dataset(inputs, inputs)
        params = train_weighted(spec, dataset, np.ones(64), MseConfig(max_epochs=5), 0, init=zero_params(spec))
        assert Model(spec, params).mse(inputs, inputs) == 0.0

    def test_dimension_mismatch(self):
        dataset = Dataset(np.zeros((4, 2)), np.zeros((4, 1)))
        with pytest.raises(InputError):
            train_mse(ModelSpec(ModelKind.FNN, 1, 1, 4), dataset, MseConfig(), 0)

    def test_deterministic(self):
        inputs = make_rng(1, 5).uniform(-1.0, 1.0, (200, 1))
        dataset = Dataset(inputs, np.sin(3.0 * inputs))
        spec = ModelSpec(ModelKind.FNN, 1, 1, 6)
        cfg = MseConfig(learning_rate=1e-2, max_epochs=20, batch_size=32)
        assert_array_equal(train_mse(spec, dataset, cfg, 7).theta, train_mse(spec, dataset, cfg, 7).theta)

    @pytest.mark.slow
    def test_fnn_fits_sine(self):
        inputs = make_rng(2, 5).uniform(-np.pi, np.pi, (2000, 1))
        dataset = Dataset(inputs, np.sin(inputs))
        spec = ModelSpec(ModelKind.FNN, 1, 1, 16)
        params = train_mse(spec, dataset, MseConfig(learning_rate=1e-2, max_epochs=300, batch_size=64), 0)
        assert Model(spec, params).mse(inputs, np.sin(inputs)) < 1e-2


class TestSupportDensityDiagnostic:
    @pytest.fixture
    def uniform_data(self):
        inputs = make_rng(3, 5).uniform(-1.0, 1.0, (1000, 1))
        return Dataset(inputs, -np.abs(inputs))

    def test_support_inside_data(self, uniform_data):
        diagnostic = support_density_diagnostic(uniform_data, SupportTrace([[0.0], [0.5]]), KernelSpec(0.001))
        assert diagnostic.flagged == ()
        assert diagnostic.warnings == []

    def test_far_point_flagged(self, uniform_data):
        support = SupportTrace([[0.0], [5.0]])
        diagnostic = support_density_diagnostic(uniform_data, support, KernelSpec(0.001))
        assert diagnostic.flagged == (1,)
        assert len(diagnostic.warnings) == 1


class TestTaskSpecificTraining:
    def test_improves_example2_output(self, example2_runner, example2_mse, example2_ts):
        j_a_mse = example2_runner.evaluate(example2_mse.model).J_A
        j_a_ts = example2_runner.evaluate(example2_ts.model).J_A
        assert j_a_ts < j_a_mse

    def test_returns_best_recorded_parameters(self, example2_runner, example2_ts):
        best = min(example2_ts.records, key=lambda r: r.R_SN)
        assert example2_runner.evaluate(example2_ts.model).R_SN == pytest.approx(best.R_SN, rel=1e-9)

    def test_records_carry_true_metrics(self, example2_ts):
        first = example2_ts.records[0]
        assert first.iteration == 0
        assert first.optimizer == "sgd"
        assert first.J == 20
        assert first.R_S_true is not None and first.J_A_true is not None
        assert first.seconds is None
        assert len(example2_ts.records) <= 30

    def test_deterministic(self, example2_runner, example2_mse, example2_ts):
        again = example2_runner.train("ts", example2_mse.model.params)
        assert_array_equal(again.model.params.theta, example2_ts.model.params.theta)

    def test_stops_when_risk_is_flat(self, example2_runner, example2_mse):
        trainer = TaskSpecificTrainer(
            example2_runner.model_spec,
            example2_runner.dataset,
            example2_runner.build_task(),
            example2_runner.weighting,
            ControllerPolicy(sgd_lr=1e-14),
            StoppingConfig(window=3, std_tolerance=1e-6, max_iterations=50),
            seed=0,
        )
        _, records = trainer.train(example2_mse.model.params)
        assert len(records) == 3

    def test_iteration_cap(self, example2_runner, example2_mse):
        trainer = TaskSpecificTrainer(
            example2_runner.model_spec,
            example2_runner.dataset,
            example2_runner.build_task(),
            example2_runner.weighting,
            example2_runner.policy,
            StoppingConfig(window=10, std_tolerance=0.0, max_iterations=4),
            seed=0,
        )
        _, records = trainer.train(example2_mse.model.params)
        assert [r.iteration for r in records] == [0, 1, 2, 3]

    def test_oracle_reference(self):
        task = RolloutTask(RolloutConfig((1.0,), 5, euler_step=0.1, metric="l2"))
        oracle = GroundTruthOracle.for_task(task, lambda x: -np.abs(x))
        _, output = task.run(lambda x: -np.abs(x))
        assert oracle.output_error(output) == 0.0

    @pytest.mark.slow
    def test_example2_large_improvement(self):
        runner = ExperimentRunner(ExperimentConfig.from_preset("example2"), 0)
        mse = runner.train("mse")
        ts = runner.train("ts", mse.model.params)
        assert runner.evaluate(ts.model).J_A <= 0.05 * runner.evaluate(mse.model).J_A


class TestExperimentRunner:
    def test_unknown_method(self, example2_runner):
        with pytest.raises(ConfigError):
            example2_runner.train("adam")

    def test_weighting_from_config(self, example2_runner):
        weighting = example2_runner.weighting
        assert isinstance(weighting, WeightingConfig)
        assert weighting.kernel_rho.variance == 0.001
        assert weighting.kernel_nu.variance == 0.01
        assert weighting.M == 10.0

    def test_model_spec_from_config(self, example2_runner):
        spec = example2_runner.model_spec
        assert spec.kind == ModelKind.POLYNOMIAL
        assert (spec.input_dim, spec.output_dim, spec.width_or_degree) == (1, 1, 1)

    def test_baseline_arms(self, example2_runner, example2_mse):
        for method in ("m1", "m2"):
            result = example2_runner.train(method, example2_mse.model.params)
            assert result.records == []
            assert np.isfinite(example2_runner.evaluate(result.model).J_A)

    def test_estimated_support_risk_tracks_true_risk(self, example2_runner, example2_mse):
        evaluation = example2_runner.evaluate(example2_mse.model)
        assert evaluation.R_S > 0.1
        assert abs(evaluation.R_SN - evaluation.R_S) / evaluation.R_S <= 0.5

    def test_true_field_has_zero_output_error(self, example2_runner):
        evaluation = example2_runner.evaluate_field(example2_runner.f_star())
        assert evaluation.J_A == 0.0
        assert evaluation.R_S == 0.0
        assert math.isnan(evaluation.R_SN)


class TestAblation:
    def test_alpha_cells(self):
        config = example2_config()
        cells = ablation_cells(config, "alpha")
        assert [value for _, value, _ in cells] == ["0.0", "0.25", "0.5", "0.75", "0.99"]
        assert cells[1][0].get_float("data", "alpha") == 0.25

    def test_width_cells_use_degree_for_polynomials(self):
        cells = ablation_cells(example2_config("ablation.width_values=1, 2"), "width")
        assert [c.get_int("model", "degree") for c, _, _ in cells] == [1, 2]

    def test_rollout_length_cells(self):
        cells = ablation_cells(ExperimentConfig.from_preset("lorenz"), "rollout_length")
        assert [value for _, value, _ in cells] == [
            "steps=25 width=128", "steps=50 width=128", "steps=100 width=128",
            "steps=25 width=1024", "steps=50 width=1024", "steps=100 width=1024",
        ]
        config = cells[4][0]
        assert config.get_int("task", "steps") == 50
        assert config.get_int("model", "width") == 1024
        task = ExperimentRunner(config, 0).build_task()
        assert isinstance(task, RolloutTask)
        assert task.cfg.steps == 50

    def test_rollout_length_needs_a_rollout(self):
        with pytest.raises(ConfigError):
            ablation_cells(ExperimentConfig.from_preset("mep"), "rollout_length")

    def test_temperature_cells(self):
        cells = ablation_cells(ExperimentConfig.from_preset("mep"), "temperature")
        assert [value for _, value, _ in cells] == ["0.1", "0.2", "1.0"]
        assert [c.get_float("data", "beta_inv") for c, _, _ in cells] == [0.1, 0.2, 1.0]
        base_only = cells[0][0].with_overrides(["data.alpha=0"])
        assert ExperimentRunner(base_only, 0).sampling_spec().beta_inv == 0.1
        with pytest.raises(ConfigError):
            ablation_cells(ExperimentConfig.from_preset("lorenz"), "temperature")

    def test_reweighting_cell_alpha(self):
        ((config, value, methods),) = ablation_cells(ExperimentConfig.from_preset("lorenz"), "reweighting")
        assert config.get_float("data", "alpha") == 0.25
        assert (value, methods) == ("all", ("ts", "m1", "m2"))
        ((config, _, _),) = ablation_cells(example2_config(), "reweighting")
        assert config.get_float("data", "alpha") == 0.0

    def test_unknown_sweep(self):
        with pytest.raises(ConfigError):
            ablation_cells(example2_config(), "depth")

    def test_unknown_reweighting_method(self):
        with pytest.raises(ConfigError):
            ablation_cells(example2_config("ablation.reweighting_methods=ts, m3"), "reweighting")

    def test_cell_rows(self):
        config = example2_config("data.n=500", "stopping.max_iterations=3")
        rows = run_cell(config, "reweighting", "all", 0, ("ts", "m1"))
        assert [r["method"] for r in rows] == ["mse", "ts", "m1"]
        assert all(r["status"] == "ok" for r in rows)
        assert rows[0]["iters"] == 0 and rows[1]["iters"] == 3

    def test_threaded_sweep_matches_serial(self):
        config = example2_config("data.n=500", "stopping.max_iterations=3", "experiment.seeds=0, 1")
        serial = run_ablation(config, "reweighting", threads=1)
        threaded = run_ablation(config, "reweighting", threads=3)
        keys = ("seed", "method", "J_A", "R_S")
        assert [[r[k] for k in keys] for r in serial] == [[r[k] for k in keys] for r in threaded]
        assert [r["method"] for r in serial] == ["mse", "ts", "m1", "m2"] * 2

    @pytest.mark.slow
    def test_scaled_lorenz_experiment(self):
        config = ExperimentConfig.from_preset("lorenz")
        ratios, improved = [], 0
        for seed in config.seeds:
            runner = ExperimentRunner(config, seed)
            mse = runner.train("mse")
            ts = runner.train("ts", mse.model.params)
            before, after = runner.evaluate(mse.model), runner.evaluate(ts.model)
            ratios.append(after.J_A / before.J_A)
            improved += after.R_S < before.R_S
        assert np.median(ratios) < 1.0
        assert improved >= 4

    @pytest.mark.slow
    def test_scaled_tracking_experiment(self):
        config = ExperimentConfig.from_preset("tracking")
        wins = 0
        for seed in config.seeds:
            runner = ExperimentRunner(config, seed)
            mse = runner.train("mse")
            ts = runner.train("ts", mse.model.params)
            wins += runner.evaluate(ts.model).J_A < runner.evaluate(mse.model).J_A
        assert wins >= 2

    @pytest.mark.slow
    def test_larger_shift_gives_larger_improvement(self):
        config = ExperimentConfig.from_preset("lorenz").with_overrides(
            ["experiment.seeds=0, 1, 2", "ablation.alpha_values=0, 0.99"]
        )
        rows = run_ablation(config, "alpha", threads=2)
        medians = {}
        for value in ("0.0", "0.99"):
            pairs = {}
            for row in rows:
                if row["value"] == value and row["status"] == "ok":
                    pairs.setdefault(row["seed"], {})[row["method"]] = row["J_A"]
            medians[value] = np.median([p["ts"] / p["mse"] for p in pairs.values()])
        assert medians["0.0"] < medians["0.99"]
