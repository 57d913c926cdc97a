"""
Experiment runner: builds dataset, task, model and ground truth from an
experiment configuration and runs training, evaluation and ablation sweeps
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from datagen.dataset import Dataset, Labeler, build_dataset, read_dataset
from datagen.ground_truth import example2_field, lorenz_flow_map, negative_energy_gradient, pendulum_field
from datagen.sampling import SamplerKind, SamplingSpec, perturbed_support_spec, uniform_spec
from learning.kernels import KernelSpec
from learning.models import Model, ModelKind, ModelParams, ModelSpec
from learning.optim import ControllerPolicy
from learning.weighting import BaselineScheme, WeightingConfig, baseline_weights, reweighting_coefficients
from tasks.base import DownstreamTask, FieldFn, SupportTrace, TaskOutput
from tasks.mep_task import MepConfig, MepTask
from tasks.rollout_task import RolloutConfig, RolloutTask
from tasks.tracking_task import TrackingConfig, TrackingTask
from trainer.mse import MseConfig, train_mse, train_weighted
from trainer.supervisor import (
    CalibrationConfig,
    GroundTruthOracle,
    StoppingConfig,
    TrainRecord,
    train_task_specific,
)
from utils.config import ExperimentConfig
from utils.errors import ConfigError, TotallyLostSupport, TsslError
from utils.rng import STREAM_INITIAL_CONDITION, make_rng

logger = logging.getLogger(__name__)

METHODS = ("mse", "ts", "m1", "m2")
SWEEPS = ("alpha", "width", "reweighting", "rollout_length", "temperature")

# Input / output dimensions per experiment
_DIMENSIONS = {"lorenz": (3, 3), "tracking": (3, 1), "mep": (3, 3), "example2": (1, 1)}


@dataclass
class EvalResult:
    J_A: float
    R_S: float
    R_SN: float
    J: int
    support: SupportTrace
    output: TaskOutput

    def as_row(self) -> Dict:
        return {"J_A": self.J_A, "R_S": self.R_S, "R_SN": self.R_SN, "J": self.J}


@dataclass
class TrainResult:
    method: str
    model: Model
    records: List[TrainRecord] = field(default_factory=list)
    seconds: Optional[float] = None


class ExperimentRunner:
    """Everything one (configuration, seed) pair needs"""

    def __init__(self, config: ExperimentConfig, seed: int):
        config.validate()
        self.config = config
        self.seed = seed
        self.experiment = config.experiment
        self.logger = logging.getLogger(__name__)
        self._task: Optional[DownstreamTask] = None
        self._oracle: Optional[GroundTruthOracle] = None
        self._dataset: Optional[Dataset] = None

    # Ground truth

    def f_star(self) -> FieldFn:
        cfg = self.config
        if self.experiment == "lorenz":
            return partial(
                lorenz_flow_map,
                tau=cfg.get_float("data", "flow_tau", 0.01),
                substeps=cfg.get_int("data", "flow_substeps", 10),
            )
        if self.experiment == "tracking":
            return pendulum_field
        if self.experiment == "mep":
            return negative_energy_gradient
        return partial(example2_field, alpha=cfg.get_float("data", "field_alpha", 1.0))

    def labeler(self) -> Tuple[Labeler, dict]:
        cfg = self.config
        if self.experiment == "lorenz":
            return Labeler.LORENZ_FLOW_MAP, {
                "tau": cfg.get_float("data", "flow_tau", 0.01),
                "substeps": cfg.get_int("data", "flow_substeps", 10),
            }
        if self.experiment == "tracking":
            return Labeler.PENDULUM_ACCEL, {}
        if self.experiment == "mep":
            return Labeler.NEG_ENERGY_GRAD, {}
        return Labeler.EXAMPLE2, {"field_alpha": cfg.get_float("data", "field_alpha", 1.0)}

    # Task

    def build_task(self) -> DownstreamTask:
        cfg = self.config
        if self.experiment == "lorenz":
            lower = np.asarray(cfg.get_floats("task", "x0_lower"))
            upper = np.asarray(cfg.get_floats("task", "x0_upper"))
            x0 = make_rng(self.seed, STREAM_INITIAL_CONDITION).uniform(lower, upper)
            return RolloutTask(RolloutConfig(tuple(x0), cfg.get_int("task", "steps"), metric="mean_l2"))
        if self.experiment == "example2":
            return RolloutTask(RolloutConfig(
                (cfg.get_float("task", "x0"),),
                cfg.get_int("task", "steps"),
                euler_step=cfg.get_float("task", "euler_step"),
                metric="l2",
            ))
        if self.experiment == "tracking":
            bound = cfg.get_float("task", "control_bound", 10.0)
            tracking = TrackingConfig(
                horizon=cfg.get_float("task", "horizon", 1.0),
                intervals=cfg.get_int("task", "intervals", 20),
                substeps=cfg.get_int("task", "substeps", 10),
                control_lower=-bound,
                control_upper=bound,
                iterations=cfg.get_int("task", "iterations", 100),
                step_size=cfg.get_float("task", "step_size", 1.0),
                restarts=cfg.get_int("task", "restarts", 3),
            )
            return TrackingTask(tracking, pendulum_field, self.seed)
        mep = MepConfig(
            nodes=cfg.get_int("task", "nodes", 41),
            step=cfg.get_float("task", "step", 1e-2),
            max_iterations=cfg.get_int("task", "max_iterations", 100000),
            tolerance=cfg.get_float("task", "tolerance", 1e-8),
            pin_endpoints=cfg.get_bool("task", "pin_endpoints", True),
        )
        return MepTask(mep, warm_start=cfg.get_bool("task", "warm_start", False))

    @property
    def task(self) -> DownstreamTask:
        if self._task is None:
            self._task = self.build_task()
        return self._task

    @property
    def oracle(self) -> GroundTruthOracle:
        if self._oracle is None:
            self._oracle = GroundTruthOracle.for_task(self.build_task(), self.f_star())
        return self._oracle

    # Data

    def sampling_spec(self) -> SamplingSpec:
        """
        The configured sampling measure: the experiment's base measure mixed
        with Gaussian perturbations of the true support at weight alpha
        """
        cfg = self.config
        alpha = cfg.get_float("data", "alpha", 0.0)
        clip_lower = tuple(cfg.get_floats("data", "clip_lower", []))
        clip_upper = tuple(cfg.get_floats("data", "clip_upper", []))

        if self.experiment == "mep":
            base = SamplingSpec(
                kind=SamplerKind.LANGEVIN,
                beta_inv=cfg.get_float("data", "beta_inv", 1.0),
                dt=cfg.get_float("data", "langevin_dt", 1e-3),
                burn_in=cfg.get_int("data", "langevin_burn_in", 10000),
                thinning=cfg.get_int("data", "langevin_thinning", 10),
                chains=cfg.get_int("data", "langevin_chains", 64),
            )
        else:
            base = uniform_spec(cfg.get_floats("data", "lower"), cfg.get_floats("data", "upper"))

        if alpha > 0:
            perturbed = perturbed_support_spec(
                self._true_support().points, cfg.get_float("data", "perturbation_variance", 1.0)
            )
            spec = SamplingSpec(
                kind=SamplerKind.MIXTURE, base=base, perturbed=perturbed, alpha=alpha,
                clip_lower=clip_lower, clip_upper=clip_upper,
            )
        elif clip_lower:
            spec = replace(base, clip_lower=clip_lower, clip_upper=clip_upper)
        else:
            spec = base
        return spec

    def _true_support(self) -> SupportTrace:
        support, _ = self.build_task().run(self.f_star())
        return support

    def build_data(self) -> Dataset:
        cfg = self.config
        if cfg.has("data", "path"):
            dataset = read_dataset(cfg.get_str("data", "path"), expected_input_dim=self.dimensions[0])
            self.logger.info(f"Loaded dataset with {dataset.n} samples from {cfg.get_str('data', 'path')}")
            return dataset
        labeler, options = self.labeler()
        data_seed = cfg.get_int("data", "seed", self.seed)
        return build_dataset(self.sampling_spec(), cfg.get_int("data", "n"), labeler, data_seed, **options)

    @property
    def dataset(self) -> Dataset:
        if self._dataset is None:
            self._dataset = self.build_data().with_densities(self.weighting.kernel_rho, self.weighting.accelerated)
        return self._dataset

    # Model and training settings

    @property
    def dimensions(self) -> Tuple[int, int]:
        return _DIMENSIONS[self.experiment]

    @property
    def model_spec(self) -> ModelSpec:
        cfg = self.config
        kind = ModelKind(cfg.get_str("model", "kind"))
        d_in, d_out = self.dimensions
        size = cfg.get_int("model", "degree") if kind == ModelKind.POLYNOMIAL else cfg.get_int("model", "width")
        return ModelSpec(kind, d_in, d_out, size, cfg.get_float("model", "step_scale", 1.0))

    @property
    def weighting(self) -> WeightingConfig:
        cfg = self.config
        factor = cfg.get_float("weighting", "truncation_radius_factor", 6.0)

        def kernel(role: str) -> KernelSpec:
            return KernelSpec(cfg.get_float("weighting", f"variance_{role}"), factor)

        return WeightingConfig(
            M=cfg.get_float("weighting", "M", 10.0),
            omega0=cfg.get_float("weighting", "omega0", 0.5),
            kernel_rho=kernel("rho"),
            kernel_nu=kernel("nu"),
            kernel_l=kernel("l"),
            kernel_m=kernel("m"),
            accelerated=cfg.get_bool("weighting", "accelerated", True),
        )

    @property
    def policy(self) -> ControllerPolicy:
        cfg = self.config
        return ControllerPolicy(
            sgd_lr=cfg.get_float("controller", "sgd_lr"),
            adam_lr_ratio=cfg.get_float("controller", "adam_lr_ratio"),
            epochs_min=cfg.get_int("controller", "epochs_min"),
            epochs_max=cfg.get_int("controller", "epochs_max"),
            epoch_growth=cfg.get_float("controller", "epoch_growth"),
            m_change_threshold=cfg.get_float("controller", "m_change_threshold"),
            batch_size=cfg.get_int("controller", "batch_size", 256),
        )

    @property
    def stopping(self) -> StoppingConfig:
        cfg = self.config
        return StoppingConfig(
            window=cfg.get_int("stopping", "window", 10),
            std_tolerance=cfg.get_float("stopping", "std_tolerance", 1e-6),
            divergence_patience=cfg.get_int("stopping", "divergence_patience", 20),
            max_iterations=cfg.get_int("stopping", "max_iterations", 500),
            density_quantile=cfg.get_float("stopping", "density_quantile", 0.01),
        )

    @property
    def mse_config(self) -> MseConfig:
        cfg = self.config
        return MseConfig(
            learning_rate=cfg.get_float("mse", "learning_rate", 1e-3),
            max_epochs=cfg.get_int("mse", "max_epochs", 500),
            patience=cfg.get_int("mse", "patience", 20),
            tolerance=cfg.get_float("mse", "tolerance", 1e-6),
            batch_size=cfg.get_int("mse", "batch_size", 256),
        )

    @property
    def calibration(self) -> Optional[CalibrationConfig]:
        cfg = self.config
        if not cfg.get_bool("weighting", "calibrate_variance", False):
            return None
        return CalibrationConfig(
            tuple(cfg.get_floats("weighting", "calibration_candidates")),
            cfg.get_int("weighting", "calibration_neighbors", 200),
        )

    @property
    def record_timings(self) -> bool:
        return self.config.get_bool("output", "record_timings", False)

    # Operations

    def train(self, method: str, mse_params: Optional[ModelParams] = None) -> TrainResult:
        """
        Train a model with one of the methods mse, ts, m1, m2

        ts, m1 and m2 start from the MSE fit, which may be passed in to share
        it between methods.
        """
        if method not in METHODS:
            raise ConfigError(f"Unknown training method {method!r}; expected one of {', '.join(METHODS)}")
        started = time.perf_counter()
        spec, dataset = self.model_spec, self.dataset
        if mse_params is None:
            mse_params = train_mse(spec, dataset, self.mse_config, self.seed)

        records: List[TrainRecord] = []
        if method == "mse":
            params = mse_params
        elif method == "ts":
            params, records = train_task_specific(
                spec, mse_params, dataset, self.task, self.weighting, self.policy, self.stopping, self.seed,
                oracle=self.oracle, calibration=self.calibration, record_timings=self.record_timings,
            )
        else:
            weights = baseline_weights(dataset, Model(spec, mse_params), BaselineScheme(method))
            params = train_weighted(spec, dataset, weights, self.mse_config, self.seed, init=mse_params)

        seconds = time.perf_counter() - started if self.record_timings else None
        self.logger.info(f"Trained {self.experiment} model with method {method} (seed {self.seed})")
        return TrainResult(method, Model(spec, params), records, seconds)

    def evaluate_field(self, f: FieldFn, model: Optional[Model] = None) -> EvalResult:
        """
        Run the task with f and with the ground truth

        J_A compares the two outputs; R_S is the maximum squared error of f on
        its own support; R_SN is the data estimate of it when a model is given.
        """
        support, output = self.build_task().run(f)
        oracle = self.oracle
        diff = np.asarray(f(support.points)).reshape(len(support), -1) - np.asarray(
            oracle.field(support.points)
        ).reshape(len(support), -1)
        r_s = float(np.max(np.sum(diff * diff, axis=1)))
        r_sn = float("nan")
        if model is not None:
            try:
                r_sn = reweighting_coefficients(self.dataset, model, support, self.weighting).metric_RSN
            except TotallyLostSupport as e:
                self.logger.warning(f"R_SN unavailable: {e}")
        return EvalResult(oracle.output_error(output), r_s, r_sn, support.J, support, output)

    def evaluate(self, model: Model) -> EvalResult:
        return self.evaluate_field(model, model)


def run_cell(config: ExperimentConfig, sweep: str, value: str, seed: int, methods: Tuple[str, ...]) -> List[Dict]:
    """
    One ablation cell: the MSE baseline and the compared methods for a seed

    Failures are recorded as error rows.
    """
    rows = []
    base = {"experiment": config.experiment, "sweep": sweep, "value": value, "seed": seed}
    try:
        runner = ExperimentRunner(config, seed)
        mse_params = None
        for method in ("mse",) + tuple(m for m in methods if m != "mse"):
            try:
                result = runner.train(method, mse_params)
                if method == "mse":
                    mse_params = result.model.params
                evaluation = runner.evaluate(result.model)
                rows.append({
                    **base, "method": method, "J_A": evaluation.J_A, "R_S": evaluation.R_S,
                    "R_SN": evaluation.R_SN, "iters": len(result.records), "seconds": result.seconds,
                    "status": "ok", "message": "",
                })
            except TsslError as e:
                logger.error(f"Cell {sweep}={value} seed {seed} method {method} failed: {e}")
                rows.append({**base, "method": method, "status": "error", "message": str(e)})
                if method == "mse":
                    break
    except (TsslError, ValueError) as e:
        logger.error(f"Cell {sweep}={value} seed {seed} failed: {e}")
        rows.append({**base, "method": "", "status": "error", "message": str(e)})
    return rows


def ablation_cells(config: ExperimentConfig, sweep: str) -> List[Tuple[ExperimentConfig, str, Tuple[str, ...]]]:
    """(configuration, value label, methods) for every value of a sweep"""
    if sweep not in SWEEPS:
        raise ConfigError(f"Unknown sweep {sweep!r}; expected one of {', '.join(SWEEPS)}")
    width_key = "degree" if config.get_str("model", "kind") == ModelKind.POLYNOMIAL.value else "width"
    if sweep == "alpha":
        return [
            (config.with_overrides([f"data.alpha={value!r}"]), repr(value), ("ts",))
            for value in config.get_floats("ablation", "alpha_values")
        ]
    if sweep == "width":
        return [
            (config.with_overrides([f"model.{width_key}={value}"]), str(value), ("ts",))
            for value in config.get_ints("ablation", "width_values")
        ]
    if sweep == "rollout_length":
        if not config.has("task", "steps"):
            raise ConfigError(f"The {config.experiment} experiment has no rollout length to sweep")
        return [
            (
                config.with_overrides([f"task.steps={steps}", f"model.{width_key}={width}"]),
                f"steps={steps} {width_key}={width}",
                ("ts",),
            )
            for width in config.get_ints("ablation", "rollout_widths")
            for steps in config.get_ints("ablation", "rollout_steps")
        ]
    if sweep == "temperature":
        if config.experiment != "mep":
            raise ConfigError("Only the mep experiment samples at a temperature")
        return [
            (config.with_overrides([f"data.beta_inv={value!r}"]), repr(value), ("ts",))
            for value in config.get_floats("ablation", "temperature_values")
        ]

    methods = tuple(config.get_str("ablation", "reweighting_methods", "ts, m1, m2").replace(" ", "").split(","))
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"Unknown methods in [ablation] reweighting_methods: {', '.join(unknown)}")
    if config.has("ablation", "reweighting_alpha"):
        config = config.with_overrides([f"data.alpha={config.get_float('ablation', 'reweighting_alpha')!r}"])
    return [(config, "all", methods)]


def run_ablation(config: ExperimentConfig, sweep: str, threads: int = 1) -> List[Dict]:
    """
    Run every (sweep value, seed) cell in a worker pool

    Returns:
        list: Result rows sorted by value, seed and method
    """
    config.validate()
    cells = ablation_cells(config, sweep)
    jobs = [(cell_config, value, seed, methods) for cell_config, value, methods in cells for seed in config.seeds]
    logger.info(f"Running {len(jobs)} ablation cells for sweep '{sweep}' on {threads} threads")

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = [pool.submit(run_cell, c, sweep, value, seed, methods) for c, value, seed, methods in jobs]
        rows = [row for future in futures for row in future.result()]

    order = {value: i for i, (_, value, _) in enumerate(cells)}
    rows.sort(key=lambda r: (order[r["value"]], r["seed"], METHODS.index(r["method"]) if r["method"] in METHODS else -1))
    return rows


def default_output(config: ExperimentConfig, out: Optional[str]) -> Path:
    return Path(out) if out else config.output_dir
