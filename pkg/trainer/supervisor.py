"""
Task-specific training loop

Each iteration runs the downstream task with the current model, reweights
the training samples toward its support, adapts the optimizer and trains on
the reweighted risk. The loop is a LangGraph state graph:

    compute_support -> reweight -> update_optimizer -> train_reweighted
          ^                                                   |
          +------------------- check_stopping <---------------+
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple, TypedDict

import numpy as np
from langgraph.graph import END, StateGraph

from learning.kernels import KernelSpec, calibrate_error_variance, estimate_density
from learning.models import Model, ModelParams, ModelSpec
from learning.optim import (
    ControllerAction,
    ControllerPolicy,
    OptimizerState,
    controller_update,
    initial_optimizer,
    run_reweighted_training,
)
from learning.weighting import WeightingConfig, WeightState, relative_l1_change, reweighting_coefficients
from tasks.base import DownstreamTask, FieldFn, SupportTrace, TaskOutput
from utils.errors import InputError, TotallyLostSupport, TsslError

logger = logging.getLogger(__name__)

# Seed stride between training iterations
_ITERATION_SEED_STRIDE = 1_000_003


@dataclass(frozen=True)
class StoppingConfig:
    window: int = 10
    std_tolerance: float = 1e-6
    divergence_patience: int = 20
    max_iterations: int = 500
    density_quantile: float = 0.01

    def __post_init__(self):
        if self.window < 2 or self.divergence_patience < 1 or self.max_iterations < 1:
            raise InputError("Invalid stopping configuration")
        if not 0.0 <= self.density_quantile <= 1.0:
            raise InputError("density_quantile must lie in [0, 1]")


@dataclass(frozen=True)
class CalibrationConfig:
    candidates: Tuple[float, ...]
    neighbors: int = 200


@dataclass(frozen=True)
class TrainRecord:
    iteration: int
    R_N: float
    R_SN: float
    R_S_true: Optional[float]
    J_A_true: Optional[float]
    optimizer: str
    learning_rate: float
    epochs: int
    J: int
    seconds: Optional[float] = None


@dataclass(frozen=True, eq=False)
class Checkpoint:
    params: ModelParams
    R_SN: float
    iteration: int


@dataclass(frozen=True, eq=False)
class DensityDiagnostic:
    densities: np.ndarray
    threshold: float
    flagged: Tuple[int, ...]
    warnings: List[str] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class GroundTruthOracle:
    """True field and the task output obtained with it"""

    field: FieldFn
    reference: TaskOutput

    @classmethod
    def for_task(cls, task: DownstreamTask, f_star: FieldFn) -> "GroundTruthOracle":
        _, reference = task.run(f_star)
        return cls(f_star, reference)

    def risk(self, model: Model, support: SupportTrace) -> float:
        """Maximum squared prediction error over the support"""
        diff = model(support.points) - np.asarray(self.field(support.points)).reshape(len(support), -1)
        return float(np.max(np.sum(diff * diff, axis=1)))

    def output_error(self, output: TaskOutput) -> float:
        return output.distance(self.reference)


def support_density_diagnostic(dataset, support: SupportTrace, kernel_rho: KernelSpec, quantile: float = 0.01) -> DensityDiagnostic:
    """
    Flag support points whose sampling density is unusually low

    A support point is flagged when rho_N there falls below the given
    quantile of the training-point densities.
    """
    if dataset.densities is not None and dataset.density_spec == kernel_rho:
        training = dataset.densities
    else:
        training = estimate_density(dataset.inputs, dataset.inputs, kernel_rho).values
    threshold = float(np.quantile(training, quantile))
    densities = estimate_density(dataset.inputs, support.points, kernel_rho).values
    flagged = tuple(int(j) for j in np.flatnonzero(densities < threshold * (1.0 - 1e-9)))
    warnings = [
        f"Support point {j} has sampling density {densities[j]:.3e} below the "
        f"{quantile:g} quantile {threshold:.3e}"
        for j in flagged
    ]
    return DensityDiagnostic(densities, threshold, flagged, warnings)


class TrainingState(TypedDict):
    """State object for the training graph"""
    iteration: int
    params: ModelParams
    previous_params: Optional[ModelParams]
    weighting: WeightingConfig
    support: Optional[SupportTrace]
    output: Optional[TaskOutput]
    weight_state: Optional[WeightState]
    coefficients: Optional[np.ndarray]
    previous_coefficients: Optional[np.ndarray]
    opt: Optional[OptimizerState]
    previous_RSN: Optional[float]
    lost_support: bool
    increases: int
    history: List[float]
    records: List[TrainRecord]
    best: Optional[Checkpoint]
    started: float
    stop_reason: str
    errors: List[str]


class TaskSpecificTrainer:
    """Supervisor of the reweight-and-train iteration"""

    def __init__(
        self,
        spec: ModelSpec,
        dataset,
        task: DownstreamTask,
        weighting: WeightingConfig,
        policy: ControllerPolicy,
        stopping: StoppingConfig,
        seed: int,
        oracle: Optional[GroundTruthOracle] = None,
        calibration: Optional[CalibrationConfig] = None,
        record_timings: bool = False,
    ):
        self.spec = spec
        self.dataset = dataset.with_densities(weighting.kernel_rho, weighting.accelerated)
        self.task = task
        self.weighting = weighting
        self.policy = policy
        self.stopping = stopping
        self.seed = seed
        self.oracle = oracle
        self.calibration = calibration
        self.record_timings = record_timings

        self.logger = logging.getLogger(__name__)

        # Create the training graph
        self.workflow = self._create_workflow()

    def _create_workflow(self):
        """Create the LangGraph training loop"""

        def compute_support(state: Dict) -> Dict:
            """Run the downstream task with the current model"""
            state["started"] = time.perf_counter()
            model = Model(self.spec, state["params"])
            try:
                support, output = self.task.run(model)
            except TsslError as e:
                if state["iteration"] == 0:
                    raise
                self.logger.warning(f"Iteration {state['iteration']}: task failed ({e}); restoring")
                state["errors"].append(f"Iteration {state['iteration']}: {e}")
                state["lost_support"] = True
                return state

            state["support"], state["output"] = support, output
            state["lost_support"] = False
            diagnostic = support_density_diagnostic(
                self.dataset, support, state["weighting"].kernel_rho, self.stopping.density_quantile
            )
            if diagnostic.flagged:
                self.logger.warning(
                    f"Iteration {state['iteration']}: {len(diagnostic.flagged)} of {support.J} "
                    "support points lie in low-density regions of the training data"
                )
                for message in diagnostic.warnings:
                    self.logger.debug(message)

            if state["iteration"] == 0 and self.calibration is not None:
                kernel_l = calibrate_error_variance(
                    self.dataset,
                    model,
                    support,
                    self.calibration.candidates,
                    min(self.calibration.neighbors, self.dataset.n),
                    state["weighting"].kernel_l.truncation_radius_factor,
                    state["weighting"].accelerated,
                )
                state["weighting"] = state["weighting"].with_error_kernel(kernel_l)
            return state

        def reweight(state: Dict) -> Dict:
            """Compute the reweighting coefficients for the current support"""
            if state["lost_support"]:
                return state
            model = Model(self.spec, state["params"])
            try:
                weight_state = reweighting_coefficients(self.dataset, model, state["support"], state["weighting"])
            except TotallyLostSupport as e:
                if state["iteration"] == 0:
                    self.logger.error("The initial model's support lies entirely outside the training data")
                    raise TotallyLostSupport(
                        f"Initial model inadequate: {e}. Improve the pretrained model or the sampling measure."
                    ) from e
                self.logger.warning(f"Iteration {state['iteration']}: support lost; restoring")
                state["errors"].append(f"Iteration {state['iteration']}: {e}")
                state["lost_support"] = True
                return state
            state["weight_state"] = weight_state
            state["coefficients"] = weight_state.sample_coefficients
            return state

        def update_optimizer(state: Dict) -> Dict:
            """Adapt the optimizer, restoring the previous state when asked to"""
            if state["lost_support"]:
                opt = state["opt"]
                epochs = self.policy.clamp(opt.epochs_per_iteration // 2)
                state["opt"] = replace(
                    OptimizerState.sgd(self.policy.sgd_lr, epochs, opt.parameter_count, opt.batch_size), restored=True
                )
                self._restore(state)
                return state

            weight_state = state["weight_state"]
            self._record(state, weight_state)
            if state["opt"] is None:
                state["opt"] = initial_optimizer(self.policy, self.spec.parameter_count)
                state["previous_RSN"] = weight_state.metric_RSN
                return state

            change = relative_l1_change(state["previous_coefficients"], state["coefficients"])
            opt, action = controller_update(
                self.policy,
                state["opt"],
                state["previous_RSN"],
                weight_state.metric_RSN,
                change,
                state["previous_params"] is not None,
            )
            state["opt"] = opt
            if action == ControllerAction.RESTORE_AND_RESET_SGD:
                self._restore(state)
            else:
                state["previous_RSN"] = weight_state.metric_RSN
            return state

        def train_reweighted(state: Dict) -> Dict:
            """Train on the reweighted empirical risk with fixed coefficients"""
            state["previous_params"] = state["params"]
            state["previous_coefficients"] = state["coefficients"]
            params, opt, loss = run_reweighted_training(
                self.spec,
                state["params"],
                self.dataset,
                state["coefficients"],
                state["opt"],
                self.seed * _ITERATION_SEED_STRIDE + state["iteration"] + 1,
            )
            self.logger.info(
                f"Iteration {state['iteration']}: {state['opt'].describe()}, reweighted loss {loss:.6e}"
            )
            state["params"], state["opt"] = params, opt
            return state

        def check_stopping(state: Dict) -> Dict:
            """Apply the stopping rules to the R_SN history"""
            history = state["history"]
            window = self.stopping.window
            tail = np.asarray(history[-window:])
            if len(history) >= window and np.all(np.isfinite(tail)) and np.std(tail) < self.stopping.std_tolerance:
                state["stop_reason"] = "converged"
            elif state["increases"] >= self.stopping.divergence_patience:
                state["stop_reason"] = "diverging"
            elif state["iteration"] + 1 >= self.stopping.max_iterations:
                state["stop_reason"] = "max_iterations"
            else:
                state["iteration"] += 1
            return state

        def should_continue(state: Dict) -> str:
            return "stop" if state["stop_reason"] else "continue"

        workflow = StateGraph(TrainingState)

        workflow.add_node("compute_support", compute_support)
        workflow.add_node("reweight", reweight)
        workflow.add_node("update_optimizer", update_optimizer)
        workflow.add_node("train_reweighted", train_reweighted)
        workflow.add_node("check_stopping", check_stopping)

        workflow.set_entry_point("compute_support")

        workflow.add_edge("compute_support", "reweight")
        workflow.add_edge("reweight", "update_optimizer")
        workflow.add_edge("update_optimizer", "train_reweighted")
        workflow.add_edge("train_reweighted", "check_stopping")
        workflow.add_conditional_edges(
            "check_stopping", should_continue, {"continue": "compute_support", "stop": END}
        )

        return workflow.compile()

    def _restore(self, state: Dict):
        """Go back to the parameters and coefficients of the previous iteration"""
        if state["previous_params"] is None:
            raise TotallyLostSupport("No previous state to restore")
        self.logger.warning(f"Iteration {state['iteration']}: restoring the previous parameters")
        state["params"] = state["previous_params"]
        state["coefficients"] = state["previous_coefficients"]

    def _record(self, state: Dict, weight_state: WeightState):
        """Append the training record and update the best checkpoint"""
        iteration = state["iteration"]
        r_sn = weight_state.metric_RSN
        r_s_true = j_a_true = None
        if self.oracle is not None:
            model = Model(self.spec, state["params"])
            r_s_true = self.oracle.risk(model, state["support"])
            j_a_true = self.oracle.output_error(state["output"])

        opt = state["opt"] or initial_optimizer(self.policy, self.spec.parameter_count)
        seconds = time.perf_counter() - state["started"] if self.record_timings else None
        state["records"].append(TrainRecord(
            iteration, weight_state.risk_RN, r_sn, r_s_true, j_a_true,
            opt.kind.value, opt.learning_rate, opt.epochs_per_iteration, weight_state.support_length, seconds,
        ))

        if state["history"] and (r_sn > state["history"][-1] or np.isinf(r_sn)):
            state["increases"] += 1
        else:
            state["increases"] = 0
        state["history"].append(r_sn)

        best = state["best"]
        if best is None or r_sn < best.R_SN:
            state["best"] = Checkpoint(state["params"], r_sn, iteration)
        self.logger.info(f"Iteration {iteration}: R_N={weight_state.risk_RN:.6e} R_SN={r_sn:.6e} J={weight_state.support_length}")

    def train(self, init_params: ModelParams) -> Tuple[ModelParams, List[TrainRecord]]:
        """
        Run task-specific training from the given parameters

        Args:
            init_params (ModelParams): Starting point, usually the MSE fit

        Returns:
            tuple: Parameters with the smallest R_SN and the training records
        """
        initial_state = {
            "iteration": 0,
            "params": init_params,
            "previous_params": None,
            "weighting": self.weighting,
            "support": None,
            "output": None,
            "weight_state": None,
            "coefficients": None,
            "previous_coefficients": None,
            "opt": None,
            "previous_RSN": None,
            "lost_support": False,
            "increases": 0,
            "history": [],
            "records": [],
            "best": None,
            "started": 0.0,
            "stop_reason": "",
            "errors": [],
        }
        self.logger.info(f"Starting task-specific training on task '{self.task.name}'")
        final_state = self.workflow.invoke(
            initial_state, {"recursion_limit": 5 * self.stopping.max_iterations + 10}
        )
        best = final_state["best"]
        self.logger.info(
            f"Training stopped ({final_state['stop_reason']}) after {final_state['iteration'] + 1} "
            f"iterations; best R_SN {best.R_SN:.6e} at iteration {best.iteration}"
        )
        return best.params, final_state["records"]


def train_task_specific(
    spec: ModelSpec,
    init_params: ModelParams,
    dataset,
    task: DownstreamTask,
    weighting: WeightingConfig,
    policy: ControllerPolicy,
    stopping: StoppingConfig,
    seed: int,
    oracle: Optional[GroundTruthOracle] = None,
    calibration: Optional[CalibrationConfig] = None,
    record_timings: bool = False,
) -> Tuple[ModelParams, List[TrainRecord]]:
    """Run the task-specific training loop; see TaskSpecificTrainer"""
    trainer = TaskSpecificTrainer(
        spec, dataset, task, weighting, policy, stopping, seed, oracle, calibration, record_timings
    )
    return trainer.train(init_params)
