from trainer.experiment import ExperimentRunner, run_ablation
from trainer.mse import MseConfig, train_mse, train_weighted
from trainer.supervisor import StoppingConfig, TaskSpecificTrainer, TrainRecord, train_task_specific

__all__ = [
    "ExperimentRunner",
    "MseConfig",
    "StoppingConfig",
    "TaskSpecificTrainer",
    "TrainRecord",
    "run_ablation",
    "train_mse",
    "train_task_specific",
    "train_weighted",
]
