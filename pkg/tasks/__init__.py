from tasks.base import DownstreamTask, SupportTrace, TaskOutput, export_support_csv
from tasks.bounds import lipschitz_bound_check
from tasks.mep_task import MepConfig, MepTask, string_method_run
from tasks.rollout_task import RolloutConfig, RolloutTask, rollout_run
from tasks.tracking_task import TrackingConfig, TrackingTask, tracking_optimize, tracking_simulate

__all__ = [
    "DownstreamTask",
    "MepConfig",
    "MepTask",
    "RolloutConfig",
    "RolloutTask",
    "SupportTrace",
    "TaskOutput",
    "TrackingConfig",
    "TrackingTask",
    "export_support_csv",
    "lipschitz_bound_check",
    "rollout_run",
    "string_method_run",
    "tracking_optimize",
    "tracking_simulate",
]
