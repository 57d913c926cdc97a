"""
CSV outputs: training logs, evaluation rows, ablation tables and their
improvement-ratio summaries
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import FormatError

TRAINING_LOG_COLUMNS = ["iter", "R_N", "R_SN", "R_S_true", "J_A_true", "opt", "lr", "epochs", "J", "seconds"]
EVAL_COLUMNS = ["experiment", "method", "seed", "J_A", "R_S", "R_SN", "J"]
ABLATION_COLUMNS = [
    "experiment", "sweep", "value", "seed", "method", "J_A", "R_S", "R_SN", "iters", "seconds", "status", "message",
]
SUMMARY_COLUMNS = [
    "experiment", "sweep", "value", "method", "count", "median_ratio", "q25_ratio", "q75_ratio", "improved",
    "RS_count", "median_RS_ratio", "q25_RS_ratio", "q75_RS_ratio", "RS_improved",
]


def format_value(value) -> str:
    """Render a cell: repr for floats, empty for missing or NaN values"""
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return "" if math.isnan(value) else repr(float(value))
    return str(value)


def write_rows(path, columns: Sequence[str], rows: Iterable[Dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row.get(column)) for column in columns])
    return path


def read_rows(path) -> List[Dict[str, str]]:
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


def training_log_rows(records) -> List[Dict]:
    return [
        {
            "iter": r.iteration,
            "R_N": r.R_N,
            "R_SN": r.R_SN,
            "R_S_true": r.R_S_true,
            "J_A_true": r.J_A_true,
            "opt": r.optimizer,
            "lr": r.learning_rate,
            "epochs": r.epochs,
            "J": r.J,
            "seconds": r.seconds,
        }
        for r in records
    ]


def write_training_log(records, path) -> Path:
    return write_rows(path, TRAINING_LOG_COLUMNS, training_log_rows(records))


def _parse_float(text: str) -> Optional[float]:
    if text is None or text == "":
        return None
    try:
        return float(text)
    except ValueError:
        return None


@dataclass(frozen=True)
class RatioSummary:
    experiment: str
    sweep: str
    value: str
    method: str
    count: int
    median_ratio: float
    q25_ratio: float
    q75_ratio: float
    improved: int
    RS_count: int = 0
    median_RS_ratio: float = math.nan
    q25_RS_ratio: float = math.nan
    q75_RS_ratio: float = math.nan
    RS_improved: int = 0

    def as_row(self) -> Dict:
        return dict(self.__dict__)


def _ratio(value: float, reference: float) -> float:
    if reference > 0:
        return value / reference
    return 1.0 if value == 0 else math.inf


def _quartiles(values: List[float]) -> Tuple[float, float, float]:
    if not values:
        return math.nan, math.nan, math.nan
    q25, median, q75 = np.quantile(np.asarray(values), [0.25, 0.5, 0.75])
    return float(median), float(q25), float(q75)


def summarize_ablation(rows: Iterable[Dict], baseline: str = "mse") -> List[RatioSummary]:
    """
    Improvement ratios against the baseline per sweep value

    Both J_A(method) / J_A(baseline) and R_S(method) / R_S(baseline) are
    summarized. Rows with an error status or a missing J_A are skipped; a seed
    contributes when both its baseline and method rows are present, and to the
    R_S columns only when both rows carry R_S.
    """
    table: Dict[tuple, Dict[str, Tuple[float, Optional[float]]]] = {}
    for row in rows:
        if row.get("status", "ok") not in ("ok", ""):
            continue
        j_a = _parse_float(str(row.get("J_A", "")))
        if j_a is None:
            continue
        r_s = _parse_float(str(row.get("R_S", "")))
        key = (str(row["experiment"]), str(row["sweep"]), str(row["value"]), str(row["seed"]))
        table.setdefault(key, {})[str(row["method"])] = (j_a, r_s)

    ratios: Dict[tuple, Tuple[List[float], List[float]]] = {}
    for (experiment, sweep, value, _), methods in sorted(table.items()):
        reference = methods.get(baseline)
        if reference is None:
            continue
        for method, (j_a, r_s) in sorted(methods.items()):
            if method == baseline:
                continue
            j_ratios, s_ratios = ratios.setdefault((experiment, sweep, value, method), ([], []))
            j_ratios.append(_ratio(j_a, reference[0]))
            if r_s is not None and reference[1] is not None:
                s_ratios.append(_ratio(r_s, reference[1]))

    summaries = []
    for (experiment, sweep, value, method), (j_ratios, s_ratios) in sorted(ratios.items()):
        median, q25, q75 = _quartiles(j_ratios)
        s_median, s_q25, s_q75 = _quartiles(s_ratios)
        summaries.append(RatioSummary(
            experiment, sweep, value, method, len(j_ratios), median, q25, q75,
            sum(r < 1.0 for r in j_ratios),
            len(s_ratios), s_median, s_q25, s_q75, sum(r < 1.0 for r in s_ratios),
        ))
    return summaries


def write_summary(summaries: Iterable[RatioSummary], path) -> Path:
    return write_rows(path, SUMMARY_COLUMNS, [s.as_row() for s in summaries])


def load_ablation(path) -> List[Dict[str, str]]:
    rows = read_rows(path)
    if rows and not set(["experiment", "sweep", "value", "seed", "method", "J_A"]).issubset(rows[0]):
        raise FormatError(f"{path}: not an ablation table")
    return rows
