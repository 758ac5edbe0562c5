"""
Report writers
Structured JSON reports plus flat CSV plot-data tables. Reports carry no
timestamps so identical runs produce identical files
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from crossval import CvReport
from infer import ConfidenceLevel, Prediction, confidence_interval

logger = logging.getLogger(__name__)


def _plain(value: Any) -> Any:
    """JSON-safe view of numpy values"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_json(path, payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(json.dumps(_plain(payload), indent=2, sort_keys=True))
        f.write('\n')
    logger.info(f"Wrote report {path}")
    return path


def write_table(path, table: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format='%.12g')
    logger.info(f"Wrote table {path} ({len(table)} rows)")
    return path


def prediction_table(
    points: np.ndarray,
    labels: Sequence[str],
    predictions: List[Prediction],
    level: ConfidenceLevel = ConfidenceLevel.P95,
    truth: Optional[np.ndarray] = None
) -> pd.DataFrame:
    """One row per point: conditions, mean, sd, interval bounds and the mean decomposition"""
    points = np.atleast_2d(points)
    table = pd.DataFrame({label: points[:, j] for j, label in enumerate(labels)})
    if truth is not None:
        table['truth'] = truth
    intervals = [confidence_interval(p, level) for p in predictions]
    table['mean'] = [p.mean for p in predictions]
    table['sd'] = [p.std for p in predictions]
    table['lo'] = [lo for lo, _ in intervals]
    table['hi'] = [hi for _, hi in intervals]
    table['calibrated_model'] = [p.calibrated_model_term for p in predictions]
    table['model_error'] = [p.inferred_model_error_term for p in predictions]
    table['nominal'] = [p.nominal for p in predictions]
    table['mean_unshifted'] = [p.mean_unshifted for p in predictions]
    return table


def cv_table(report: CvReport, points: np.ndarray, labels: Sequence[str], y: np.ndarray) -> pd.DataFrame:
    """Held-out predictions of a CV run by original row"""
    n = report.n
    fold = np.empty(n, dtype=int)
    mean = np.empty(n)
    sd = np.empty(n)
    baseline = np.empty(n)
    covered = np.empty(n, dtype=bool)
    for result in report.per_fold:
        rows = result.test_rows
        fold[rows] = result.fold
        mean[rows] = result.means
        sd[rows] = np.sqrt(result.interval_variances)
        baseline[rows] = result.baseline_residuals + y[rows]
        covered[rows] = result.covered

    points = np.atleast_2d(points)
    table = pd.DataFrame({label: points[:, j] for j, label in enumerate(labels)})
    table['fold'] = fold
    table['observed'] = y
    table['mean'] = mean
    table['sd'] = sd
    table['calibrated_model'] = baseline
    table['covered'] = covered.astype(int)
    return table
