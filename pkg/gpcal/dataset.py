"""
Experimental dataset files
Header-rowed, delimiter-separated numeric text: condition columns, one output
column, optional precomputed H columns and an optional nominal-output column
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import SchemaConfig
from exceptions import DataError
from gpmodel import Design, LinearModel, Observations, PolynomialBasis

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Dataset:
    condition_names: Tuple[str, ...]
    conditions: np.ndarray
    output_name: str
    y: np.ndarray
    h_names: Tuple[str, ...] = ()
    H: Optional[np.ndarray] = None
    nominal_name: Optional[str] = None
    nominal: Optional[np.ndarray] = None

    def __post_init__(self):
        conditions = np.atleast_2d(np.asarray(self.conditions, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        n = y.shape[0]
        if n < 1:
            raise DataError("Empty dataset")
        if conditions.shape != (n, len(self.condition_names)) or len(self.condition_names) < 1:
            raise DataError(f"Conditions must be ({n}, {len(self.condition_names)}), got {conditions.shape}")
        if not (np.all(np.isfinite(conditions)) and np.all(np.isfinite(y))):
            raise DataError("Dataset has non-finite values")
        object.__setattr__(self, 'conditions', conditions)
        object.__setattr__(self, 'y', y)

        if self.H is not None:
            H = np.asarray(self.H, dtype=float).reshape(n, -1)
            if H.shape[1] != len(self.h_names):
                raise DataError(f"H has {H.shape[1]} columns, expected {len(self.h_names)}")
            object.__setattr__(self, 'H', H)
        if self.nominal is not None:
            object.__setattr__(self, 'nominal', np.asarray(self.nominal, dtype=float).reshape(n))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.conditions.shape[1]

    @property
    def columns(self) -> List[str]:
        names = list(self.condition_names) + [self.output_name] + list(self.h_names)
        return names + ([self.nominal_name] if self.nominal_name is not None else [])

    def design(self, bounds=None, drop_constant: bool = True) -> Design:
        return Design.from_points(self.conditions, labels=self.condition_names, bounds=bounds,
                                  drop_constant=drop_constant)

    def observations(self, linmodel: Optional[LinearModel] = None) -> Observations:
        """
        Observations shifted by the nominal outputs f(x_i, beta_nom).

        Uses the linear model's nominal outputs when one is given, else the
        nominal column (no shift without either).
        """
        nominal = self.nominal if linmodel is None else linmodel.nominal_outputs
        if nominal is None:
            return Observations(self.y)
        return Observations(self.y - nominal)

    def linear_model(self, design: Design, beta_nominal=None) -> LinearModel:
        """Tabulated H when present, else the degree-1 polynomial basis (1, x)"""
        if self.H is not None:
            return LinearModel(self.H, None, beta_nominal, self.nominal).with_linear_nominal()
        linmodel = LinearModel.from_basis(PolynomialBasis(1), design, beta_nominal)
        if self.nominal is not None:
            return replace(linmodel, nominal_outputs=self.nominal)
        return linmodel


def _parse_cell(value, row: int, column: str) -> float:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        raise DataError(f"Ragged row {row}: no value for column '{column}'")
    try:
        number = float(value)
    except ValueError as e:
        raise DataError(f"Non-numeric cell at row {row}, column '{column}': '{value}'") from e
    if not np.isfinite(number):
        raise DataError(f"Non-finite cell at row {row}, column '{column}': '{value}'")
    return number


def _column(frame: pd.DataFrame, name: str) -> np.ndarray:
    # rows are 1-based data rows (the header is not counted)
    return np.array([_parse_cell(value, i + 1, name) for i, value in enumerate(frame[name].tolist())])


def _read_frame(path, delimiter: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, sep=delimiter, dtype=str, na_filter=False, skipinitialspace=True)
    except FileNotFoundError as e:
        raise DataError(f"Data file not found: {path}") from e
    except pd.errors.EmptyDataError as e:
        raise DataError(f"Empty dataset: {path}") from e
    except pd.errors.ParserError as e:
        raise DataError(f"Ragged rows in {path}: {e}") from e

    frame.columns = [str(c).strip() for c in frame.columns]
    if frame.shape[0] == 0:
        raise DataError(f"Empty dataset: {path} has a header but no rows")
    return frame


def load_dataset(path, schema: Optional[SchemaConfig] = None) -> Dataset:
    """
    Read a dataset file.

    Args:
        path: Delimiter-separated text file with a header row
        schema: Column roles; all non-output columns are conditions when
            schema.conditions is empty

    Returns:
        Dataset
    """
    schema = schema or SchemaConfig()
    frame = _read_frame(path, schema.delimiter)

    reserved = [schema.output] + list(schema.h_columns) + ([schema.nominal] if schema.nominal else [])
    conditions = list(schema.conditions) or [c for c in frame.columns if c not in reserved]
    if not conditions:
        raise DataError(f"No condition column in {path}")

    missing = [c for c in conditions + reserved if c not in frame.columns]
    if missing:
        raise DataError(f"Missing column(s) in {path}: {', '.join(missing)}")

    dataset = Dataset(
        condition_names=tuple(conditions),
        conditions=np.column_stack([_column(frame, c) for c in conditions]),
        output_name=schema.output,
        y=_column(frame, schema.output),
        h_names=tuple(schema.h_columns),
        H=np.column_stack([_column(frame, c) for c in schema.h_columns]) if schema.h_columns else None,
        nominal_name=schema.nominal,
        nominal=_column(frame, schema.nominal) if schema.nominal else None
    )
    logger.info(f"✓ Loaded dataset {path}: n={dataset.n}, d={dataset.d}, H columns={len(dataset.h_names)}")
    return dataset


def load_points(
    path,
    columns: Sequence[str],
    h_columns: Sequence[str] = (),
    nominal: Optional[str] = None,
    delimiter: str = ','
) -> Tuple[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
    """
    Read new points for prediction.

    Args:
        path: Data file
        columns: Condition columns, in design order
        h_columns: Tabulated derivative columns (needed when H has no basis evaluator)
        nominal: Optional nominal-output column
        delimiter: Field delimiter

    Returns:
        Tuple of (points (p, d), H_new (p, m) or None, nominal outputs (p,) or None)
    """
    frame = _read_frame(path, delimiter)
    missing = [c for c in list(columns) + list(h_columns) + ([nominal] if nominal else []) if c not in frame.columns]
    if missing:
        raise DataError(f"Missing column(s) in {path}: {', '.join(missing)}")

    points = np.column_stack([_column(frame, c) for c in columns])
    H_new = np.column_stack([_column(frame, c) for c in h_columns]) if h_columns else None
    nominal_outputs = _column(frame, nominal) if nominal else None
    return points, H_new, nominal_outputs


def write_dataset(dataset: Dataset, path, delimiter: str = ',') -> Path:
    """Write a dataset so that load_dataset reads back the same values bit for bit"""
    columns = {name: dataset.conditions[:, j] for j, name in enumerate(dataset.condition_names)}
    columns[dataset.output_name] = dataset.y
    for j, name in enumerate(dataset.h_names):
        columns[name] = dataset.H[:, j]
    if dataset.nominal_name is not None:
        columns[dataset.nominal_name] = dataset.nominal

    frame = pd.DataFrame({name: [repr(float(v)) for v in values] for name, values in columns.items()})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, sep=delimiter, index=False)
    logger.info(f"Wrote dataset {path} ({dataset.n} rows)")
    return path
