"""
Tests for dataset file reading and writing
"""

import numpy as np
import pytest

from config import SchemaConfig
from dataset import Dataset, load_dataset, load_points, write_dataset
from demos import FRICTION_SCHEMA, build_friction_dataset
from exceptions import DataError


def write_text(tmp_path, text, name='data.csv'):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadDataset:

    def test_parabola_file(self, tmp_path):
        path = write_text(tmp_path, "x,y\n0.2,0.04\n0.5,0.25\n0.8,0.64\n")
        dataset = load_dataset(path)
        assert dataset.condition_names == ('x',)
        np.testing.assert_array_equal(dataset.conditions[:, 0], [0.2, 0.5, 0.8])
        np.testing.assert_array_equal(dataset.y, [0.04, 0.25, 0.64])
        assert dataset.H is None

    def test_default_linear_model(self, tmp_path):
        path = write_text(tmp_path, "x,y\n0.2,0.04\n0.5,0.25\n0.8,0.64\n")
        dataset = load_dataset(path)
        linmodel = dataset.linear_model(dataset.design())
        np.testing.assert_array_equal(linmodel.H, [[1.0, 0.2], [1.0, 0.5], [1.0, 0.8]])
        assert linmodel.nominal_outputs is None
        np.testing.assert_array_equal(dataset.observations(linmodel).y, dataset.y)

    def test_nominal_parameters_shift_observations(self, tmp_path):
        path = write_text(tmp_path, "x,y\n0.0,1.0\n0.5,2.0\n1.0,3.0\n")
        dataset = load_dataset(path)
        linmodel = dataset.linear_model(dataset.design(), beta_nominal=[0.5, 1.0])
        np.testing.assert_allclose(linmodel.nominal_outputs, [0.5, 1.0, 1.5])
        np.testing.assert_allclose(dataset.observations(linmodel).y, [0.5, 1.0, 1.5])

    def test_nominal_column_wins_over_linear_nominal(self, tmp_path):
        path = write_text(tmp_path, "x,y,h,f0\n0.0,1.0,1.0,0.7\n1.0,3.0,2.0,0.9\n")
        schema = SchemaConfig(conditions=['x'], h_columns=['h'], nominal='f0')
        dataset = load_dataset(path, schema)
        linmodel = dataset.linear_model(dataset.design(), beta_nominal=[2.0])
        np.testing.assert_array_equal(linmodel.nominal_outputs, [0.7, 0.9])
        np.testing.assert_allclose(dataset.observations(linmodel).y, [0.3, 2.1])

    def test_tabulated_h_without_nominal_column(self, tmp_path):
        path = write_text(tmp_path, "x,y,h\n0.0,1.0,1.0\n1.0,3.0,2.0\n")
        schema = SchemaConfig(conditions=['x'], h_columns=['h'])
        dataset = load_dataset(path, schema)
        linmodel = dataset.linear_model(dataset.design(), beta_nominal=[0.5])
        np.testing.assert_allclose(dataset.observations(linmodel).y, [0.5, 2.0])

    def test_schema_roles(self, tmp_path):
        path = write_text(tmp_path, "a;b;out;ha;f0\n1;2;10;0.5;9\n2;3;11;0.6;9.5\n", name='data.txt')
        schema = SchemaConfig(conditions=['b', 'a'], output='out', h_columns=['ha'], nominal='f0', delimiter=';')
        dataset = load_dataset(path, schema)
        np.testing.assert_array_equal(dataset.conditions, [[2.0, 1.0], [3.0, 2.0]])
        np.testing.assert_array_equal(dataset.H, [[0.5], [0.6]])
        np.testing.assert_allclose(dataset.observations().y, [1.0, 1.5])
        assert dataset.columns == ['b', 'a', 'out', 'ha', 'f0']

    def test_nan_cell_is_located(self, tmp_path):
        path = write_text(tmp_path, "x,y\n0.2,0.04\n0.5,NaN\n0.8,0.64\n")
        with pytest.raises(DataError, match=r"row 2, column 'y'"):
            load_dataset(path)

    def test_non_numeric_cell(self, tmp_path):
        path = write_text(tmp_path, "x,y\n0.2,0.04\nabc,0.25\n")
        with pytest.raises(DataError, match=r"Non-numeric cell at row 2, column 'x'"):
            load_dataset(path)

    def test_header_only(self, tmp_path):
        path = write_text(tmp_path, "x,y\n")
        with pytest.raises(DataError, match='Empty dataset'):
            load_dataset(path)

    def test_empty_file(self, tmp_path):
        path = write_text(tmp_path, "")
        with pytest.raises(DataError, match='Empty dataset'):
            load_dataset(path)

    def test_missing_output_column(self, tmp_path):
        path = write_text(tmp_path, "x,z\n0.2,0.04\n")
        with pytest.raises(DataError, match='Missing column'):
            load_dataset(path)

    def test_long_row(self, tmp_path):
        path = write_text(tmp_path, "x,y\n0.2,0.04\n0.5,0.25,7\n")
        with pytest.raises(DataError):
            load_dataset(path)

    def test_short_row(self, tmp_path):
        path = write_text(tmp_path, "x,y\n0.2,0.04\n0.5\n")
        with pytest.raises(DataError, match='row 2'):
            load_dataset(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match='not found'):
            load_dataset(tmp_path / 'absent.csv')


class TestLoadPoints:

    def test_columns_in_design_order(self, tmp_path):
        path = write_text(tmp_path, "b,a,h\n1,2,0.1\n3,4,0.2\n")
        points, H_new, nominal = load_points(path, ['a', 'b'], h_columns=['h'])
        np.testing.assert_array_equal(points, [[2.0, 1.0], [4.0, 3.0]])
        np.testing.assert_array_equal(H_new, [[0.1], [0.2]])
        assert nominal is None

    def test_missing_column(self, tmp_path):
        path = write_text(tmp_path, "a\n1\n")
        with pytest.raises(DataError):
            load_points(path, ['a', 'b'])


class TestWriteDataset:

    def test_friction_round_trip(self, tmp_path):
        dataset = build_friction_dataset(seed=4, n_iso=15, n_heated=15)
        path = write_dataset(dataset, tmp_path / 'friction.csv')
        loaded = load_dataset(path, FRICTION_SCHEMA)
        assert loaded.condition_names == dataset.condition_names
        np.testing.assert_array_equal(loaded.conditions, dataset.conditions)
        np.testing.assert_array_equal(loaded.y, dataset.y)
        np.testing.assert_array_equal(loaded.H, dataset.H)
        np.testing.assert_array_equal(loaded.nominal, dataset.nominal)

    def test_invalid_dataset(self):
        with pytest.raises(DataError):
            Dataset(('x',), np.array([[0.0], [np.inf]]), 'y', np.array([1.0, 2.0]))
