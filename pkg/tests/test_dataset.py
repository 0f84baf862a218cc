"""
Tests for keyed datasets and conforming unions.
"""

import pytest
import sys
from pathlib import Path

import numpy as np
import pandas as pd

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from sketches.dataset import Dataset, union_all, value_columns
from utils.errors import ConformingViolationError


@pytest.fixture
def sample_dataset():
    """Three keyed rows in two dimensions."""
    return Dataset.from_rows(["a", "b", "c"], [[1.0, 0.0], [0.0, 2.0], [3.0, 3.0]])


class TestDataset:
    """Tests for Dataset construction and accessors."""

    def test_accessors(self, sample_dataset):
        """Test keys, values and row lookup."""
        assert sample_dataset.d == 2
        assert len(sample_dataset) == 3
        assert sample_dataset.keys == ["a", "b", "c"]
        assert sample_dataset.row("b").tolist() == [0.0, 2.0]
        assert "c" in sample_dataset and "z" not in sample_dataset
        assert list(sample_dataset.df.columns) == value_columns(2)

    def test_from_mapping_and_matrix(self):
        """Test the alternative constructors."""
        ds = Dataset.from_mapping({1: [1.0, 2.0], 2: [3.0, 4.0]})
        assert ds.keys == [1, 2]
        matrix = Dataset.from_matrix(np.eye(3), prefix="e")
        assert matrix.keys == ["e0", "e1", "e2"]

    def test_empty(self):
        """Test an empty dataset keeps its dimension."""
        ds = Dataset.from_rows([], [], d=4)
        assert len(ds) == 0 and ds.d == 4

    def test_duplicate_keys(self):
        """Test a key may appear only once."""
        with pytest.raises(ConformingViolationError):
            Dataset.from_rows(["a", "a"], [[1.0], [1.0]])

    def test_key_row_mismatch(self):
        """Test key and row counts must agree."""
        with pytest.raises(ValueError):
            Dataset.from_rows(["a"], [[1.0], [2.0]])

    def test_missing_columns(self):
        """Test frames without v1..vd columns are rejected."""
        with pytest.raises(ValueError, match="Missing required columns"):
            Dataset(pd.DataFrame({"key": ["a"], "x": [1.0]}))

    def test_csv_round_trip(self, sample_dataset, tmp_path):
        """Test rows survive key,v1,...,vd CSV."""
        path = tmp_path / "data.csv"
        sample_dataset.to_csv(path)
        loaded = Dataset.from_csv(path)
        assert loaded.keys == sample_dataset.keys
        assert np.array_equal(loaded.values, sample_dataset.values)

    def test_csv_without_keys(self, tmp_path):
        """Test a CSV without a key column."""
        path = tmp_path / "bad.csv"
        path.write_text("v1,v2\n1,2\n")
        with pytest.raises(ValueError, match="Missing required columns"):
            Dataset.from_csv(path)

    def test_sensitivities_cached(self, sample_dataset):
        """Test repeated sensitivity queries reuse the first result."""
        first = sample_dataset.sensitivities(2)
        assert sample_dataset.sensitivities(2) is first
        assert first.sum() == pytest.approx(2.0)


class TestUnion:
    """Tests for conforming unions."""

    def test_shared_keys_once(self, sample_dataset):
        """Test shared keys appear once, in first-appearance order."""
        other = Dataset.from_rows(["c", "d"], [[3.0, 3.0], [5.0, 5.0]])
        union = sample_dataset.union(other)
        assert union.keys == ["a", "b", "c", "d"]

    def test_conflict(self, sample_dataset):
        """Test a shared key with a different row."""
        other = Dataset.from_rows(["c"], [[3.0, 4.0]])
        with pytest.raises(ConformingViolationError) as info:
            sample_dataset.union(other)
        assert info.value.key == "c"

    def test_mixed_dimensions(self, sample_dataset):
        """Test datasets of different widths cannot be joined."""
        with pytest.raises(ValueError):
            union_all([sample_dataset, Dataset.from_rows(["z"], [[1.0, 2.0, 3.0]])])

    def test_no_datasets(self):
        """Test the union of nothing."""
        with pytest.raises(ValueError):
            union_all([])

    def test_empty_member(self, sample_dataset):
        """Test empty datasets are ignored."""
        assert union_all([Dataset.from_rows([], [], d=2), sample_dataset]).keys == sample_dataset.keys


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
