import numpy as np
import pytest

from eivgmm.errors import CsvParseError, ValidationError
from eivgmm.model_data import (
    CsvSchema,
    ParamVector,
    average_replicates,
    build_design,
    load_csv,
    make_dataset,
    write_csv,
)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class TestLoadCsv:
    def test_direct_ingestion(self, tmp_path):
        f = tmp_path / "d.csv"
        write_lines(f, [
            "y,w1_r1,w1_r2",
            "1.0,0.5,0.7",
            "2.0,1.5,1.7",
            "3.0,2.5,2.7",
            "4.0,3.5,3.7",
        ])
        d = load_csv(f, CsvSchema(y="y"))
        assert (d.n, d.p, d.q) == (4, 1, 0)
        assert np.array_equal(d.n_rep, [2, 2, 2, 2])
        assert np.array_equal(d.y, [1.0, 2.0, 3.0, 4.0])
        assert np.array_equal(d.z, np.ones((4, 1)))

    def test_missing_cell_drops_replicate(self, tmp_path):
        f = tmp_path / "d.csv"
        write_lines(f, [
            "y,w1_r1,w1_r2,w1_r3",
            "1.0,0.5,,0.9",
            "2.0,1.5,1.6,1.7",
            "3.0,2.5,2.6,2.7",
            "4.0,3.5,3.6,3.7",
        ])
        d = load_csv(f, CsvSchema(y="y"))
        assert d.n_rep.tolist() == [2, 3, 3, 3]
        # replicates 1 and 3 are the ones kept for the first row
        assert np.array_equal(d.w_reps[0], [[0.5], [0.9]])

    def test_single_replicate_column_rejected(self, tmp_path):
        f = tmp_path / "d.csv"
        write_lines(f, ["y,w1_r1", "1.0,0.5", "2.0,1.5"])
        with pytest.raises(ValidationError, match="n_j<2"):
            load_csv(f, CsvSchema(y="y"))

    def test_row_with_too_few_replicates_rejected(self, tmp_path):
        f = tmp_path / "d.csv"
        write_lines(f, [
            "y,w1_r1,w1_r2",
            "1.0,0.5,",
            "2.0,1.5,1.7",
            "3.0,2.5,2.7",
            "4.0,3.5,3.7",
        ])
        with pytest.raises(ValidationError, match=r"rows \[0\]"):
            load_csv(f, CsvSchema(y="y"))

    def test_malformed_cell_reports_row_and_column(self, tmp_path):
        f = tmp_path / "d.csv"
        write_lines(f, [
            "y,w1_r1,w1_r2",
            "1.0,0.5,0.7",
            "2.0,oops,1.7",
            "3.0,2.5,2.7",
            "4.0,3.5,3.7",
        ])
        with pytest.raises(CsvParseError) as err:
            load_csv(f, CsvSchema(y="y"))
        assert err.value.row == 1
        assert err.value.column == "w1_r1"

    def test_column_order_free(self, tmp_path):
        f = tmp_path / "d.csv"
        write_lines(f, [
            "w2_r1,y,w1_r2,age,w1_r1,w2_r2",
            "10.0,1.0,0.7,30,0.5,10.2",
            "11.0,2.0,1.7,40,1.5,11.2",
            "12.0,3.0,2.7,50,2.5,12.2",
            "13.0,4.0,3.7,60,3.5,13.2",
            "14.0,5.0,4.7,70,4.5,14.2",
        ])
        d = load_csv(f, CsvSchema(y="y", z=("age",)))
        assert (d.n, d.p, d.q) == (5, 2, 1)
        assert np.array_equal(d.w_reps[0], [[0.5, 10.0], [0.7, 10.2]])
        assert np.array_equal(d.z[:, 1], [30, 40, 50, 60, 70])


class TestRoundTrip:
    def test_write_then_load_bit_identical(self, tmp_path, rng):
        n = 30
        y = rng.normal(size=n)
        z = rng.normal(size=(n, 2))
        w = [rng.normal(size=(3, 2)) for _ in range(n)]
        d = make_dataset(y, z, w)
        f = tmp_path / "out.csv"
        write_csv(d, f)
        d2 = load_csv(f, CsvSchema(y="y", z=("z1", "z2")))
        assert np.array_equal(d.y, d2.y)
        assert np.array_equal(d.z, d2.z)
        for a, b in zip(d.w_reps, d2.w_reps):
            assert np.array_equal(a, b)

    def test_ragged_replicates_round_trip(self, tmp_path, rng):
        y = rng.normal(size=10)
        w = [rng.normal(size=(2 + (j % 2), 1)) for j in range(10)]
        d = make_dataset(y, np.empty((10, 0)), w)
        f = tmp_path / "out.csv"
        write_csv(d, f)
        d2 = load_csv(f, CsvSchema(y="y"))
        assert d2.n_rep.tolist() == d.n_rep.tolist()
        for a, b in zip(d.w_reps, d2.w_reps):
            assert np.array_equal(a, b)


class TestValidation:
    def test_nonfinite_rejected(self, rng):
        y = np.array([1.0, 2.0, np.nan, 4.0, 5.0])
        w = [np.ones((2, 1))] * 5
        with pytest.raises(ValidationError, match="non-finite"):
            make_dataset(y, np.empty((5, 0)), w)

    def test_too_small_n_rejected(self, rng):
        y = rng.normal(size=3)
        w = [rng.normal(size=(2, 2)) for _ in range(3)]
        with pytest.raises(ValidationError, match="p\\+q\\+2"):
            make_dataset(y, np.empty((3, 0)), w)

    def test_intercept_synthesized(self, small_dataset):
        assert np.all(small_dataset.z[:, 0] == 1.0)


class TestAverageReplicates:
    def test_arithmetic_mean(self):
        y = np.arange(5.0)
        w = [np.array([[1.0, 3.0], [3.0, 1.0]])] * 5
        d = make_dataset(y, np.empty((5, 0)), w)
        avg = average_replicates(d)
        assert np.allclose(avg.w_bar, 2.0)

    def test_identical_replicates_idempotent(self, rng):
        row = rng.normal(size=2)
        w = [np.tile(row, (3, 1))] * 6
        d = make_dataset(rng.normal(size=6), np.empty((6, 0)), w)
        avg = average_replicates(d)
        assert np.allclose(avg.w_bar, row)

    def test_permutation_invariant(self, rng):
        w = [rng.normal(size=(4, 2)) for _ in range(8)]
        y = rng.normal(size=8)
        d1 = make_dataset(y, np.empty((8, 0)), w)
        d2 = make_dataset(y, np.empty((8, 0)), [wj[::-1] for wj in w])
        assert np.allclose(average_replicates(d1).w_bar, average_replicates(d2).w_bar)


class TestParamVector:
    def test_round_trip(self):
        pv = ParamVector(beta=[1.0, 2.0], gamma=[3.0, 4.0, 5.0])
        assert np.array_equal(pv.theta, [1, 2, 3, 4, 5])
        pv2 = ParamVector.from_theta(pv.theta, p=2)
        assert np.array_equal(pv2.beta, pv.beta)
        assert np.array_equal(pv2.gamma, pv.gamma)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValidationError):
            ParamVector(beta=[np.inf], gamma=[0.0])

    def test_design_layout(self, small_dataset):
        design = build_design(small_dataset)
        assert design.v.shape == (small_dataset.n, small_dataset.p + small_dataset.q + 1)
        avg = average_replicates(small_dataset)
        assert np.array_equal(design.v[:, :small_dataset.p], avg.w_bar)
        assert np.array_equal(design.v[:, small_dataset.p:], small_dataset.z)
