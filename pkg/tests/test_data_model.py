import numpy as np
import pytest

from distdesign.data import (
    ColumnMeta,
    ColumnSchema,
    DataError,
    Dataset,
    PartitionSpec,
    balanced_partition,
    destandardize,
    load_dataset,
    partition_covariates,
    save_dataset,
    standardize,
)


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_small_file(tmp_path):
    f = write_csv(tmp_path / "d.csv", "treatment,a,b\n1,1.5,2\n0,2.5,3\n1,0.5,4\n0,3.5,5\n")
    ds = load_dataset(f)
    assert ds.n_subjects == 4
    assert ds.p == 2
    assert list(ds.treatment) == [1, 0, 1, 0]
    assert ds.column_names == ["a", "b"]


def test_categorical_expands_to_indicators(tmp_path):
    f = write_csv(
        tmp_path / "d.csv",
        "treatment,cat,z\n1,a,0.1\n0,b,0.2\n1,c,0.3\n0,a,0.4\n",
    )
    ds = load_dataset(f, ColumnSchema(kinds={"cat": "categorical"}))
    names = ds.column_names
    assert names == ["z", "cat=a", "cat=b", "cat=c"]
    indicators = ds.covariates[:, 1:]
    assert np.array_equal(indicators.sum(axis=1), np.ones(4))
    assert ds.covariate_meta[1].kind == "categorical-expanded"


def test_non_binary_treatment_names_row(tmp_path):
    f = write_csv(tmp_path / "d.csv", "treatment,a\n1,1\n2,2\n")
    with pytest.raises(DataError, match="row 3"):
        load_dataset(f)


def test_missing_value_locates_cell(tmp_path):
    f = write_csv(tmp_path / "d.csv", "treatment,a\n1,1\n0,\n")
    with pytest.raises(DataError, match="row 3.*'a'"):
        load_dataset(f)


def test_empty_file_rejected(tmp_path):
    f = write_csv(tmp_path / "d.csv", "")
    with pytest.raises(DataError, match="empty"):
        load_dataset(f)


def test_binary_declaration_enforced(tmp_path):
    f = write_csv(tmp_path / "d.csv", "treatment,a\n1,0\n0,2\n")
    with pytest.raises(DataError, match="binary"):
        load_dataset(f, ColumnSchema(kinds={"a": "binary"}))


def test_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(5)
    x = rng.standard_normal((40, 7)) * rng.uniform(0.1, 100, 7)
    w = (rng.random(40) < 0.4).astype(np.int8)
    w[0], w[1] = 1, 0
    ds = Dataset(x, w, tuple(ColumnMeta(f"c{i}", "continuous") for i in range(7)))
    path = tmp_path / "round.csv"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert np.array_equal(back.covariates, ds.covariates)
    assert np.array_equal(back.treatment, ds.treatment)


def test_dataset_requires_both_groups():
    x = np.zeros((3, 2))
    with pytest.raises(DataError, match="both"):
        Dataset(x, np.array([1, 1, 1]), (ColumnMeta("a", "continuous"),) * 2)


def test_standardize_basic():
    out, mean, sd, const = standardize(np.array([[1.0], [2.0], [3.0]]))
    assert abs(out.mean()) < 1e-12
    assert abs(out.std(ddof=1) - 1) < 1e-12
    assert mean[0] == 2.0 and abs(sd[0] - 1.0) < 1e-12
    assert not const[0]


def test_standardize_idempotent_and_invertible():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 4)) * [1, 10, 0.1, 5] + [0, -3, 9, 2]
    z, mean, sd, _ = standardize(x)
    z2, m2, s2, _ = standardize(z)
    assert np.abs(z2 - z).max() < 1e-12
    assert np.abs(m2).max() < 1e-12
    assert np.abs(s2 - 1).max() < 1e-12
    assert np.abs(destandardize(z, mean, sd) - x).max() < 1e-10


def test_standardize_constant_column_flagged():
    z, mean, sd, const = standardize(np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]))
    assert const[0] and not const[1]
    assert np.array_equal(z[:, 0], np.zeros(3))
    assert sd[0] == 0.0


def make_dataset(n=12, p=6, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    w = np.zeros(n, dtype=np.int8)
    w[: n // 3] = 1
    return Dataset(x, w, tuple(ColumnMeta(f"x{i + 1}", "continuous") for i in range(p)))


def test_partition_blocks():
    ds = make_dataset()
    spec = PartitionSpec(((0, 1), (2, 3), (4, 5)))
    blocks = partition_covariates(ds, spec)
    assert [b.designer_id for b in blocks] == [1, 2, 3]
    for b, cols in zip(blocks, spec.blocks):
        assert np.array_equal(b.matrix, ds.covariates[:, list(cols)])


def test_partition_six_twenty_column_blocks():
    spec = PartitionSpec(tuple(tuple(range(20 * i, 20 * (i + 1))) for i in range(6)))
    assert spec.m_designers == 6
    assert all(len(b) == 20 for b in spec.blocks)


def test_partition_uneven_blocks_accepted():
    blocks = [tuple(range(i * 15, i * 15 + 15)) for i in range(3)]
    blocks.append(tuple(range(45, 58)))
    spec = PartitionSpec(tuple(blocks))
    assert [len(b) for b in spec.blocks] == [15, 15, 15, 13]


def test_partition_overlap_rejected():
    with pytest.raises(DataError, match="overlap"):
        PartitionSpec(((0, 1), (1, 2)))


def test_partition_out_of_range_rejected():
    ds = make_dataset(p=4)
    spec = PartitionSpec(((0, 1), (2, 9)))
    with pytest.raises(DataError, match="outside"):
        partition_covariates(ds, spec)


def test_partition_completeness_with_unassigned():
    ds = make_dataset(p=6)
    spec = PartitionSpec(((0, 2), (4, 5)))
    blocks = partition_covariates(ds, spec)
    covered = sorted(c for b in blocks for c in b.columns)
    assert sorted(covered + list(spec.unassigned(6))) == list(range(6))


def test_balanced_partition_near_equal_sizes():
    spec = balanced_partition(58, 4, seed=3)
    sizes = sorted(len(b) for b in spec.blocks)
    assert sizes == [14, 14, 15, 15]
    covered = sorted(c for b in spec.blocks for c in b)
    assert covered == list(range(58))
