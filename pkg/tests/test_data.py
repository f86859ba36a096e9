import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from clusterlogit import (
    Dataset,
    FixedEffectSpec,
    Restriction,
    build_dataset,
    cluster_size_profile,
    expand_fixed_effects,
)
from clusterlogit.data import summary_profile
from clusterlogit.errors import (
    DataError,
    MissingColumn,
    MissingValue,
    NonBinaryOutcome,
    NoConstantColumn,
    SingleCluster,
)


def _cols(**over):
    cols = {
        "y": [0, 1, 1, 0, 1, 0],
        "x": [0.5, 1.0, -1.0, 2.0, 0.0, 1.5],
        "cl": ["A", "A", "B", "B", "C", "C"],
    }
    cols.update(over)
    return cols


def test_build_dataset_counts_clusters():
    d = build_dataset(_cols(), "y", ["x"], "cl", add_constant=True)
    assert d.G == 3
    assert_array_equal(d.N_g, [2, 2, 2])
    assert d.N == 6 and d.k == 2
    assert list(d.cluster_labels) == ["A", "B", "C"]
    assert d.names == ("_cons", "x")


def test_rows_sorted_stably_by_cluster():
    cols = _cols(cl=["B", "A", "B", "A", "C", "C"])
    d = build_dataset(cols, "y", ["x"], "cl")
    assert_array_equal(d.groups, [0, 0, 1, 1, 2, 2])
    # within A the original order (rows 1, 3) is kept
    assert_array_equal(d.X[:2, 0], [1.0, 2.0])
    assert_array_equal(d.starts, [0, 2, 4, 6])


def test_numeric_cluster_labels_sort_numerically():
    cols = _cols(cl=["10", "10", "2", "2", "1", "1"])
    d = build_dataset(cols, "y", ["x"], "cl")
    assert_array_equal(d.cluster_labels, [1.0, 2.0, 10.0])


def test_nonbinary_outcome():
    with pytest.raises(NonBinaryOutcome):
        build_dataset(_cols(y=[0, 1, 2, 0, 1, 0]), "y", ["x"], "cl")


def test_single_cluster():
    with pytest.raises(SingleCluster):
        build_dataset(_cols(cl=["A"] * 6), "y", ["x"], "cl")


def test_missing_column_and_value():
    with pytest.raises(MissingColumn):
        build_dataset(_cols(), "y", ["z"], "cl")
    with pytest.raises(MissingValue):
        build_dataset(_cols(x=["1", "", "2", "3", "4", "5"]), "y", ["x"], "cl")
    with pytest.raises(MissingValue):
        build_dataset(_cols(x=[1, np.nan, 2, 3, 4, 5]), "y", ["x"], "cl")
    with pytest.raises(MissingValue):
        build_dataset(_cols(cl=["A", "", "B", "B", "C", "C"]), "y", ["x"], "cl")


def test_dataset_invariants():
    with pytest.raises(DataError):
        # N must exceed k
        Dataset.from_arrays([0, 1], np.eye(2), [0, 1])
    d = Dataset.from_arrays([0, 1, 1], [[1.0], [1.0], [1.0]], [5, 7, 7])
    with pytest.raises(ValueError):
        d.X[0, 0] = 3.0


def test_frequency_weights_count_as_observations():
    d = Dataset.from_arrays([0, 1, 0, 1], np.ones((4, 1)), [0, 0, 1, 1], freq=[3, 2, 1, 4])
    assert d.N == 10
    assert_array_equal(d.N_g, [5, 5])
    assert d.ybar == pytest.approx(0.6)


def test_expand_fixed_effects_three_levels():
    rng = np.random.default_rng(1)
    n = 12
    X = np.column_stack([np.ones(n), rng.normal(size=(n, 3))])
    fe = np.repeat([1, 2, 3], 4)
    d = Dataset.from_arrays(rng.integers(0, 2, n), X, np.arange(n) // 3, extra={"f": fe})
    d2 = expand_fixed_effects(d, FixedEffectSpec.from_dataset(d, "f"))
    assert d2.k == 6
    assert d2.constant_column is None
    assert d2.names[-3:] == ("f=1", "f=2", "f=3")


def test_expand_fixed_effects_cluster_dummies():
    d = Dataset.from_arrays([0, 1, 1, 0, 1, 0, 0, 1], np.ones((8, 1)), [0, 0, 1, 1, 2, 2, 3, 3])
    d2 = expand_fixed_effects(d, FixedEffectSpec.from_dataset(d, d.cluster_name))
    assert d2.k == 4
    for g in range(4):
        col = d2.X[:, g]
        assert_array_equal(np.unique(d2.groups[col == 1]), [g])


def test_two_level_dummies():
    d = Dataset.from_arrays([0, 1, 1, 0], np.ones((4, 1)), [0, 0, 1, 1], extra={"f": [1, 1, 2, 2]})
    d2 = expand_fixed_effects(d, FixedEffectSpec.from_dataset(d, "f"))
    assert_array_equal(d2.X, [[1, 0], [1, 0], [0, 1], [0, 1]])


def test_expand_without_constant():
    d = Dataset.from_arrays([0, 1, 1, 0], np.arange(4.0)[:, None] + 2, [0, 0, 1, 1],
                            extra={"f": [1, 1, 2, 2]})
    with pytest.raises(NoConstantColumn):
        expand_fixed_effects(d, FixedEffectSpec.from_dataset(d, "f"))


def test_fixed_effect_needs_two_levels():
    with pytest.raises(DataError):
        FixedEffectSpec("f", np.ones(5))


def test_cluster_size_profile():
    d = Dataset.from_arrays(np.r_[np.zeros(250), np.ones(250)] .reshape(-1), np.ones((500, 1)),
                            np.repeat(np.arange(5), 100))
    assert cluster_size_profile(d).coefvar == 0
    p = summary_profile([1, 3])
    assert p.mean == 2
    assert_allclose(p.coefvar, np.sqrt(2) / 2, rtol=1e-12)


def test_quartiles_average_straddling_order_statistics():
    p = summary_profile([1, 2, 3, 4, 5, 6, 7, 8])
    assert (p.q1, p.median, p.q3) == (2.5, 4.5, 6.5)
    p = summary_profile([1, 2, 3, 4, 5])
    assert (p.q1, p.median, p.q3) == (2, 3, 4)


def test_restriction_positions():
    r = Restriction()
    assert r.position(4) == 3
    R, rv = r.matrix(4)
    assert_array_equal(R, [[0, 0, 0, 1]])
    assert_array_equal(rv, [0])
    assert Restriction("b").position(3, ("a", "b", "c")) == 1
    with pytest.raises(DataError):
        Restriction(5).position(3)
    with pytest.raises(DataError):
        Restriction(R=np.array([[1, 1, 0], [2, 2, 0]])).matrix(3)
