import json

import numpy as np
import pytest

from compactgbm.boosting import BoosterConfig, MergeSpec, predict, train
from compactgbm.columnar import Dataset, Session, attach_column
from compactgbm.errors import DuplicateKey, EmptyColumn, ShapeMismatch, StaleBinning
from compactgbm.merge import (
    MISSING_ORDINAL,
    MergedFeature,
    build_join_index,
    implicit_histogram,
    materialize_merge,
    register_side_table,
)
from compactgbm.binning import adaptive_resize, quantize
from compactgbm.persistence import model_to_dict
from compactgbm.tree import build_histogram


def fcol(values):
    arr = np.asarray(values, dtype=np.float64)
    return attach_column(arr, arr.shape[0], 8)


def test_register_side_table():
    side = register_side_table([7, 9], {"f": np.array([10.0, 20.0])})
    assert side.n_keys == 2 and side.mappers[0].n_bins <= 2


def test_duplicate_keys():
    with pytest.raises(DuplicateKey):
        register_side_table([7, 9, 7], {"f": np.zeros(3)})


def test_ragged_columns():
    with pytest.raises(ShapeMismatch):
        register_side_table([1, 2], {"a": np.zeros(2), "b": np.zeros(3)})


def test_side_footprint_is_key_granular(rng):
    s = Session()
    register_side_table(np.arange(1000.0), {"f": rng.normal(size=1000)}, session=s)
    rep = s.report()
    # 1000 one-byte bin indices + 255 8-byte boundaries + sorted keys and key order
    assert rep.merge_structure_bytes == 1000 + 255 * 8 + 1000 * 8 + 1000 * 8
    assert rep.raw_value_bytes_copied == 0


def test_join_index():
    side = register_side_table([7, 9], {"f": np.array([10.0, 20.0])})
    assert build_join_index(fcol([7, 9, 7]), side).ordinals.tolist() == [0, 1, 0]
    j = build_join_index(fcol([5, 9, np.nan]), side)
    assert j.ordinals.tolist() == [MISSING_ORDINAL, 1, MISSING_ORDINAL] and j.has_unmatched
    with pytest.raises(EmptyColumn):
        build_join_index(np.array([]), side)


def test_join_index_unsorted_side_keys():
    side = register_side_table([30, 10, 20], {"f": np.array([3.0, 1.0, 2.0])})
    j = build_join_index(fcol([10, 20, 30, 40]), side)
    assert j.ordinals.tolist() == [1, 2, 0, MISSING_ORDINAL]


def test_materialize():
    side = register_side_table([7, 9], {"f": np.array([10.0, 20.0])})
    assert materialize_merge(fcol([7, 9, 7]), side)["f"].tolist() == [10, 20, 10]
    out = materialize_merge(fcol([7, 5]), side)["f"]
    assert out[0] == 10 and np.isnan(out[1])


def test_implicit_histogram_example():
    side = register_side_table([7, 9], {"f": np.array([10.0, 20.0])})
    join = build_join_index(fcol([7, 9, 7]), side)
    merged = MergedFeature(side, "f", join)
    assert merged.bins().tolist() == [0, 1, 0]
    hist = implicit_histogram(np.arange(3), merged, np.ones(3), np.ones(3))
    assert tuple(hist.data[0]) == (2, 2, 2) and tuple(hist.data[1]) == (1, 1, 1)


def test_all_unmatched_go_to_missing_bin():
    side = register_side_table([7, 9], {"f": np.array([10.0, 20.0])})
    merged = MergedFeature(side, "f", build_join_index(fcol([1, 2, 3]), side))
    hist = implicit_histogram(np.arange(3), merged, np.ones(3), np.ones(3))
    assert hist.count.tolist() == [0, 0, 3] and merged.mapper.missing_bin == 2


def random_instance(rng, n=2000, u=40, f=3, unmatched=0.05):
    keys = rng.permutation(np.arange(u) * 3.0)
    feats = {f"s{j}": np.round(rng.normal(size=u), 2) for j in range(f)}
    main_keys = rng.choice(keys, size=n)
    main_keys[rng.random(n) < unmatched] = -1.0
    return keys, feats, main_keys


@pytest.mark.parametrize("seed", range(5))
def test_implicit_equals_materialized_histogram(seed):
    rng = np.random.default_rng(seed)
    keys, feats, main_keys = random_instance(rng)
    side = register_side_table(keys, feats, max_bins=8)
    join = build_join_index(fcol(main_keys), side)
    mat = materialize_merge(fcol(main_keys), side)
    g, h = rng.normal(size=main_keys.shape[0]), rng.uniform(size=main_keys.shape[0])
    rows = np.sort(rng.choice(main_keys.shape[0], 700, replace=False))
    for name in feats:
        merged = MergedFeature(side, name, join)
        for row in range(0, main_keys.shape[0], 97):
            v, w = merged.virtual_value(row), mat[name][row]
            assert v == w or (np.isnan(v) and np.isnan(w))
        direct = build_histogram(rows, quantize(fcol(mat[name]), merged.mapper), g, h)
        implicit = implicit_histogram(rows, merged, g, h)
        assert np.array_equal(direct.count, implicit.count)
        np.testing.assert_allclose(implicit.sum_g, direct.sum_g, rtol=0, atol=1e-12)
        np.testing.assert_allclose(implicit.sum_h, direct.sum_h, rtol=0, atol=1e-12)


def test_stale_side_mapper():
    side = register_side_table([1, 2, 3, 4], {"f": np.array([1.0, 2, 3, 4])}, max_bins=2)
    merged = MergedFeature(side, "f", build_join_index(fcol([1, 2, 3, 4]), side))
    adaptive_resize(merged.mapper, 0, merged.column)
    with pytest.raises(StaleBinning):
        implicit_histogram(np.arange(4), merged, np.ones(4), np.ones(4))
    merged.refresh()
    assert implicit_histogram(np.arange(4), merged, np.ones(4), np.ones(4)).count.tolist() == [1, 1, 2]


def two_path_models(rng, config, n=3000):
    keys, feats, main_keys = random_instance(rng, n=n)
    x = rng.normal(size=n)
    s0 = dict(zip(keys, feats["s0"]))
    y = np.array([s0.get(k, 0.0) for k in main_keys]) * 2 + x + 0.1 * rng.normal(size=n)
    side = register_side_table(keys, feats, max_bins=16)
    main = Dataset.from_arrays([x, main_keys], y, ["x", "key"])
    implicit = train(config, main, merges=[MergeSpec(side, "key")])
    join = build_join_index(main.column("key"), side)
    mappers = {name: MergedFeature(side, name, join).mapper for name in feats}
    mat = materialize_merge(main.column("key"), side, join=join)
    explicit_ds = Dataset.from_arrays([x, main_keys, *mat.values()], y, ["x", "key", *mat])
    explicit = train(config, explicit_ds, mappers=mappers)
    return implicit, explicit, main, side, explicit_ds


@pytest.mark.parametrize("adaptive", [False, True])
def test_training_path_equivalence(rng, adaptive):
    config = BoosterConfig(num_trees=15, adaptive_bins=adaptive, t_split=2)
    implicit, explicit, main, side, explicit_ds = two_path_models(rng, config)
    a, b = model_to_dict(implicit), model_to_dict(explicit)
    assert a == b
    np.testing.assert_array_equal(predict(implicit, main, [MergeSpec(side, "key")]),
                                  predict(explicit, explicit_ds))
    if adaptive:
        grown = [n > m.n_bins + 1 for n, m in zip(implicit.metadata["n_bins"][2:], side.mappers)]
        assert any(grown)


def test_merge_structure_scaling(rng):
    u = 200
    keys = np.arange(u, dtype=float)
    for n in (10_000, 20_000):
        main_keys = fcol(rng.choice(keys, size=n))
        results = []
        for f in (2, 8):
            s = Session()
            side = register_side_table(keys, {f"c{j}": rng.normal(size=u) for j in range(f)}, session=s)
            base = s.report().merge_structure_bytes
            build_join_index(main_keys, side, s)
            results.append(s.report().merge_structure_bytes - base)
            s2 = Session()
            materialize_merge(main_keys, side, s2)
            assert s2.report().raw_value_bytes_copied == 8 * n * f
        # the N-length join term does not grow with the number of side features
        assert results[0] == results[1] == 4 * n
