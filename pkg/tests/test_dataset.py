import csv

import numpy as np
import pytest

from flowcam import dataset, flows, synth
from flowcam.dataset import (
    FeatureMatrix,
    fit_apply_scaler,
    load_records,
    matrix_from_arrays,
    prune_constant,
    rank_features,
    read_ranking_csv,
    select_top_k,
    split,
    write_ranking_csv,
)
from flowcam.errors import (
    AllConstant,
    EmptyDataset,
    KTooLarge,
    SchemaMismatch,
    SingleClass,
    TooFewRows,
    ZeroStd,
)
from flowcam.flows import FEATURE_COLUMNS, meter_packets, write_flow_csv
from flowcam.pcap import TCP_ACK


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def flow_fixture_csv(path, label="IoTCam"):
    from tests.test_flows import three_packet_flow

    records = meter_packets(three_packet_flow(), label=label)
    write_flow_csv(path, records)
    return records


# --- loading -------------------------------------------------------------------

def test_load_drops_nonfinite_rows_with_count(tmp_path):
    f = tmp_path / "x.csv"
    header = ["Flow Duration", "Flow Byts/s", "Label"]
    rows = [[1.0, 2.0, "a"], [2.0, float("inf"), "a"], [3.0, 4.0, "b"],
            [float("nan"), 1.0, "b"]] + [[float(i), 1.0, "a"] for i in range(6)]
    write_csv(f, header, rows)
    m = load_records([f])
    assert m.n_rows == 8
    assert m.dropped_rows == 2
    assert m.column_names == ["Flow Duration", "Flow Byts/s"]


def test_load_concatenates_files_with_same_schema(tmp_path):
    f1, f2 = tmp_path / "a.csv", tmp_path / "b.csv"
    header = ["Flow Duration", "Label"]
    write_csv(f1, header, [[1.0, "x"], [2.0, "x"]])
    write_csv(f2, header, [[3.0, "y"]])
    m = load_records([f1, f2])
    assert m.n_rows == 3
    assert m.labels == ["x", "x", "y"]


def test_load_alias_header_and_dual_export_identical(tmp_path):
    native, alias = tmp_path / "native.csv", tmp_path / "alias.csv"
    flow_fixture_csv(native)
    # re-write the same file with the other exporter's header spellings
    lines = native.read_text().splitlines()
    header = lines[0].replace("CWR Flag Cnt", "CWE Flag Count")
    alias.write_text("\n".join([header] + lines[1:]) + "\n")
    m1, m2 = load_records([native]), load_records([alias])
    assert m1.column_names == m2.column_names
    assert np.array_equal(m1.values, m2.values)
    assert m1.labels == m2.labels


def test_load_flow_csv_keeps_tuple_as_metadata_only(tmp_path):
    f = tmp_path / "flows.csv"
    flow_fixture_csv(f)
    m = load_records([f])
    assert m.column_names == FEATURE_COLUMNS
    assert "Src IP" not in m.column_names and "Timestamp" not in m.column_names
    assert m.meta[0]["Src IP"] == "10.0.0.1"
    assert m.meta[0]["Flow ID"] == "1"


def test_load_missing_label_column_raises(tmp_path):
    f = tmp_path / "nolabel.csv"
    write_csv(f, ["Flow Duration"], [[1.0]])
    with pytest.raises(SchemaMismatch):
        load_records([f])


def test_load_empty_raises(tmp_path):
    f = tmp_path / "empty.csv"
    write_csv(f, ["Flow Duration", "Label"], [])
    with pytest.raises(EmptyDataset):
        load_records([f])


def test_label_map_applied(tmp_path):
    f = tmp_path / "m.csv"
    write_csv(f, ["Flow Duration", "Label"], [[1.0, "SpyBulb"], [2.0, "Meet"]])
    m = load_records([f], label_map={"SpyBulb": "IoTCam", "Meet": "Others"})
    assert m.labels == ["IoTCam", "Others"]


# --- pruning ---------------------------------------------------------------------

def test_prune_constant_removes_zero_std_columns():
    X = np.array([[0.0, 1.0, 5.0], [0.0, 2.0, 5.0], [0.0, 3.0, 5.0]])
    m = matrix_from_arrays(X, column_names=["zeros", "varies", "fives"])
    pruned, removed = prune_constant(m)
    assert removed == ["zeros", "fives"]
    assert pruned.column_names == ["varies"]


def test_prune_keeps_single_distinct_row_column():
    X = np.zeros((5, 1))
    X[2, 0] = 1.0
    m = matrix_from_arrays(X)
    pruned, removed = prune_constant(m)
    assert removed == [] and pruned.n_cols == 1


def test_prune_synthetic_77_to_62():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 77))
    X[:, 10:25] = 3.14  # 15 constant columns
    m = matrix_from_arrays(X)
    pruned, removed = prune_constant(m)
    assert pruned.n_cols == 62 and len(removed) == 15


def test_prune_idempotent():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(20, 5))
    X[:, 0] = 0.0
    m = matrix_from_arrays(X)
    once, _ = prune_constant(m)
    twice, removed = prune_constant(once)
    assert removed == []
    assert np.array_equal(once.values, twice.values)


def test_prune_all_constant_raises():
    m = matrix_from_arrays(np.ones((4, 3)))
    with pytest.raises(AllConstant):
        prune_constant(m)


# --- scaling ---------------------------------------------------------------------

def test_scaler_two_point_hand_example():
    m = matrix_from_arrays(np.array([[0.0], [2.0]]))
    scaled, _, params = fit_apply_scaler(m)
    assert params.mean[0] == 1.0 and params.std[0] == 1.0
    assert scaled.values[:, 0].tolist() == [-1.0, 1.0]
    assert params.transform(np.array([[1.0]]))[0, 0] == 0.0


def test_scaler_train_only_then_applied_to_others():
    rng = np.random.default_rng(2)
    train = matrix_from_arrays(rng.normal(loc=5.0, scale=2.0, size=(100, 4)))
    other = matrix_from_arrays(rng.normal(loc=5.0, scale=2.0, size=(30, 4)))
    strain, [sother], params = fit_apply_scaler(train, [other])
    assert strain.values.mean(axis=0) == pytest.approx(np.zeros(4), abs=1e-9)
    assert strain.values.std(axis=0) == pytest.approx(np.ones(4), abs=1e-9)
    assert np.array_equal(sother.values, params.transform(other.values))


def test_scaler_round_trip_identity():
    rng = np.random.default_rng(3)
    train = matrix_from_arrays(rng.normal(size=(50, 6)))
    _, _, params = fit_apply_scaler(train)
    X = rng.normal(size=(20, 6))
    back = params.inverse_transform(params.transform(X))
    assert back == pytest.approx(X, abs=1e-9)


def test_scaler_zero_std_raises():
    m = matrix_from_arrays(np.column_stack([np.arange(4.0), np.ones(4)]))
    with pytest.raises(ZeroStd):
        fit_apply_scaler(m)


# --- splitting -------------------------------------------------------------------

def test_split_90_10_reproducible():
    rng = np.random.default_rng(4)
    m = matrix_from_arrays(rng.normal(size=(100, 3)), labels=["a"] * 50 + ["b"] * 50)
    tr1, te1 = split(m, 0.1, seed=11)
    tr2, te2 = split(m, 0.1, seed=11)
    assert te1.n_rows == 10 and tr1.n_rows == 90
    assert np.array_equal(te1.values, te2.values)
    assert np.array_equal(tr1.values, tr2.values)
    _, te3 = split(m, 0.1, seed=12)
    assert not np.array_equal(te1.values, te3.values)


def test_split_stratified_even_classes():
    m = matrix_from_arrays(np.arange(20.0).reshape(20, 1), labels=["a"] * 10 + ["b"] * 10)
    tr, te = split(m, 0.5, seed=0)
    assert te.labels.count("a") == 5 and te.labels.count("b") == 5
    assert tr.labels.count("a") == 5 and tr.labels.count("b") == 5


def test_split_proportions_within_one_row():
    rng = np.random.default_rng(5)
    labels = ["a"] * 37 + ["b"] * 11 + ["c"] * 52
    m = matrix_from_arrays(rng.normal(size=(100, 2)), labels=labels)
    _, te = split(m, 0.3, seed=1)
    assert te.n_rows == 30
    for cls, total in (("a", 37), ("b", 11), ("c", 52)):
        assert abs(te.labels.count(cls) - 0.3 * total) <= 1.0


def test_split_too_few_rows():
    m = matrix_from_arrays(np.ones((3, 1)) * np.arange(3).reshape(3, 1))
    with pytest.raises(TooFewRows):
        split(m, 0.01, seed=0)


# --- ranking ---------------------------------------------------------------------

def labeled_signal_matrix(seed=0, n=300, noise_cols=5):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    signal = y * 10.0 + rng.normal(scale=0.1, size=n)
    noise = rng.normal(size=(n, noise_cols))
    X = np.column_stack([noise[:, : noise_cols // 2], signal, noise[:, noise_cols // 2:]])
    names = [f"noise{i}" for i in range(noise_cols // 2)] + ["signal"] + \
            [f"noise{i}" for i in range(noise_cols // 2, noise_cols)]
    return matrix_from_arrays(X, labels=y, column_names=names), y


def test_rank_perfect_feature_dominates():
    m, y = labeled_signal_matrix()
    ranking = rank_features(m, n_trees=20, seed=0)
    assert ranking.entries[0][0] == "signal"
    assert ranking.entries[0][1] > max(v for n_, v in ranking.entries[1:])


def test_rank_importances_sum_to_one_and_nonnegative():
    m, _ = labeled_signal_matrix(seed=1)
    ranking = rank_features(m, n_trees=20, seed=0)
    total = sum(v for _, v in ranking.entries)
    assert total == pytest.approx(1.0, abs=1e-9)
    assert all(v >= 0 for _, v in ranking.entries)


def test_rank_noise_below_signal_across_seeds():
    wins = 0
    for seed in range(3):
        m, _ = labeled_signal_matrix(seed=seed)
        ranking = rank_features(m, n_trees=20, seed=seed)
        if ranking.entries[0][0] == "signal":
            wins += 1
    assert wins == 3


def test_rank_permutation_equivariant():
    m, _ = labeled_signal_matrix(seed=2)
    base = rank_features(m, n_trees=15, seed=3)
    perm = np.random.default_rng(0).permutation(m.n_cols)
    shuffled = FeatureMatrix(
        column_names=[m.column_names[i] for i in perm],
        values=m.values[:, perm],
        labels=m.labels,
    )
    other = rank_features(shuffled, n_trees=15, seed=3)
    assert base.entries == other.entries


def test_rank_single_class_raises():
    m = matrix_from_arrays(np.random.default_rng(0).normal(size=(20, 3)), labels=["x"] * 20)
    with pytest.raises(SingleClass):
        rank_features(m)


# --- selection -------------------------------------------------------------------

def test_select_top_k_orders_by_ranking():
    m, _ = labeled_signal_matrix(seed=4)
    ranking = rank_features(m, n_trees=15, seed=0)
    top2 = select_top_k(m, ranking, 2)
    assert top2.column_names == ranking.top(2)
    assert top2.n_cols == 2
    full = select_top_k(m, ranking, m.n_cols)
    assert sorted(full.column_names) == sorted(m.column_names)


def test_select_k_too_large():
    m, _ = labeled_signal_matrix(seed=5)
    ranking = rank_features(m, n_trees=5, seed=0)
    with pytest.raises(KTooLarge):
        select_top_k(m, ranking, m.n_cols + 1)


def test_ranking_csv_round_trip(tmp_path):
    m, _ = labeled_signal_matrix(seed=6)
    ranking = rank_features(m, n_trees=10, seed=0)
    path = tmp_path / "rank.csv"
    write_ranking_csv(path, ranking)
    back = read_ranking_csv(path)
    assert back.entries == ranking.entries
