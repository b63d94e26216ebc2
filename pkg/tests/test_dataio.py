import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vanids import dataio
from vanids.dataio import (
    BENIGN,
    AttackCodeMap,
    ColumnSchema,
    Dataset,
    binarize,
    canonical_schema,
    clean,
    default_attack_codes,
    isolate_attack,
    load_csv,
    read_prepared,
    save_prepared,
    stratified_split,
    write_canonical_csv,
)


def tiny_schema(d=3, label="attackerType"):
    return ColumnSchema(tuple(f"f{i}" for i in range(d)), label)


def make_dataset(rows, labels, class_names, d=None):
    rows = np.asarray(rows, dtype=float)
    return Dataset(
        rows=rows,
        labels=np.asarray(labels),
        schema=tiny_schema(rows.shape[1]),
        class_names=tuple(class_names),
    )


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


class TestSchema:
    def test_rejects_duplicates(self):
        with pytest.raises(ValueError, match="duplicate"):
            ColumnSchema(("a", "a"), "y")

    def test_rejects_label_among_features(self):
        with pytest.raises(ValueError, match="label"):
            ColumnSchema(("a", "y"), "y")

    def test_defaults_kinds_to_numeric(self):
        s = ColumnSchema(("a", "b"), "y", {"b": "categorical"})
        assert s.kind_of("a") == "numeric"
        assert s.categorical_indices() == (1,)

    def test_canonical_schema_matches_flattening(self):
        s = canonical_schema()
        assert s.n_features == 10
        assert s.label_column == "attackerType"
        assert set(s.feature_columns) >= {"pos-x1", "pos-y1", "spd-x1", "spd-y1", "sender"}


class TestAttackCodeMap:
    def test_class_names_benign_first_then_ascending_code(self):
        names = default_attack_codes().class_names()
        assert names == (
            BENIGN,
            "Constant Attack",
            "Constant Offset Attack",
            "Random Attack",
            "Random Offset Attack",
            "Eventual Stop Attack",
        )

    def test_requires_benign(self):
        with pytest.raises(ValueError, match="BENIGN"):
            AttackCodeMap({1: "Constant Attack"})


class TestLoadCsv:
    def test_header_only_file_gives_empty_dataset(self, tmp_path):
        p = write_csv(tmp_path / "a.csv", [*canonical_schema().feature_columns, "attackerType"], [])
        d = load_csv([p])
        assert d.n == 0
        assert d.schema == canonical_schema()
        assert d.class_names[0] == BENIGN

    def test_ten_row_fixture_counts_eventual_stop(self, tmp_path):
        # 3 rows carry code 16, the rest are benign: counted by hand.
        header = [*canonical_schema().feature_columns, "attackerType"]
        rows = [[i] * 10 + [16 if i < 3 else 0] for i in range(10)]
        p = write_csv(tmp_path / "a.csv", header, rows)
        d = load_csv([p])
        assert d.n == 10
        assert d.class_counts()["Eventual Stop Attack"] == 3
        assert d.class_counts()[BENIGN] == 7

    def test_missing_file_reported(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_csv([tmp_path / "nope.csv"])

    def test_missing_column_reported(self, tmp_path):
        p = write_csv(tmp_path / "a.csv", ["sender", "attackerType"], [[1, 0]])
        with pytest.raises(ValueError, match="pos-x1"):
            load_csv([p])

    def test_unknown_code_reports_row_number(self, tmp_path):
        header = [*canonical_schema().feature_columns, "attackerType"]
        rows = [[0] * 10 + [0], [0] * 10 + [3]]
        p = write_csv(tmp_path / "a.csv", header, rows)
        with pytest.raises(ValueError, match="row 2"):
            load_csv([p])

    def test_extra_columns_ignored(self, tmp_path):
        header = [*canonical_schema().feature_columns, "attackerType", "junk"]
        rows = [[1] * 10 + [0, 99]]
        d = load_csv([write_csv(tmp_path / "a.csv", header, rows)])
        assert d.n == 1 and d.n_features == 10

    def test_rename_map(self, tmp_path):
        header = ["sender_1" if c == "sender" else c for c in canonical_schema().feature_columns]
        p = write_csv(tmp_path / "a.csv", header + ["attackerType"], [[1] * 10 + [0]])
        d = load_csv([p], rename={"sender_1": "sender"})
        assert d.n == 1

    def test_nan_inf_tokens_parsed(self, tmp_path):
        header = [*canonical_schema().feature_columns, "attackerType"]
        row = ["nan", "INF", "-inf", ""] + ["1"] * 6 + ["0"]
        d = load_csv([write_csv(tmp_path / "a.csv", header, [row])])
        assert np.isnan(d.rows[0, 0])
        assert d.rows[0, 1] == np.inf
        assert d.rows[0, 2] == -np.inf
        assert np.isnan(d.rows[0, 3])

    def test_file_order_stability(self, tmp_path):
        header = [*canonical_schema().feature_columns, "attackerType"]
        a = write_csv(tmp_path / "a.csv", header, [[1] * 10 + [0]])
        b = write_csv(tmp_path / "b.csv", header, [[2] * 10 + [1]])
        ab = load_csv([a, b])
        ba = load_csv([b, a])
        assert np.array_equal(ab.rows[0], ba.rows[1])
        assert np.array_equal(ab.rows[1], ba.rows[0])
        assert sorted(map(tuple, ab.rows)) == sorted(map(tuple, ba.rows))


class TestClean:
    def test_noop_on_clean_data_any_policy(self):
        d = make_dataset([[1, 2, 3], [4, 5, 6]], [0, 1], ["BENIGN", "ATTACK"])
        for policy in dataio.CLEAN_POLICIES:
            out = clean(d, policy)
            assert np.array_equal(out.rows, d.rows)
            assert np.array_equal(out.labels, d.labels)

    def test_median_fills_with_column_median(self):
        # median of the finite values {1, 3} is 2
        d = make_dataset([[1, 0, 0], [np.nan, 0, 0], [3, 0, 0]], [0, 0, 1], ["BENIGN", "ATTACK"])
        out = clean(d, "median")
        assert out.rows[1, 0] == 2.0
        assert out.is_clean()

    def test_drop_row_count_from_fixture(self):
        # 100 rows, 7 NaN cells spread over 7 distinct rows -> 93 survive
        rows = np.zeros((100, 3))
        for k, r in enumerate([3, 11, 25, 42, 57, 71, 98]):
            rows[r, k % 3] = np.nan
        d = make_dataset(rows, [0] * 50 + [1] * 50, ["BENIGN", "ATTACK"])
        out = clean(d, "drop_row")
        assert out.n == 93

    def test_zero_policy(self):
        d = make_dataset([[np.inf, 1, 2]], [0], ["BENIGN"])
        assert clean(d, "zero").rows[0, 0] == 0.0

    def test_inf_treated_like_nan(self):
        d = make_dataset([[1, 0, 0], [np.inf, 0, 0], [3, 0, 0]], [0, 0, 0], ["BENIGN"])
        assert clean(d, "median").rows[1, 0] == 2.0

    def test_all_nan_column_under_median_rejected(self):
        d = make_dataset([[np.nan, 1, 1], [np.nan, 2, 2]], [0, 0], ["BENIGN"])
        with pytest.raises(ValueError, match="f0"):
            clean(d, "median")

    @given(
        policy=st.sampled_from(dataio.CLEAN_POLICIES),
        data=st.lists(
            st.lists(
                st.one_of(
                    st.floats(-1e6, 1e6, allow_nan=False),
                    st.just(float("nan")),
                    st.just(float("inf")),
                ),
                min_size=3,
                max_size=3,
            ),
            min_size=1,
            max_size=20,
        ),
    )
    @settings(max_examples=60, deadline=None)
    def test_idempotent(self, policy, data):
        arr = np.asarray(data, dtype=float)
        if policy == "median" and (~np.isfinite(arr)).all(axis=0).any():
            return  # all-NaN column is a documented error case
        d = make_dataset(arr, [0] * len(data), ["BENIGN"])
        once = clean(d, policy)
        twice = clean(once, policy)
        assert once.is_clean()
        assert np.array_equal(once.rows, twice.rows)
        assert np.array_equal(once.labels, twice.labels)


class TestBinarize:
    def test_fixture_counts(self):
        # {BENIGN:5, Constant:2, Random:3} -> {BENIGN:5, ATTACK:5}
        labels = [0] * 5 + [1] * 2 + [2] * 3
        d = make_dataset(
            np.arange(30).reshape(10, 3), labels, ["BENIGN", "Constant Attack", "Random Attack"]
        )
        out = binarize(d)
        assert out.class_names == ("BENIGN", "ATTACK")
        assert out.class_counts() == {"BENIGN": 5, "ATTACK": 5}

    def test_idempotent_and_bit_exact_rows(self):
        d = make_dataset([[0.1, 0.2, 0.3]] * 4, [0, 1, 1, 0], ["BENIGN", "ATTACK"])
        out = binarize(d)
        assert out.class_names == d.class_names
        assert np.array_equal(out.labels, d.labels)
        d2 = make_dataset(np.random.default_rng(0).normal(size=(6, 3)), [0, 1, 2, 0, 1, 2],
                          ["BENIGN", "A", "B"])
        out2 = binarize(d2)
        assert out2.rows.tobytes() == d2.rows.tobytes()

    def test_requires_benign(self):
        d = make_dataset([[1, 2, 3]] * 2, [0, 1], ["A", "B"])
        with pytest.raises(ValueError, match="BENIGN"):
            binarize(d)


class TestIsolateAttack:
    def test_fixture_count(self):
        # {BENIGN:4, Constant:2, Random:3} isolating Random -> 7 rows
        labels = [0] * 4 + [1] * 2 + [2] * 3
        d = make_dataset(
            np.arange(27).reshape(9, 3), labels, ["BENIGN", "Constant Attack", "Random Attack"]
        )
        out = isolate_attack(d, "Random Attack")
        assert out.n == 7
        assert out.class_names == ("BENIGN", "Random Attack")
        assert out.class_counts() == {"BENIGN": 4, "Random Attack": 3}

    def test_noop_when_already_isolated(self):
        d = make_dataset([[1, 2, 3]] * 4, [0, 1, 0, 1], ["BENIGN", "Random Attack"])
        out = isolate_attack(d, "Random Attack")
        assert np.array_equal(out.rows, d.rows)
        assert np.array_equal(out.labels, d.labels)

    def test_unknown_attack_rejected(self):
        d = make_dataset([[1, 2, 3]] * 2, [0, 1], ["BENIGN", "Constant Attack"])
        with pytest.raises(ValueError, match="unknown attack"):
            isolate_attack(d, "Random Attack")


class TestStratifiedSplit:
    def test_exact_proportions(self):
        labels = [0] * 800 + [1] * 200
        d = make_dataset(np.zeros((1000, 3)), labels, ["A", "B"])
        pair = stratified_split(d, 0.8, seed=7)
        assert pair.train.class_counts() == {"A": 640, "B": 160}
        assert pair.test.class_counts() == {"A": 160, "B": 40}

    def test_deterministic(self):
        d = make_dataset(np.arange(60).reshape(20, 3), [0, 1] * 10, ["A", "B"])
        a = stratified_split(d, 0.7, seed=3)
        b = stratified_split(d, 0.7, seed=3)
        assert np.array_equal(a.train.rows, b.train.rows)
        assert np.array_equal(a.test.rows, b.test.rows)

    def test_small_class_within_one_row_of_ideal(self):
        d = make_dataset(np.arange(30).reshape(10, 3), [0] * 7 + [1] * 3, ["A", "B"])
        pair = stratified_split(d, 0.8, seed=0)
        test_counts = pair.test.class_counts()
        assert abs(test_counts["A"] - 1.4) <= 1.0
        assert abs(test_counts["B"] - 0.6) <= 1.0

    def test_partition_property(self):
        rng = np.random.default_rng(5)
        rows = rng.normal(size=(53, 3))
        labels = rng.integers(0, 3, size=53)
        labels[:6] = [0, 0, 1, 1, 2, 2]  # every class has >= 2 rows
        d = make_dataset(rows, labels, ["A", "B", "C"])
        pair = stratified_split(d, 0.6, seed=11)
        merged = sorted(map(tuple, np.vstack([pair.train.rows, pair.test.rows])))
        assert merged == sorted(map(tuple, rows))
        assert pair.train.n + pair.test.n == d.n

    def test_rejects_singleton_class(self):
        d = make_dataset(np.zeros((3, 3)), [0, 0, 1], ["A", "B"])
        with pytest.raises(ValueError, match="fewer than 2"):
            stratified_split(d, 0.5, seed=0)


class TestPersistence:
    def test_prepared_round_trip(self, tmp_path):
        d = make_dataset(np.random.default_rng(1).normal(size=(8, 3)), [0, 1] * 4, ["BENIGN", "ATTACK"])
        csv_path, manifest_path = save_prepared(d, tmp_path, "train", cleaning_policy="median", seed=4)
        back = read_prepared(csv_path, manifest_path)
        assert np.allclose(back.rows, d.rows)
        assert np.array_equal(back.labels, d.labels)
        assert back.class_names == d.class_names
        assert back.schema == d.schema

    def test_manifest_contents(self, tmp_path):
        import json

        d = make_dataset(np.zeros((4, 3)), [0, 0, 1, 1], ["BENIGN", "ATTACK"])
        _, manifest_path = save_prepared(d, tmp_path, "t", cleaning_policy="zero", seed=9)
        m = json.loads(manifest_path.read_text())
        assert m["row_count"] == 4
        assert m["cleaning_policy"] == "zero"
        assert m["seed"] == 9
        assert m["class_counts"] == {"BENIGN": 2, "ATTACK": 2}

    def test_canonical_csv_round_trips_through_load(self, tmp_path):
        schema = canonical_schema()
        rows = np.abs(np.random.default_rng(2).normal(size=(6, 10)))
        labels = np.array([0, 1, 2, 3, 4, 5])
        d = Dataset(rows=rows, labels=labels, schema=schema,
                    class_names=default_attack_codes().class_names())
        p = write_canonical_csv(d, tmp_path / "raw.csv")
        back = load_csv([p])
        assert np.allclose(back.rows, d.rows)
        assert np.array_equal(back.labels, d.labels)
