import numpy as np
import pytest

from fsbench.data import (
    Dataset,
    FieldSchema,
    IngestConfig,
    LabelRule,
    SyntheticSpec,
    assign_splits,
    build_vocab,
    field_value_counts,
    generate_synthetic,
    load_csv,
    load_preset,
    load_truth,
    save_csv,
    split_sizes,
)
from fsbench.errors import ConfigError, LabelError, SchemaError


class TestVocab:
    def test_frequency_order(self):
        assert build_vocab(["a", "a", "b"], min_count=1) == {"a": 1, "b": 2}

    def test_min_count_threshold(self):
        assert build_vocab(["a", "a", "b"], min_count=2) == {"a": 1}

    def test_max_vocab_cap(self):
        vocab = build_vocab(["a", "b", "c", "d", "e"], min_count=1, max_vocab=3)
        assert len(vocab) == 3
        assert set(vocab.values()) == {1, 2, 3}

    def test_ties_break_lexicographically(self):
        vocab = build_vocab(["b", "a", "c", "a", "c", "b"], min_count=1)
        assert vocab == {"a": 1, "b": 2, "c": 3}

    def test_empty_column(self):
        assert build_vocab([], min_count=1) == {}

    def test_preconditions(self):
        with pytest.raises(ConfigError):
            build_vocab(["a"], min_count=0)
        with pytest.raises(ConfigError):
            build_vocab(["a"], min_count=1, max_vocab=0)


class TestSplits:
    def test_ten_rows_721(self):
        assert split_sizes(10, (7, 2, 1)) == (7, 2, 1)

    def test_eight_rows_50_25_25(self):
        assert split_sizes(8, (2, 1, 1)) == (4, 2, 2)

    def test_sizes_within_one_of_quota(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(1, 2000))
            ratio = tuple(rng.integers(1, 10, size=3))
            sizes = split_sizes(n, ratio)
            assert sum(sizes) == n
            for s, r in zip(sizes, ratio):
                assert abs(s - n * r / sum(ratio)) < 1.0

    def test_assignment_deterministic(self):
        a = assign_splits(100, (7, 2, 1), seed=5)
        b = assign_splits(100, (7, 2, 1), seed=5)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, assign_splits(100, (7, 2, 1), seed=6))


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


class TestLoadCsv:
    def test_split_sizes_from_ratio(self, tmp_path):
        path = tmp_path / "ten.csv"
        rows = [[f"u{i % 3}", f"i{i % 2}", i % 2] for i in range(10)]
        write_csv(path, ["user", "item", "click"], rows)
        ds = load_csv(path, IngestConfig(label_column="click", seed=1))
        assert len(ds.split_indices("train")) == 7
        assert len(ds.split_indices("val")) == 2
        assert len(ds.split_indices("test")) == 1
        assert ds.field_names == ["user", "item"]

    def test_movielens_label_rule(self, tmp_path):
        path = tmp_path / "ml.csv"
        write_csv(path, ["user", "rating"], [["u1", 4], ["u2", 3], ["u3", 5]])
        rule = LabelRule(kind="threshold", gt=3)
        ds = load_csv(
            path, IngestConfig(label_column="rating", label_rule=rule, seed=0)
        )
        assert ds.labels.tolist() == [1, 0, 1]

    def test_aliccp_ratio(self, tmp_path):
        path = tmp_path / "ali.csv"
        rows = [[f"u{i}", i % 2] for i in range(8)]
        write_csv(path, ["user", "click"], rows)
        ds = load_csv(path, IngestConfig(label_column="click", ratio=(2, 1, 1)))
        assert len(ds.split_indices("train")) == 4
        assert len(ds.split_indices("val")) == 2
        assert len(ds.split_indices("test")) == 2

    def test_missing_column_named(self, tmp_path):
        path = tmp_path / "bad.csv"
        write_csv(path, ["user", "click"], [["u1", 1]])
        with pytest.raises(SchemaError, match="label"):
            load_csv(path, IngestConfig(label_column="label"))
        with pytest.raises(SchemaError, match="item"):
            load_csv(
                path,
                IngestConfig(label_column="click", field_columns=("item",)),
            )

    def test_non_binary_label_reports_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        write_csv(path, ["user", "click"], [["u1", 1], ["u2", 7]])
        with pytest.raises(LabelError, match="row 3"):
            load_csv(path, IngestConfig(label_column="click"))

    def test_vocab_is_train_split_pure(self, tmp_path):
        # identical train rows, different test rows: same encoding
        header = ["user", "click"]
        base = [[f"u{i}", i % 2] for i in range(9)]
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        cfg = IngestConfig(label_column="click", ratio=(7, 1, 1), seed=3)
        split = assign_splits(9, (7, 1, 1), seed=3)
        test_pos = int(np.flatnonzero(split == 2)[0])
        rows2 = [list(r) for r in base]
        rows2[test_pos][0] = "unseen-user"
        write_csv(p1, header, base)
        write_csv(p2, header, rows2)
        d1, d2 = load_csv(p1, cfg), load_csv(p2, cfg)
        assert [f.vocab_size for f in d1.schema] == [f.vocab_size for f in d2.schema]
        train = d1.split_indices("train")
        assert np.array_equal(d1.features[train], d2.features[train])
        assert d2.features[test_pos, 0] == 0  # unseen value fell into OOV

    def test_numeric_bucketization(self, tmp_path):
        path = tmp_path / "num.csv"
        rows = [[i / 10.0, "c", i % 2] for i in range(40)]
        write_csv(path, ["amount", "cat", "click"], rows)
        cfg = IngestConfig(
            label_column="click", numeric_columns=("amount",), numeric_bins=4
        )
        ds = load_csv(path, cfg)
        amount = ds.schema[ds.field_index("amount")]
        assert 2 <= amount.vocab_size <= 6  # a few quantile bins plus OOV


class TestSynthetic:
    def spec(self, **kw):
        base = dict(
            n_fields=4,
            n_informative=2,
            vocab_sizes=(8, 8, 8, 8),
            n_samples=2000,
            noise_sigma=0.2,
            seed=1,
        )
        base.update(kw)
        return SyntheticSpec(**base)

    def test_reproducible(self):
        d1, t1 = generate_synthetic(self.spec())
        d2, t2 = generate_synthetic(self.spec())
        assert np.array_equal(d1.features, d2.features)
        assert np.array_equal(d1.labels, d2.labels)
        assert t1 == t2

    def test_truth_order_informative_first(self):
        _, truth = generate_synthetic(self.spec())
        assert truth[:2] == ["f00", "f01"]

    def test_invalid_informative_count(self):
        with pytest.raises(ConfigError):
            self.spec(n_informative=5)

    def test_no_informative_fields_gives_chance_labels(self):
        ds, _ = generate_synthetic(
            self.spec(n_informative=0, n_samples=20000, noise_sigma=0.0)
        )
        # label is a fair coin, independent of every field
        assert abs(ds.labels.mean() - 0.5) < 0.02

    def test_mutual_information_orders_fields(self):
        ds, truth = generate_synthetic(
            self.spec(n_samples=100_000, n_fields=5, n_informative=2,
                      vocab_sizes=(8, 8, 8, 8, 8))
        )

        def mutual_information(col, labels):
            joint = np.zeros((col.max() + 1, 2))
            np.add.at(joint, (col, labels), 1.0)
            joint /= joint.sum()
            px = joint.sum(axis=1, keepdims=True)
            py = joint.sum(axis=0, keepdims=True)
            nz = joint > 0
            return float(np.sum(joint[nz] * np.log(joint[nz] / (px @ py)[nz])))

        mi = [
            mutual_information(ds.features[:, j], ds.labels.astype(int))
            for j in range(5)
        ]
        informative = mi[:2]
        noise = mi[2:]
        assert min(informative) > max(noise)

    def test_csv_round_trip_with_sidecar(self, tmp_path):
        ds, truth = generate_synthetic(self.spec(n_samples=300))
        path = tmp_path / "synth.csv"
        save_csv(ds, path, truth)
        assert load_truth(str(path) + ".truth") == truth
        cfg = IngestConfig(label_column="label", seed=9)
        loaded = load_csv(path, cfg)
        assert loaded.rows == 300
        assert loaded.field_names == ds.field_names


class TestFieldValueCounts:
    def make(self, column, split):
        schema = [FieldSchema("f", int(max(column)) + 1)]
        return Dataset(
            schema=schema,
            features=np.array(column, dtype=np.int32).reshape(-1, 1),
            labels=np.zeros(len(column), dtype=np.int8),
            split_assignment=np.array(split, dtype=np.int8),
        )

    def test_counts(self):
        ds = self.make([1, 1, 2], [0, 0, 0])
        assert field_value_counts(ds, "f") == {1: 2, 2: 1}

    def test_all_oov(self):
        ds = self.make([0, 0, 0], [0, 0, 1])
        assert field_value_counts(ds, "f") == {0: 2}

    def test_unknown_field(self):
        ds = self.make([0], [0])
        with pytest.raises(SchemaError):
            field_value_counts(ds, "nope")

    def test_sum_is_train_rows(self):
        ds, _ = generate_synthetic(
            SyntheticSpec(
                n_fields=2,
                n_informative=1,
                vocab_sizes=(6, 6),
                n_samples=1000,
                seed=0,
            )
        )
        counts = field_value_counts(ds, "f00")
        assert sum(counts.values()) == 700


class TestPresets:
    @pytest.mark.parametrize("name", ["avazu", "criteo", "movielens1m", "aliccp"])
    def test_presets_load(self, name):
        cfg = load_preset(name)
        assert isinstance(cfg, IngestConfig)

    def test_movielens_threshold_rule(self):
        cfg = load_preset("movielens1m")
        assert cfg.label_rule.kind == "threshold"
        assert cfg.label_rule.gt == 3

    def test_aliccp_ratio(self):
        cfg = load_preset("aliccp")
        assert tuple(cfg.ratio) == (2, 1, 1)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            load_preset("not-a-dataset")


class TestDatasetInvariants:
    def test_label_values_checked(self):
        with pytest.raises(LabelError):
            Dataset(
                schema=[FieldSchema("f", 2)],
                features=np.zeros((2, 1), dtype=np.int32),
                labels=np.array([0, 2], dtype=np.int8),
                split_assignment=np.zeros(2, dtype=np.int8),
            )

    def test_feature_bounds_checked(self):
        with pytest.raises(SchemaError):
            Dataset(
                schema=[FieldSchema("f", 2)],
                features=np.array([[5]], dtype=np.int32),
                labels=np.array([0], dtype=np.int8),
                split_assignment=np.zeros(1, dtype=np.int8),
            )

    def test_subset_schema_keeps_rows(self):
        ds, _ = generate_synthetic(
            SyntheticSpec(
                n_fields=3,
                n_informative=1,
                vocab_sizes=(4, 4, 4),
                n_samples=50,
                seed=2,
            )
        )
        sub = ds.subset_schema(["f02", "f00"])
        assert sub.field_names == ["f00", "f02"]
        assert np.array_equal(sub.features[:, 0], ds.features[:, 0])
        assert np.array_equal(sub.features[:, 1], ds.features[:, 2])
