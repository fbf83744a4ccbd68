import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsbench.errors import ConfigError, NumericError
from fsbench.metrics import (
    KCurve,
    Segment,
    SegmentedCurve,
    auc,
    aukc,
    aukc_segmented,
    aukc_uniform,
    format_percent,
    logloss,
    memory_remain,
    spearman,
)
from fsbench.data import FieldSchema
from fsbench.ranking import ImportanceRanking, make_ranking


def pairwise_auc(scores, labels):
    """Independent oracle: concordant pair fraction, ties count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestAuc:
    def test_perfect_separation(self):
        assert auc([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0]) == 1.0

    def test_single_pair(self):
        assert auc([0.7, 0.3], [1, 0]) == 1.0
        assert auc([0.3, 0.7], [1, 0]) == 0.0

    def test_three_of_four_pairs_concordant(self):
        assert auc([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == 0.75

    def test_single_class_rejected(self):
        with pytest.raises(NumericError):
            auc([0.2, 0.4], [1, 1])

    def test_matches_pairwise_oracle_with_ties(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            n = int(rng.integers(2, 51))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            # coarse grid forces tied predictions
            scores = rng.integers(0, 5, size=n) / 4.0
            assert auc(scores, labels) == pytest.approx(
                pairwise_auc(scores, labels), abs=1e-12
            )


class TestLogloss:
    def test_half_is_ln2(self):
        assert logloss([0.5], [1]) == pytest.approx(math.log(2), abs=1e-12)

    def test_hand_value(self):
        expected = -0.5 * (math.log(0.8) + math.log(0.8))
        assert logloss([0.8, 0.2], [1, 0]) == pytest.approx(expected, abs=1e-12)

    def test_clamped_perfect_prediction_finite(self):
        value = logloss([1.0, 0.0], [1, 0])
        assert 0 < value < 1e-6

    def test_length_mismatch(self):
        with pytest.raises(ConfigError):
            logloss([0.5], [1, 0])


def curve(aucs, total=None, k_values=None):
    total = total if total is not None else len(aucs)
    ks = k_values if k_values is not None else range(1, len(aucs) + 1)
    return KCurve(
        points=tuple((k, a, 0.5) for k, a in zip(ks, aucs)), total_fields=total
    )


class TestAukc:
    def test_chance_curve_is_zero(self):
        assert aukc_uniform(curve([0.5, 0.5, 0.5])) == pytest.approx(0.0, abs=1e-12)

    def test_hand_value(self):
        assert aukc_uniform(curve([0.6, 0.7, 0.8, 0.8])) == pytest.approx(
            0.375, abs=1e-12
        )

    def test_supremum_below_one(self):
        assert aukc_uniform(curve([1.0] * 5)) == pytest.approx(0.9, abs=1e-12)

    def test_uniform_requires_every_k(self):
        partial = curve([0.7, 0.8], total=4, k_values=[2, 4])
        with pytest.raises(ConfigError, match="segmented"):
            aukc_uniform(partial)

    def test_segmented_hand_value(self):
        partial = curve([0.7, 0.8, 0.8], total=6, k_values=[2, 4, 6])
        assert aukc_segmented(partial) == pytest.approx(2.6 / 6, abs=1e-12)

    def test_single_segment_chance(self):
        seg = SegmentedCurve(
            segments=(Segment(0, 6, 0.5, 0.5),), total_fields=6
        )
        assert aukc_segmented(seg) == pytest.approx(0.0, abs=1e-12)

    def test_unit_segments_equal_uniform_form(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            total = int(rng.integers(1, 12))
            aucs = rng.uniform(0.0, 1.0, size=total)
            c = curve(list(aucs))
            assert aukc_segmented(c) == pytest.approx(
                aukc_uniform(c), abs=1e-12
            )

    def test_gap_detected(self):
        seg = SegmentedCurve(
            segments=(Segment(0, 2, 0.5, 0.7), Segment(3, 6, 0.7, 0.8)),
            total_fields=6,
        )
        with pytest.raises(ConfigError, match="k=2"):
            aukc_segmented(seg)

    def test_dispatch_picks_form(self):
        full = curve([0.6, 0.7, 0.8])
        assert aukc(full) == aukc_uniform(full)
        partial = curve([0.7, 0.8], total=4, k_values=[2, 4])
        assert aukc(partial) == aukc_segmented(partial)

    def test_below_chance_contributions_allowed(self):
        assert aukc_uniform(curve([0.4, 0.4])) < 0

    @given(
        st.lists(st.floats(min_value=0.5, max_value=1.0), min_size=1, max_size=10)
    )
    @settings(max_examples=50, deadline=None)
    def test_range_for_above_chance_curves(self, aucs):
        total = len(aucs)
        value = aukc_uniform(curve(aucs))
        assert -1e-12 <= value <= (total - 0.5) / total + 1e-12


class TestSpearman:
    def make(self, names, scores):
        return make_ranking(list(names), scores, method="test")

    def test_self_similarity(self):
        r = self.make("abc", [3.0, 2.0, 1.0])
        assert spearman(r, r) == pytest.approx(1.0, abs=1e-12)

    def test_reversal(self):
        r1 = self.make("abc", [3.0, 2.0, 1.0])
        r2 = self.make("abc", [1.0, 2.0, 3.0])
        assert spearman(r1, r2) == pytest.approx(-1.0, abs=1e-12)

    def test_hand_value_single_swap(self):
        # rank vectors (1,2,3) vs (2,1,3): rho = 1 - 6*2/(3*8) = 0.5
        r1 = self.make("abc", [3.0, 2.0, 1.0])
        r2 = self.make("abc", [2.0, 3.0, 1.0])
        assert spearman(r1, r2) == pytest.approx(0.5, abs=1e-12)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(3)
        scores = rng.normal(size=8)
        names = [f"f{i}" for i in range(8)]
        r1 = self.make(names, scores)
        r2 = self.make(names, np.exp(scores))
        other = self.make(names, rng.normal(size=8))
        assert spearman(r1, other) == pytest.approx(spearman(r2, other), abs=1e-12)
        assert spearman(r1, other) == pytest.approx(spearman(other, r1), abs=1e-12)

    def test_field_mismatch_names_difference(self):
        r1 = self.make("abc", [1.0, 2.0, 3.0])
        r2 = self.make("abd", [1.0, 2.0, 3.0])
        with pytest.raises(ConfigError, match="'c'"):
            spearman(r1, r2)


class TestMemoryRemain:
    schema = [FieldSchema("a", 100), FieldSchema("b", 900)]

    def test_full_selection(self):
        assert memory_remain(self.schema, selected_fields=["a", "b"]) == 1.0
        assert format_percent(1.0) == "100.00000%"

    def test_single_field_ratio(self):
        assert memory_remain(self.schema, selected_fields=["a"]) == pytest.approx(0.1)

    def test_value_mask_half(self):
        mask = {
            "a": np.arange(100) < 50,
            "b": np.arange(900) < 450,
        }
        assert memory_remain(self.schema, value_mask=mask) == pytest.approx(0.5)

    def test_unknown_field(self):
        with pytest.raises(ConfigError):
            memory_remain(self.schema, selected_fields=["zzz"])

    def test_monotone_in_fields(self):
        one = memory_remain(self.schema, selected_fields=["a"])
        both = memory_remain(self.schema, selected_fields=["a", "b"])
        assert both >= one

    def test_percent_format_examples(self):
        assert format_percent(0.6873103) == "68.73103%"
        assert format_percent(0.0000010) == "0.00010%"


class TestRanking:
    def test_tie_break_is_declaration_order(self):
        r = make_ranking(["x", "y", "z"], [1.0, 1.0, 2.0], method="m")
        assert r.fields == ["z", "x", "y"]
        assert r.tiebreak == "declaration_order"

    def test_round_trip(self, tmp_path):
        r = make_ranking(["x", "y"], [0.25, 1.5], method="m", seed=3)
        path = tmp_path / "rank.tsv"
        r.save(path)
        loaded = ImportanceRanking.load(path, method="m", seed=3)
        assert loaded.entries == r.entries

    def test_top_k_bounds(self):
        r = make_ranking(["x", "y"], [2.0, 1.0], method="m")
        assert r.top_k(1) == ["x"]
        with pytest.raises(ConfigError):
            r.top_k(3)

    def test_non_finite_scores_rejected(self):
        with pytest.raises(NumericError):
            make_ranking(["x"], [float("nan")], method="m")
