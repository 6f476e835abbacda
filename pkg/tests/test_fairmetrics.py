import numpy as np
import pytest

from fairwhiten.errors import (
    EmptyBiasGroup,
    EmptyConditionCell,
    EmptyGroupCell,
    ValidationError,
)
from fairwhiten.fairmetrics import (
    REPORT_CSV_COLUMNS,
    EoPolicy,
    PredictionRecord,
    accuracy_suite,
    delta_dp,
    delta_eo,
    fairness_report,
    group_accuracy_table,
    report_csv_row,
    report_to_dict,
    weighted_mean_accuracy,
)


def records_from_counts(spec):
    """Build aligned label vectors from {(y_hat, y, b): count}."""
    y_hat, y, b = [], [], []
    for (yh, yy, bb), count in spec.items():
        y_hat.extend([yh] * count)
        y.extend([yy] * count)
        b.extend([bb] * count)
    n_classes = max(max(y_hat), max(y)) + 1
    n_bias = max(b) + 1
    return PredictionRecord(
        y_hat=np.array(y_hat), y=np.array(y), b=np.array(b),
        n_classes=n_classes, n_bias=n_bias,
    )


class TestDeltaDp:
    def test_hand_fixture_exact(self):
        # P(Y_hat=1 | B=0) = 0.8, P(Y_hat=1 | B=1) = 0.6 -> exactly 0.2
        rec = records_from_counts({
            (1, 0, 0): 8, (0, 0, 0): 2,
            (1, 0, 1): 6, (0, 0, 1): 4,
        })
        rec = PredictionRecord(rec.y_hat, rec.y, rec.b, n_classes=2, n_bias=2)
        assert delta_dp(rec) == 0.2

    def test_independent_predictions_exact_zero(self):
        # identical conditional histograms across bias groups
        rec = records_from_counts({
            (0, 0, 0): 6, (1, 0, 0): 4,
            (0, 0, 1): 3, (1, 0, 1): 2,
        })
        assert delta_dp(rec) == 0.0

    def test_prediction_equals_bias_is_one(self):
        rec = records_from_counts({
            (0, 0, 0): 7, (1, 1, 1): 5,
        })
        assert delta_dp(rec) == 1.0

    def test_empty_bias_group(self):
        rec = PredictionRecord(
            y_hat=np.array([0, 1]), y=np.array([0, 1]), b=np.array([0, 0]),
            n_classes=2, n_bias=2,
        )
        with pytest.raises(EmptyBiasGroup) as excinfo:
            delta_dp(rec)
        assert excinfo.value.b == 1


class TestDeltaEo:
    def test_perfect_classifier_zero(self):
        rec = records_from_counts({
            (0, 0, 0): 9, (0, 0, 1): 2, (1, 1, 0): 3, (1, 1, 1): 8,
        })
        assert delta_eo(rec) == 0.0

    def test_hand_fixture_exact(self):
        # TPR 0.9 vs 0.5 for class 1; class-0 rates equal -> (0.4 + 0)/2 = 0.2
        rec = records_from_counts({
            (1, 1, 0): 9, (0, 1, 0): 1,     # y=1, b=0: rate 0.9
            (1, 1, 1): 5, (0, 1, 1): 5,     # y=1, b=1: rate 0.5
            (0, 0, 0): 8, (1, 0, 0): 2,     # y=0, b=0: rate 0.8
            (0, 0, 1): 8, (1, 0, 1): 2,     # y=0, b=1: rate 0.8
        })
        assert delta_eo(rec) == 0.2

    def test_constant_predictor_zero(self):
        rec = records_from_counts({
            (0, 0, 0): 4, (0, 0, 1): 6, (0, 1, 0): 5, (0, 1, 1): 3,
        })
        assert delta_eo(rec) == 0.0

    def test_empty_condition_cell_error_policy(self):
        rec = records_from_counts({
            (0, 0, 0): 4, (0, 0, 1): 4, (1, 1, 0): 4,  # no (y=1, b=1) records
        })
        with pytest.raises(EmptyConditionCell) as excinfo:
            delta_eo(rec, EoPolicy.ERROR)
        assert excinfo.value.y == 1 and excinfo.value.b == 1

    def test_skip_class_policy_drops_and_records(self):
        rec = records_from_counts({
            (0, 0, 0): 8, (0, 0, 1): 4, (1, 0, 1): 4,  # class 1 unobserved
            (1, 1, 0): 4,
        })
        # class 0: rates 1.0 vs 0.5 -> gap 0.5; class 1 skipped
        assert delta_eo(rec, EoPolicy.SKIP_CLASS) == 0.5
        from fairwhiten.fairmetrics import eo_class_gaps

        gaps = eo_class_gaps(rec, EoPolicy.SKIP_CLASS)
        assert gaps[1] is None


class TestAccuracySuite:
    def test_hand_example(self):
        # cell accuracies {(0,0): 1.0, (0,1): 0.5, (1,0): 0.5, (1,1): 1.0}
        rec = records_from_counts({
            (0, 0, 0): 4,
            (0, 0, 1): 2, (1, 0, 1): 2,
            (1, 1, 0): 2, (0, 1, 0): 2,
            (1, 1, 1): 4,
        })
        suite = accuracy_suite(rec, [(0, 1), (1, 0)])
        assert suite.acc_unbiased == 0.75
        assert suite.acc_conflicting == 0.5
        assert suite.acc_worst_group == 0.5

    def test_perfect_predictor(self):
        rec = records_from_counts({
            (0, 0, 0): 3, (0, 0, 1): 3, (1, 1, 0): 3, (1, 1, 1): 3,
        })
        suite = accuracy_suite(rec, [(0, 1), (1, 0)])
        assert suite.acc_unbiased == 1.0
        assert suite.acc_conflicting == 1.0
        assert suite.acc_worst_group == 1.0

    def test_correct_on_single_cell(self):
        rec = records_from_counts({
            (0, 0, 0): 5,
            (1, 0, 1): 5,
            (0, 1, 0): 5,
            (0, 1, 1): 5,
        })
        suite = accuracy_suite(rec, [(0, 1), (1, 0)])
        assert suite.acc_worst_group == 0.0
        assert suite.acc_unbiased == 0.25

    def test_conflicting_set_validation(self):
        rec = records_from_counts({
            (0, 0, 0): 1, (0, 0, 1): 1, (1, 1, 0): 1, (1, 1, 1): 1,
        })
        with pytest.raises(ValidationError):
            accuracy_suite(rec, [])
        with pytest.raises(ValidationError):
            accuracy_suite(rec, [(0, 1), (0, 1)])
        with pytest.raises(ValidationError):
            accuracy_suite(rec, [(0, 5)])

    def test_empty_cell_rejected(self):
        rec = records_from_counts({
            (0, 0, 0): 1, (0, 0, 1): 1, (1, 1, 0): 1,
        })
        with pytest.raises(EmptyGroupCell):
            accuracy_suite(rec, [(0, 1)])


class TestWeightedMeanAccuracy:
    def _rec(self):
        return records_from_counts({
            (0, 0, 0): 4,                      # cell (0,0) accuracy 1.0
            (1, 0, 1): 4,                      # cell (0,1) accuracy 0.0
            (0, 1, 0): 4,                      # cell (1,0) accuracy 0.0
            (1, 1, 1): 4,                      # cell (1,1) accuracy 1.0
        })

    def test_uniform_equals_unbiased(self):
        rec = self._rec()
        suite = accuracy_suite(rec, [(0, 1), (1, 0)])
        assert weighted_mean_accuracy(rec, np.full((2, 2), 0.25)) == suite.acc_unbiased

    def test_single_cell_mass(self):
        probs = np.zeros((2, 2))
        probs[0, 0] = 1.0
        assert weighted_mean_accuracy(self._rec(), probs) == 1.0

    def test_hand_value(self):
        probs = np.array([[0.45, 0.05], [0.05, 0.45]])
        assert weighted_mean_accuracy(self._rec(), probs) == 0.9

    def test_probability_validation(self):
        with pytest.raises(ValidationError):
            weighted_mean_accuracy(self._rec(), np.full((2, 2), 0.3))


class TestEquivalenceClaim:
    def test_independent_labels_make_dp_equal_eo(self, rng):
        # empirically independent joint counts: counts = outer(marginals)/N
        y_marginal = np.array([20, 30])
        b_marginal = np.array([25, 25])
        y, b = [], []
        for yi in range(2):
            for bi in range(2):
                count = y_marginal[yi] * b_marginal[bi] // 50
                y.extend([yi] * count)
                b.extend([bi] * count)
        y = np.array(y)
        b = np.array(b)
        for f in (lambda v: v, lambda v: 1 - v, lambda v: np.zeros_like(v)):
            rec = PredictionRecord(y_hat=f(y), y=y, b=b, n_classes=2, n_bias=2)
            assert abs(delta_dp(rec) - delta_eo(rec)) <= 1e-12

    def test_dependent_labels_separate_the_metrics(self):
        # biased joint: a perfect predictor has EO 0 but DP far from 0
        rec = records_from_counts({
            (0, 0, 0): 45, (1, 1, 1): 45, (0, 0, 1): 5, (1, 1, 0): 5,
        })
        assert delta_eo(rec) == 0.0
        assert delta_dp(rec) == 0.8


class TestStructuralProperties:
    def _random_records(self, rng, n=300):
        return PredictionRecord(
            y_hat=rng.integers(0, 2, n),
            y=rng.integers(0, 2, n),
            b=rng.integers(0, 2, n),
            n_classes=2,
            n_bias=2,
        )

    def test_metrics_lie_in_unit_interval(self, rng):
        for _ in range(10):
            rec = self._random_records(rng)
            report = fairness_report(rec, [(0, 1), (1, 0)])
            for value in (
                report.delta_dp,
                report.delta_eo,
                report.acc_unbiased,
                report.acc_conflicting,
                report.acc_worst_group,
            ):
                assert 0.0 <= value <= 1.0

    def test_bias_relabeling_equivariance(self, rng):
        rec = self._random_records(rng)
        swapped = PredictionRecord(
            y_hat=rec.y_hat, y=rec.y, b=1 - rec.b, n_classes=2, n_bias=2
        )
        assert delta_dp(rec) == delta_dp(swapped)
        assert delta_eo(rec) == delta_eo(swapped)
        acc_a, _ = group_accuracy_table(rec)
        acc_b, _ = group_accuracy_table(swapped)
        assert np.array_equal(acc_a, acc_b[:, ::-1])

    def test_worst_group_bounds(self, rng):
        for _ in range(10):
            rec = self._random_records(rng)
            suite = accuracy_suite(rec, [(0, 1), (1, 0)])
            assert suite.acc_worst_group <= suite.acc_conflicting + 1e-15
            assert suite.acc_worst_group <= suite.acc_unbiased + 1e-15


class TestReportSerialization:
    def test_report_dict_and_csv_row(self):
        rec = records_from_counts({
            (0, 0, 0): 4, (0, 0, 1): 2, (1, 0, 1): 2,
            (1, 1, 0): 2, (0, 1, 0): 2, (1, 1, 1): 4,
        })
        report = fairness_report(rec, [(0, 1), (1, 0)])
        doc = report_to_dict(report)
        assert doc["acc_unbiased"] == 0.75
        assert len(doc["group_table"]) == 2

        row = report_csv_row(report, "arm/seed0/test", 0.25, "zca", 5, 0)
        assert len(row) == len(REPORT_CSV_COLUMNS)
        assert row[0] == "arm/seed0/test"
        assert row[1] == "0.25"
        assert float(row[7]) == 0.75

    def test_absent_fields_serialize_empty(self):
        rec = records_from_counts({
            (0, 0, 0): 1, (0, 0, 1): 1, (1, 1, 0): 1, (1, 1, 1): 1,
        })
        report = fairness_report(rec, [(0, 1)])
        row = report_csv_row(report, "vanilla/seed0/train", None, "vanilla", None, 0)
        assert row[1] == "" and row[3] == ""
