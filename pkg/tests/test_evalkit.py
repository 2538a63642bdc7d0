import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ildnet import evalkit
from ildnet.errors import DataError, ParameterError, UndefinedMetricError
from ildnet.evalkit import (PredictionRecord, choose_thresholds, multilabel_metrics, multilabel_metrics_sets,
                            patient_folds, per_class_f1, pr_curve, records_to_arrays, roc_auc, slice_folds)
from oracles import average_precision_sweep, multilabel_sets, pairwise_auc

CLASSES = ("GroundGlass", "Reticular", "Honeycomb", "Emphysema")


def random_records(seed, n=30, c=4):
    rng = np.random.default_rng(seed)
    truth = (rng.random((n, c)) < 0.4).astype(int)
    scores = np.round(rng.random((n, c)), 2)  # rounding creates ties
    return truth, scores


class TestMultilabel:
    def test_perfect(self):
        t = np.array([[1, 0, 1, 0], [0, 0, 0, 0]])
        m = multilabel_metrics(t, t.astype(float), 0.5)
        assert m == {"accuracy": 1.0, "precision": 1.0, "recall": 1.0, "f1": 1.0}

    def test_worked_example(self):
        m = multilabel_metrics_sets([[1, 1, 0, 0]], [[0, 1, 1, 0]])
        assert m["accuracy"] == pytest.approx(1 / 3)
        assert m["precision"] == m["recall"] == m["f1"] == 0.5

    def test_empty_set_conventions(self):
        # healthy predicted healthy: perfect; healthy predicted sick: zero
        m = multilabel_metrics_sets([[0, 0, 0, 0], [0, 0, 0, 0]], [[0, 0, 0, 0], [1, 0, 0, 0]])
        assert m["accuracy"] == 0.5 and m["precision"] == 0.5 and m["recall"] == 0.5
        # sick predicted healthy
        m = multilabel_metrics_sets([[1, 0, 0, 0]], [[0, 0, 0, 0]])
        assert m == {"accuracy": 0.0, "precision": 0.0, "recall": 0.0, "f1": 0.0}

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_set_oracle(self, seed):
        truth, scores = random_records(seed)
        thr = np.random.default_rng(seed + 100).random(4)
        ours = multilabel_metrics(truth, scores, thr)
        ref = multilabel_sets(truth, scores >= thr)
        for k in ref:
            assert abs(ours[k] - ref[k]) <= 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**6))
    def test_bounds(self, seed):
        truth, scores = random_records(seed, n=12)
        m = multilabel_metrics(truth, scores, 0.5)
        assert all(0 <= v <= 1 for v in m.values())
        assert m["accuracy"] <= min(m["precision"], m["recall"]) + 1e-15

    def test_single_label_reduces_to_accuracy(self):
        rng = np.random.default_rng(0)
        t = np.eye(4, dtype=int)[rng.integers(0, 4, 50)]
        p = np.eye(4)[np.where(rng.random(50) < 0.7, t.argmax(1), rng.integers(0, 4, 50))]
        assert multilabel_metrics(t, p, 0.5)["accuracy"] == pytest.approx(np.mean(t.argmax(1) == p.argmax(1)))

    def test_records(self):
        recs = [PredictionRecord("s1", "p1", [0.9, 0.1, 0, 0], [1, 0, 0, 0]),
                PredictionRecord("s2", "p1", [0.2, 0.8, 0, 0], [0, 1, 0, 0])]
        t, s = records_to_arrays(recs)
        assert t.shape == s.shape == (2, 4)
        assert multilabel_metrics(t, s, 0.5)["f1"] == 1.0

    def test_empty_input(self):
        with pytest.raises(DataError):
            multilabel_metrics(np.zeros((0, 4)), np.zeros((0, 4)), 0.5)


class TestPerClass:
    @pytest.mark.parametrize("seed", range(20))
    def test_confusion_oracle(self, seed):
        truth, scores = random_records(seed, n=25)
        for k in range(4):
            r = per_class_f1(truth, scores, k, 0.5)
            tp = fp = fn = 0
            for t, s in zip(truth[:, k], scores[:, k]):
                p = s >= 0.5
                tp += t and p
                fp += (not t) and p
                fn += t and not p
            prec = tp / (tp + fp) if tp + fp else 0.0
            rec = tp / (tp + fn) if tp + fn else 0.0
            assert r["precision"] == prec and r["recall"] == rec
            assert r["f1"] == pytest.approx(2 * prec * rec / (prec + rec) if prec + rec else 0.0)

    def test_degenerate(self):
        t = np.array([[1, 0, 0, 0], [0, 0, 0, 0]])
        r = per_class_f1(t, np.zeros((2, 4)), 0, 0.5)
        assert r == {"precision": 0.0, "recall": 0.0, "f1": 0.0, "degenerate": True}
        r = per_class_f1(t, np.zeros((2, 4)), 1, 0.5)
        assert r["f1"] == 0.0 and r["degenerate"]
        r = per_class_f1(t, t.astype(float), 0, 0.5)
        assert r["f1"] == 1.0 and not r["degenerate"]


class TestRoc:
    def test_perfect_and_ties(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]).area == 1.0
        assert roc_auc([0.5] * 6, [0, 1, 0, 1, 1, 0]).area == 0.5

    @pytest.mark.parametrize("seed", range(25))
    def test_pairwise_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 60))
        y = rng.random(n) < 0.4
        y[0], y[1] = True, False
        s = np.round(rng.normal(size=n) + y, 1)
        assert abs(roc_auc(s, y).area - pairwise_auc(s, y)) < 1e-9

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6))
    def test_monotone_transform_invariance(self, seed):
        rng = np.random.default_rng(seed)
        y = np.r_[1, 0, rng.random(20) < 0.5]
        s = rng.normal(size=22)
        assert roc_auc(s, y).area == pytest.approx(roc_auc(np.exp(3 * s) + 7, y).area, abs=1e-12)

    def test_curve_endpoints(self):
        c = roc_auc([0.3, 0.6, 0.6, 0.9], [0, 1, 0, 1])
        assert (c.x[0], c.y[0]) == (0.0, 0.0) and (c.x[-1], c.y[-1]) == (1.0, 1.0)
        assert np.all(np.diff(c.x) >= 0) and np.all(np.diff(c.y) >= 0)
        assert len(c.thresholds) == 4  # three distinct scores plus the start point

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError):
            roc_auc([0.1, 0.2], [1, 1])


class TestPr:
    def test_perfect_and_all_positive(self):
        assert pr_curve([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]).area == 1.0
        c = pr_curve([0.3, 0.1, 0.7], [1, 1, 1])
        assert np.all(c.y == 1.0) and c.area == 1.0

    @pytest.mark.parametrize("seed", range(20))
    def test_sweep_oracle(self, seed):
        rng = np.random.default_rng(seed)
        y = np.r_[1, rng.random(30) < 0.3]
        s = np.round(rng.random(31) + 0.3 * y, 1)
        assert abs(pr_curve(s, y).area - average_precision_sweep(s, y)) < 1e-9

    def test_no_positives(self):
        with pytest.raises(UndefinedMetricError):
            pr_curve([0.1, 0.2], [0, 0])


class TestFolds:
    def test_ten_patients(self):
        folds = patient_folds([f"p{i}" for i in range(10)], 5, seed=0)
        assert [len(f) for f in folds] == [2] * 5

    @settings(max_examples=40, deadline=None)
    @given(st.integers(5, 60), st.integers(2, 5), st.integers(0, 1000))
    def test_partition(self, n, k, seed):
        pids = [f"p{i}" for i in range(n)]
        folds = patient_folds(pids, k, seed)
        flat = [p for f in folds for p in f]
        assert sorted(flat) == sorted(pids) and len(set(flat)) == n
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1
        assert folds == patient_folds(pids, k, seed)

    def test_slices_follow_patient(self):
        pids = [f"p{i % 7}" for i in range(40)]
        folds = patient_folds(pids, 5, 3)
        of = slice_folds(pids, folds)
        for p in set(pids):
            assert len({of[i] for i, q in enumerate(pids) if q == p}) == 1

    def test_errors(self):
        with pytest.raises(DataError):
            patient_folds(["a", "b", "c"], 5)
        with pytest.raises(ParameterError):
            patient_folds(["a", "b"], 1)
        with pytest.raises(DataError):
            slice_folds(["zz"], [["a"], ["b"]])


class TestThresholds:
    def test_never_worse_than_default(self):
        for seed in range(5):
            truth, scores = random_records(seed, n=40)
            scores = scores + 0.3 * truth
            thr = choose_thresholds(truth, scores)
            assert multilabel_metrics(truth, scores, thr)["f1"] >= multilabel_metrics(truth, scores, 0.5)["f1"]

    def test_separable(self):
        truth = np.array([[1, 0, 0, 1], [0, 1, 0, 0], [0, 0, 0, 0], [1, 1, 1, 1]])
        scores = truth * 2.0 + 0.1
        thr = choose_thresholds(truth, scores)
        assert multilabel_metrics(truth, scores, thr)["f1"] == 1.0


class TestReports:
    def report(self):
        truth, scores = random_records(3, n=40)
        return evalkit.evaluate(truth, scores + 0.2 * truth, [0.5] * 4, CLASSES)

    def test_csv_layout(self):
        text = evalkit.report_csv(self.report(), "ildnet 0.1.0 seed=0 config_hash=abc")
        lines = text.splitlines()
        assert lines[0] == "# ildnet 0.1.0 seed=0 config_hash=abc"
        assert lines[1] == ",".join(evalkit.REPORT_COLUMNS)
        assert [l.split(",")[0] for l in lines[2:]] == list(CLASSES) + ["overall"]
        for l in lines[2:]:
            assert len(l.split(",")) == len(evalkit.REPORT_COLUMNS)

    def test_values_and_nan_auc(self):
        truth = np.array([[1, 0, 1, 0], [0, 0, 1, 1], [1, 0, 1, 0]])
        rep = evalkit.evaluate(truth, truth * 0.9, [0.5] * 4, CLASSES)
        assert rep.per_class[0]["auc"] == 1.0
        assert np.isnan(rep.per_class[1]["auc"]) and np.isnan(rep.per_class[2]["auc"])
        assert rep.overall["mean_auc"] == 1.0
        assert "nan" in evalkit.report_csv(rep)

    def test_curves_csv_and_svg(self):
        rep = self.report()
        text = evalkit.curves_csv(rep)
        assert text.splitlines()[0] == "class,curve,threshold,x,y"
        assert {l.split(",")[1] for l in text.splitlines()[1:]} == {"roc", "pr"}
        svg = evalkit.curves_svg(rep.roc, "ROC", "fpr", "tpr")
        assert svg.startswith("<svg") and svg.count("<polyline") == 4
        assert svg == evalkit.curves_svg(rep.roc, "ROC", "fpr", "tpr")
