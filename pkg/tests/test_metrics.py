import numpy as np
import pytest

from fluencykit.evaluation.metrics import (
    LengthMismatch,
    OutOfRange,
    TooFewSamples,
    bucket_score,
    confusion_matrix,
    kfold_split,
    macro_f1,
    micro_f1,
    pearson,
)


def reference_macro_f1(preds, labels, n_classes=3):
    """Brute-force re-derivation from per-class counts."""
    f1s = []
    for c in range(n_classes):
        tp = sum(1 for p, y in zip(preds, labels) if p == c and y == c)
        fp = sum(1 for p, y in zip(preds, labels) if p == c and y != c)
        fn = sum(1 for p, y in zip(preds, labels) if p != c and y == c)
        if tp + fp + fn == 0:
            continue  # absent from both sides
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return sum(f1s) / len(f1s) if f1s else 0.0


def reference_pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sx = sum((a - mx) ** 2 for a in x) ** 0.5
    sy = sum((b - my) ** 2 for b in y) ** 0.5
    if sx == 0 or sy == 0:
        return None
    return cov / (sx * sy)


class TestBucket:
    def test_bucket_boundaries(self):
        assert bucket_score(5) == 0   # Low
        assert bucket_score(6) == 1   # Medium
        assert bucket_score(10) == 2  # High

    def test_all_scores(self):
        expected = [0] * 6 + [1] * 2 + [2] * 3
        assert [bucket_score(s) for s in range(11)] == expected

    def test_out_of_range(self):
        for bad in (-1, 11):
            with pytest.raises(OutOfRange):
                bucket_score(bad)


class TestMacroF1:
    def test_perfect(self):
        assert macro_f1([0, 1, 2, 0], [0, 1, 2, 0]) == 1.0

    def test_worked_example_half(self):
        # hand confusion-matrix computation: per-class F1 = 0.5, 0.5
        assert macro_f1([0, 1, 0, 1], [0, 0, 1, 1]) == pytest.approx(0.5, abs=1e-9)

    def test_worked_example_one_sixth(self):
        # all predictions one class on balanced labels: F1 = (0.5+0+0)/3
        preds = [0, 0, 0, 0, 0, 0]
        labels = [0, 0, 1, 1, 2, 2]
        assert macro_f1(preds, labels) == pytest.approx(1 / 6, abs=1e-9)

    def test_absent_class_excluded(self):
        assert macro_f1([0, 1, 0, 1], [0, 1, 0, 1]) == 1.0

    def test_predicted_but_never_true_counts_zero(self):
        # class 2 predicted once, never true
        val = macro_f1([0, 2], [0, 0])
        # class 0: tp=1 fp=0 fn=1 -> F1 = 2/3; class 2: F1 = 0
        assert val == pytest.approx((2 / 3) / 2, abs=1e-9)

    def test_matches_reference_on_random(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(1, 40))
            preds = rng.integers(0, 3, n).tolist()
            labels = rng.integers(0, 3, n).tolist()
            assert macro_f1(preds, labels) == pytest.approx(
                reference_macro_f1(preds, labels), abs=1e-12
            )

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            macro_f1([0], [0, 1])


class TestPearson:
    def test_identity(self):
        assert pearson([0, 1, 2, 1], [0, 1, 2, 1]) == pytest.approx(1.0)

    def test_anticorrelation(self):
        labels = [0, 1, 2, 0, 2]
        preds = [2 - l for l in labels]
        assert pearson(preds, labels) == pytest.approx(-1.0)

    def test_worked_example(self):
        # hand formula r = cov/(sigma*sigma) = 2.5/sqrt(2.75*3) = 0.8704
        assert pearson([0, 2, 2, 2], [0, 1, 2, 2]) == pytest.approx(0.8704, abs=5e-5)

    def test_constant_input_is_none(self):
        assert pearson([1, 1, 1], [0, 1, 2]) is None

    def test_matches_reference_on_random(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            n = int(rng.integers(2, 40))
            preds = rng.integers(0, 3, n).tolist()
            labels = rng.integers(0, 3, n).tolist()
            got = pearson(preds, labels)
            ref = reference_pearson(preds, labels)
            if ref is None:
                assert got is None
            else:
                assert got == pytest.approx(ref, abs=1e-12)

    def test_too_short(self):
        with pytest.raises(TooFewSamples):
            pearson([1], [1])


class TestMicroF1:
    def test_accuracy(self):
        assert micro_f1([0, 1, 2, 2], [0, 1, 1, 2]) == pytest.approx(0.75)


class TestConfusion:
    def test_row_sums_are_supports(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 3, 50).tolist()
        preds = rng.integers(0, 3, 50).tolist()
        cm = confusion_matrix(preds, labels)
        for c in range(3):
            assert cm[c].sum() == labels.count(c)


class TestKfold:
    def test_even_split(self):
        labels = [0, 1, 2, 0, 1, 2, 0, 1, 2, 0]
        folds = kfold_split(labels, k=5, seed=0)
        assert len(folds) == 5
        for train, test in folds:
            assert len(test) == 2
            assert sorted(train + test) == list(range(10))

    def test_stratification_counts(self):
        labels = [0] * 50 + [1] * 30 + [2] * 20
        folds = kfold_split(labels, k=5, seed=3)
        for _, test in folds:
            got = [sum(1 for i in test if labels[i] == c) for c in range(3)]
            assert got == [10, 6, 4]

    def test_stratification_within_one(self):
        rng = np.random.default_rng(4)
        for _ in range(20)\
                :
            labels = rng.integers(0, 3, int(rng.integers(12, 60))).tolist()
            k = 4
            if min(labels.count(c) for c in set(labels)) == 0:
                continue
            folds = kfold_split(labels, k=k, seed=1)
            for c in set(labels):
                per_fold = [sum(1 for i in test if labels[i] == c) for _, test in folds]
                assert max(per_fold) - min(per_fold) <= 1

    def test_disjoint_cover(self):
        labels = [0, 1, 2] * 7
        folds = kfold_split(labels, k=5, seed=9)
        all_test = sorted(i for _, test in folds for i in test)
        assert all_test == list(range(21))

    def test_deterministic(self):
        labels = [0, 1, 2] * 5
        assert kfold_split(labels, 5, seed=7) == kfold_split(labels, 5, seed=7)

    def test_too_few(self):
        with pytest.raises(TooFewSamples):
            kfold_split([0, 1], k=5)
