import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from perceptbench.aggregate import ScoreVector
from perceptbench.dataset import DatasetIndex, ImageItem
from perceptbench.errors import ConstantVector, LengthMismatch, MetricError, NoLabeledItems, TooFewSamples
from perceptbench.metrics import average_ranks, build_report, pearson, spearman
from perceptbench.principles import PRINCIPLES, Principle

from oracles import pearson_mp, spearman_mp


def test_pearson_examples():
    assert pearson([1, 2, 3], [2, 4, 6]) == 1.0
    assert pearson([1, 2, 3], [3, 2, 1]) == -1.0
    # covariance 4.0, variances 5.0 and 5.0
    assert abs(pearson([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) < 1e-12


def test_spearman_examples():
    assert spearman([1, 2, 3, 4], [1, 8, 27, 64]) == 1.0
    assert abs(spearman([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) < 1e-12
    # ranks [1, 2.5, 2.5, 4] against [1, 2, 3, 4]: 4.5 / sqrt(5 * 4.5)
    expected = 4.5 / math.sqrt(22.5)
    assert abs(spearman([1, 2, 2, 3], [1, 2, 3, 4]) - expected) < 1e-12
    assert abs(spearman([1, 2, 2, 3], [1, 2, 3, 4]) - 0.9487) < 1e-4


def test_average_ranks():
    assert average_ranks([10, 20, 20, 30]) == [1, 2.5, 2.5, 4]
    assert average_ranks([3, 1, 2]) == [3, 1, 2]
    assert average_ranks([5, 5, 5]) == [2, 2, 2]


def test_errors():
    with pytest.raises(LengthMismatch):
        pearson([1, 2, 3], [1, 2])
    with pytest.raises(TooFewSamples):
        pearson([1, 2], [1, 2])
    with pytest.raises(ConstantVector):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ConstantVector):
        spearman([1, 2, 3], [4, 4, 4])


def test_against_reference_implementations():
    rng = np.random.default_rng(123)
    for _ in range(200):
        n = int(rng.integers(10, 101))
        x = rng.normal(size=n)
        y = 0.3 * x + rng.normal(size=n)
        if rng.random() < 0.5:
            x = np.round(x, 1)  # introduce ties
        assert abs(pearson(x.tolist(), y.tolist()) - pearson_mp(x, y)) < 1e-12
        assert abs(spearman(x.tolist(), y.tolist()) - stats.spearmanr(x, y).statistic) < 1e-12


@settings(max_examples=200)
@given(
    # magnitudes below ~1e-150 underflow when squared and read as constant
    st.lists(st.tuples(st.floats(-100, 100).map(lambda v: round(v, 9)), st.floats(-100, 100).map(lambda v: round(v, 9))), min_size=3, max_size=30),
    st.floats(0.1, 10),
    st.floats(-5, 5),
)
def test_pearson_symmetry_and_affine(pairs, a, b):
    x = [p[0] for p in pairs]
    y = [p[1] for p in pairs]
    if len(set(x)) < 2 or len(set(y)) < 2:
        return
    r = pearson(x, y)
    assert -1 <= r <= 1
    assert math.isclose(r, pearson(y, x), abs_tol=1e-12)
    ax = [a * v + b for v in x]
    if len(set(ax)) > 1:
        assert math.isclose(pearson(ax, y), r, abs_tol=1e-7)
        assert math.isclose(pearson([-v for v in ax], y), -r, abs_tol=1e-7)


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=3, max_size=30))
def test_spearman_monotone_invariance(pairs):
    x = [float(p[0]) for p in pairs]
    y = [float(p[1]) for p in pairs]
    if len(set(x)) < 2 or len(set(y)) < 2:
        return
    r = spearman(x, y)
    assert spearman([math.exp(v / 10) for v in x], y) == pytest.approx(r, abs=1e-12)
    assert spearman(x, [v**3 + 2 * v for v in y]) == pytest.approx(r, abs=1e-12)


def _index(values, categories=None):
    categories = categories or ["c"] * len(values)
    items = tuple(
        ImageItem(id=f"i{k}", dataset="d", category=cat, locator="", width=1, height=1,
                  ground_truth=None if v is None else v, ground_truth_norm=v)
        for k, (v, cat) in enumerate(zip(values, categories))
    )
    return DatasetIndex("d", (0, 1), items)


def _vector(ids, scores, principle=Principle.VISUAL_CLUTTER, category="c", method="win_rate"):
    return ScoreVector(principle, category, method, tuple(ids), tuple(scores), tuple(range(1, len(ids) + 1)))


def test_report_perfect_agreement():
    gt = [0.1, 0.4, 0.5, 0.9]
    index = _index(gt)
    vectors = [_vector([f"i{k}" for k in range(4)], gt, p) for p in PRINCIPLES]
    report = build_report(vectors, index)
    for p in PRINCIPLES:
        cell = report.cell("c", p, "win_rate")
        assert cell.plcc == 1.0 and cell.srocc == 1.0 and cell.n == 4


def test_report_excludes_unlabeled_and_marks_insufficient():
    index = _index([0.1, None, 0.9, 0.5], ["a", "a", "a", "b"])
    vectors = [_vector(["i0", "i1", "i2"], [0.2, 0.3, 0.4], category="a")]
    cell = build_report(vectors, index).cell("a", Principle.VISUAL_CLUTTER, "win_rate")
    assert cell.status == "insufficient" and cell.n == 2 and cell.plcc is None


def test_report_constant_scores_undefined():
    index = _index([0.1, 0.5, 0.9])
    cell = build_report([_vector(["i0", "i1", "i2"], [0.5] * 3)], index).cell("c", Principle.VISUAL_CLUTTER, "win_rate")
    assert cell.status == "undefined" and cell.plcc is None


def test_report_cell_count_per_method():
    cats = ["Advertisement", "Interior Design", "Objects", "Scenes", "Suprematism", "Visualizations"]
    values, labels = [], []
    for cat in cats:
        values += [0.1, 0.5, 0.9]
        labels += [cat] * 3
    index = _index(values, labels)
    vectors = []
    for c_pos, cat in enumerate(cats):
        ids = [f"i{3 * c_pos + k}" for k in range(3)]
        for p in PRINCIPLES:
            for m in ("win_rate", "bradley_terry"):
                vectors.append(_vector(ids, [0.0, 0.3, 0.2], p, cat, m))
    report = build_report(vectors, index)
    for m in ("win_rate", "bradley_terry"):
        assert sum(1 for (_, _, method) in report.cells if method == m) == 48
    assert report.categories == cats


def test_report_no_labels():
    with pytest.raises(NoLabeledItems):
        build_report([_vector(["i0", "i1", "i2"], [1, 2, 3])], _index([None, None, None]))


def test_report_unknown_category():
    with pytest.raises(MetricError):
        build_report([_vector(["i0", "i1", "i2"], [1, 2, 3], category="zzz")], _index([0.1, 0.2, 0.3]))
