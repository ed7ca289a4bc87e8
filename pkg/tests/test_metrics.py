import csv
import itertools
from types import SimpleNamespace

import numpy as np
import pytest

from seqground.metrics import (
    RankedPredictions,
    baseline_full_duration,
    baseline_random,
    export_bias_data,
    kendall_tau_midpoints,
    mean_iou,
    mean_overlap,
    random_predictions,
    recall_at_k,
    top_k_predictions,
)
from seqground.synthetic import SynthConfig, generate_dataset


def preds(*top1):
    return RankedPredictions("s", [np.array([s]) for s in top1], [np.ones(1)] * len(top1))


def test_top_k_tie_break():
    p = top_k_predictions([0.2, 0.9, 0.9], [[0, 0.1], [0.2, 0.3], [0.4, 0.5]], 3)
    np.testing.assert_array_equal(p.spans[0], [[0.2, 0.3], [0.4, 0.5], [0, 0.1]])
    one = top_k_predictions([0.3], [[0.1, 0.2]], 1)
    np.testing.assert_array_equal(one.spans[0], [[0.1, 0.2]])
    two = top_k_predictions([0.1, 0.5, 0.7, 0.2], np.arange(8).reshape(4, 2) / 8, 2, k=1)
    np.testing.assert_array_equal(two.top1(), [[2 / 8, 3 / 8], [4 / 8, 5 / 8]])


def test_recall_threshold_rule():
    gts = [[np.array([[0.25, 0.5]])]]
    p = [preds([0.0, 0.5])]
    assert recall_at_k(p, gts, 1, 0.5) == 1.0
    assert recall_at_k(p, gts, 1, 0.7) == 0.0


def test_recall_and_miou_exact():
    gts = [[np.array([[0.1, 0.3]]), np.array([[0.5, 0.9]]), np.zeros((0, 2))]]
    p = [preds([0.1, 0.3], [0.5, 0.9], [0.0, 1.0])]
    for m in (0.3, 0.5, 0.7, 1.0):
        assert recall_at_k(p, gts, 1, m) == 1.0
    assert mean_iou(p, gts) == 1.0
    assert mean_iou([preds([0.0, 0.05], [0.0, 0.4], [0, 1])], gts) == 0.0
    assert mean_iou([preds([0.1, 0.3], [0.5, 0.7], [0, 1])], gts) == pytest.approx(0.75)


def test_recall_monotone():
    rng = np.random.default_rng(5)
    samples = generate_dataset(SynthConfig(num_samples=10, noise_sigma=0.0))
    gts = [s.gt_arrays() for s in samples]
    p = [
        top_k_predictions(rng.uniform(size=s.num_diagrams * 3), np.sort(rng.uniform(size=(s.num_diagrams * 3, 2)), 1), 3)
        for s in samples
    ]
    for k in (1, 2, 3):
        vals = [recall_at_k(p, gts, k, m) for m in (0.1, 0.3, 0.5, 0.7, 0.9)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
    for m in (0.1, 0.3, 0.5):
        vals = [recall_at_k(p, gts, k, m) for k in (1, 2, 3)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_empty_eval_rejected():
    with pytest.raises(ValueError):
        recall_at_k([preds([0, 1])], [[np.zeros((0, 2))]], 1, 0.5)


def test_kendall_examples():
    gts = [[np.array([[0.1, 0.2]]), np.array([[0.2, 0.3]]), np.array([[0.3, 0.4]])]]
    assert kendall_tau_midpoints([preds([0.05, 0.15], [0.15, 0.25], [0.25, 0.35])], gts) == 1.0
    assert kendall_tau_midpoints([preds([0.25, 0.35], [0.15, 0.25], [0.05, 0.15])], gts) == -1.0
    gts4 = [[np.array([[i / 10, i / 10 + 0.05]]) for i in range(4)]]
    swapped = preds([0.0, 0.1], [0.1, 0.2], [0.3, 0.4], [0.2, 0.3])
    conc = disc = 0
    pm, gm = [0.05, 0.15, 0.35, 0.25], [0.025, 0.125, 0.225, 0.325]
    for i, j in itertools.combinations(range(4), 2):
        s = np.sign(pm[i] - pm[j]) * np.sign(gm[i] - gm[j])
        conc += s > 0
        disc += s < 0
    assert kendall_tau_midpoints([swapped], gts4) == pytest.approx((conc - disc) / 6, abs=1e-12)


def test_kendall_skips_small_samples():
    gts = [[np.array([[0.1, 0.2]]), np.zeros((0, 2))]]
    assert np.isnan(kendall_tau_midpoints([preds([0, 1], [0, 1])], gts))


def test_mean_overlap_examples():
    assert mean_overlap([preds([0, 0.2], [0.3, 0.5])]) == 0.0
    assert mean_overlap([preds([0.1, 0.5], [0.1, 0.5])]) == pytest.approx(0.4)
    assert mean_overlap([preds([0, 0.5], [0.25, 0.75], [0.5, 1.0])]) == pytest.approx((0.25 + 0 + 0.25) / 3)


def test_full_duration_identity():
    samples = generate_dataset(SynthConfig(num_samples=20, noise_sigma=0.0, prob_missing_step=0.2))
    lengths = [sp.length for s in samples for spans in s.ground_truth for sp in spans[:1]]
    rep = baseline_full_duration(samples)
    # single-segment diagrams: max IoU over segments equals the longest one
    longest = [max(sp.length for sp in spans) for s in samples for spans in s.ground_truth if spans]
    assert rep.miou == pytest.approx(np.mean(longest), abs=1e-12)
    assert rep.r_at_1[0.5] == pytest.approx(np.mean(np.array(longest) >= 0.5))
    assert len(lengths) == len(longest)


def test_random_baseline_deterministic_and_low():
    samples = generate_dataset(SynthConfig(num_samples=30, clip_count_range=(200, 200), diagram_count_range=(6, 6)))
    a, b = baseline_random(samples, seed=1), baseline_random(samples, seed=1)
    assert a.to_dict() == b.to_dict()
    assert a.miou < 0.15


@pytest.mark.parametrize("length", [0.05, 0.1])
def test_random_baseline_below_tenth_for_short_segments(length):
    # random spans against short ground truth placed anywhere in the video
    rng = np.random.default_rng(3)
    samples = [SimpleNamespace(id=f"s{i}", num_diagrams=4) for i in range(500)]
    gts = []
    for _ in samples:
        starts = rng.uniform(0.0, 1.0 - length, size=4)
        gts.append([np.array([[a, a + length]]) for a in starts])
    assert mean_iou(random_predictions(samples, seed=0), gts) < 0.1


def test_export_bias(tmp_path):
    path = tmp_path / "bias.csv"
    n = export_bias_data([(0.1, 0.2), (0.123456789, 0.9), (0.0, 1.0)], path)
    assert n == 3
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["start", "end"]
    assert len(rows) == 4
    assert float(rows[2][0]) == pytest.approx(0.123457, abs=1e-9)
