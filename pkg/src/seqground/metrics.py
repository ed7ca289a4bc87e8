"""Recall/mIoU evaluation, order and overlap statistics, and non-learning baselines."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

IOU_THRESHOLDS = (0.3, 0.5, 0.7)


@dataclass
class RankedPredictions:
    """One sample's predictions: per diagram, spans (k, 2) sorted by descending score."""

    sample_id: str
    spans: list
    scores: list

    def top1(self):
        return np.array([s[0] for s in self.spans], dtype=np.float64).reshape(-1, 2)


def rank_rows(scores, num_queries):
    """Per-diagram row order by descending score, ties to the lower query index."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1, num_queries)
    return [np.argsort(-row, kind="stable") for row in scores]


def top_k_predictions(scores, spans, num_queries, k=None, sample_id=""):
    """Ranks each diagram's K rows; keeps the best ``k`` (default all K)."""
    k = num_queries if k is None else k
    if not 1 <= k <= num_queries:
        raise ValueError(f"k must lie in [1, {num_queries}]")
    scores = np.asarray(scores, dtype=np.float64).ravel()
    spans = np.asarray(spans, dtype=np.float64).reshape(-1, 2)
    out_spans, out_scores = [], []
    for i, order in enumerate(rank_rows(scores, num_queries)):
        rows = i * num_queries + order[:k]
        out_spans.append(spans[rows])
        out_scores.append(scores[rows])
    return RankedPredictions(sample_id, out_spans, out_scores)


def _gt_list(sample_or_gts):
    if hasattr(sample_or_gts, "gt_arrays"):
        return sample_or_gts.gt_arrays()
    return [np.asarray(g, dtype=np.float64).reshape(-1, 2) for g in sample_or_gts]


def best_ious(predictions, gts, k=1):
    """Per GT-bearing diagram: best IoU between its top-``k`` spans and any GT segment."""
    out = []
    for pred, gt in zip(predictions, gts):
        gt_l = _gt_list(gt)
        for spans, g in zip(pred.spans, gt_l):
            if g.shape[0] == 0:
                continue
            out.append(float(kernels.interval_iou(np.asarray(spans)[:k], g).max()))
    return np.array(out, dtype=np.float64)


def recall_at_k(predictions, gts, k, m):
    """Fraction of GT-bearing diagrams with a top-``k`` span reaching IoU >= ``m``."""
    if not 0.0 < m <= 1.0:
        raise ValueError("IoU threshold must lie in (0, 1]")
    ious = best_ious(predictions, gts, k)
    if ious.size == 0:
        raise ValueError("no diagram with ground truth to evaluate")
    return float(np.mean(ious >= m))


def mean_iou(predictions, gts):
    ious = best_ious(predictions, gts, 1)
    if ious.size == 0:
        raise ValueError("no diagram with ground truth to evaluate")
    return float(ious.mean())


def sample_kendall_tau(pred_top1, gt):
    """Tau-b between predicted and GT midpoints; None if fewer than two comparable diagrams."""
    gt_l = _gt_list(gt)
    keep = [i for i, g in enumerate(gt_l) if g.shape[0] > 0]
    if len(keep) < 2:
        return None
    pred_mid = [0.5 * (pred_top1[i][0] + pred_top1[i][1]) for i in keep]
    gt_mid = []
    for i in keep:
        first = gt_l[i][np.argmin(gt_l[i][:, 0])]
        gt_mid.append(0.5 * (first[0] + first[1]))
    tau = kernels.kendall_tau_b(pred_mid, gt_mid)
    return None if math.isnan(tau) else float(tau)


def kendall_tau_midpoints(predictions, gts):
    """Mean per-sample tau-b; samples without two comparable diagrams are skipped."""
    taus = [sample_kendall_tau(p.top1(), g) for p, g in zip(predictions, gts)]
    taus = [t for t in taus if t is not None]
    return float(np.mean(taus)) if taus else float("nan")


def mean_overlap(predictions):
    """Mean over samples of the average pairwise intersection of top-1 spans."""
    vals = [kernels.mean_pairwise_intersection(p.top1()) for p in predictions if len(p.spans) >= 2]
    return float(np.mean(vals)) if vals else float("nan")


@dataclass
class EvalReport:
    r_at_1: dict
    miou: float
    kendall_tau: float
    mean_overlap: float
    num_instances: int
    per_sample: list = field(default_factory=list)
    name: str = ""

    def to_dict(self):
        return {
            "name": self.name,
            "r_at_1": {f"{m:g}": v for m, v in self.r_at_1.items()},
            "miou": self.miou,
            "kendall_tau": self.kendall_tau,
            "mean_overlap": self.mean_overlap,
            "num_instances": self.num_instances,
            "per_sample": self.per_sample,
        }


def evaluate(predictions, samples, name=""):
    """Full report for ranked predictions aligned with ``samples``."""
    gts = [s.gt_arrays() if hasattr(s, "gt_arrays") else s for s in samples]
    per_sample = []
    for p, s, g in zip(predictions, samples, gts):
        ious = best_ious([p], [g], 1)
        tau = sample_kendall_tau(p.top1(), g)
        per_sample.append(
            {
                "id": getattr(s, "id", p.sample_id),
                "miou": float(ious.mean()) if ious.size else None,
                "kendall_tau": tau,
                "overlap": kernels.mean_pairwise_intersection(p.top1()) if len(p.spans) >= 2 else None,
                "top1": p.top1().tolist(),
            }
        )
    return EvalReport(
        r_at_1={m: recall_at_k(predictions, gts, 1, m) for m in IOU_THRESHOLDS},
        miou=mean_iou(predictions, gts),
        kendall_tau=kendall_tau_midpoints(predictions, gts),
        mean_overlap=mean_overlap(predictions),
        num_instances=int(best_ious(predictions, gts, 1).size),
        per_sample=per_sample,
        name=name,
    )


def full_duration_predictions(samples):
    return [
        RankedPredictions(s.id, [np.array([[0.0, 1.0]]) for _ in range(s.num_diagrams)], [np.ones(1)] * s.num_diagrams)
        for s in samples
    ]


def baseline_full_duration(samples):
    """Predicts the whole video for every diagram."""
    return evaluate(full_duration_predictions(samples), samples, name="full_duration")


def random_predictions(samples, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for s in samples:
        spans = np.sort(rng.uniform(0.0, 1.0, size=(s.num_diagrams, 2)), axis=1)
        out.append(RankedPredictions(s.id, [row[None, :] for row in spans], [np.ones(1)] * s.num_diagrams))
    return out


def baseline_random(samples, seed=0):
    """Each diagram gets the sorted pair of two uniform draws."""
    return evaluate(random_predictions(samples, seed), samples, name="random")


def export_bias_data(spans, path):
    """Writes normalized (start, end) pairs as CSV with header ``start,end``."""
    rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start", "end"])
        for s in spans:
            start, end = (s.start, s.end) if hasattr(s, "start") else s
            writer.writerow([f"{float(start):.6f}", f"{float(end):.6f}"])
            rows += 1
    return rows


def gt_spans(samples):
    return [span for s in samples for spans in s.ground_truth for span in spans]
