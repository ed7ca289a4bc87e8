"""Per-diagram Hungarian matching with empty-target padding, and the span losses."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from . import kernels
from .types import LossWeights, SeqGroundError, Timespan

log = logging.getLogger(__name__)


class MatchingError(SeqGroundError):
    pass


def _as_pair(span):
    if isinstance(span, Timespan):
        return span.as_tuple()
    return float(span[0]), float(span[1])


def giou_1d(a, b):
    """Generalized IoU of two intervals, in [-1, 1]; 0 when both are the same point."""
    return float(kernels.interval_giou([_as_pair(a)], [_as_pair(b)])[0, 0])


def iou_1d(a, b):
    return float(kernels.interval_iou([_as_pair(a)], [_as_pair(b)])[0, 0])


def giou_torch(a, b):
    """Elementwise differentiable generalized IoU of (..., 2) span tensors."""
    inter = (torch.minimum(a[..., 1], b[..., 1]) - torch.maximum(a[..., 0], b[..., 0])).clamp(min=0)
    union = (a[..., 1] - a[..., 0]) + (b[..., 1] - b[..., 0]) - inter
    hull = torch.maximum(a[..., 1], b[..., 1]) - torch.minimum(a[..., 0], b[..., 0])
    one = torch.ones_like(union)
    iou = torch.where(union > 0, inter / torch.where(union > 0, union, one), torch.zeros_like(union))
    safe_hull = torch.where(hull > 0, hull, one)
    return torch.where(hull > 0, iou - (hull - union) / safe_hull, torch.zeros_like(hull))


def match_cost(pred_span, pred_score, gt_span, w: LossWeights):
    """Matching cost of one prediction against one ground-truth span."""
    p, g = _as_pair(pred_span), _as_pair(gt_span)
    l1 = abs(p[0] - g[0]) + abs(p[1] - g[1])
    return w.lambda_l1 * l1 + w.lambda_giou * (1.0 - giou_1d(p, g)) - w.lambda_score * float(pred_score)


def cost_matrix(pred_spans, pred_scores, gt_spans, w: LossWeights):
    """(K, G) costs between a diagram's K predictions and its G ground-truth spans."""
    pred_spans = np.asarray(pred_spans, dtype=np.float64).reshape(-1, 2)
    gt_spans = np.asarray(gt_spans, dtype=np.float64).reshape(-1, 2)
    l1 = np.abs(pred_spans[:, None, :] - gt_spans[None, :, :]).sum(-1)
    giou = kernels.interval_giou(pred_spans, gt_spans)
    scores = np.asarray(pred_scores, dtype=np.float64).reshape(-1, 1)
    return w.lambda_l1 * l1 + w.lambda_giou * (1.0 - giou) - w.lambda_score * scores


@dataclass
class MatchResult:
    """Targets for one sample's M*K composite rows."""

    target: np.ndarray  # (MK,) 1.0 where matched to a real segment
    matched_span: np.ndarray  # (MK, 2), NaN where unmatched
    counts: np.ndarray  # (M,) matched segments per diagram
    num_queries: int
    cost: float = 0.0

    def matched_rows(self, diagram):
        k = self.num_queries
        rows = np.nonzero(self.target[diagram * k : (diagram + 1) * k])[0]
        return rows + diagram * k


def restricted_match(pred_spans, pred_scores, gts, num_queries, w: LossWeights) -> MatchResult:
    """Matches each diagram's K rows only against that diagram's ground truth.

    ``pred_spans`` is (M*K, 2) and ``pred_scores`` (M*K,) for one sample;
    ``gts`` holds one (G_i, 2) array per diagram. Ground truth is padded with
    empty targets up to K, which cost nothing.
    """
    k = num_queries
    pred_spans = np.asarray(pred_spans, dtype=np.float64).reshape(-1, 2)
    pred_scores = np.asarray(pred_scores, dtype=np.float64).ravel()
    m = len(gts)
    if pred_spans.shape[0] != m * k:
        raise MatchingError(f"expected {m * k} prediction rows, got {pred_spans.shape[0]}")
    target = np.zeros(m * k)
    matched = np.full((m * k, 2), np.nan)
    counts = np.zeros(m, dtype=np.int64)
    total = 0.0
    for i, gt in enumerate(gts):
        gt = np.asarray(gt, dtype=np.float64).reshape(-1, 2)
        g = gt.shape[0]
        if g == 0:
            continue
        if g > k:
            log.error("diagram %d has %d segments but only %d queries", i, g, k)
            raise MatchingError(f"diagram {i} has {g} ground-truth segments > num_queries={k}; raise num_queries")
        rows = slice(i * k, (i + 1) * k)
        cost = np.zeros((k, k))
        cost[:, :g] = cost_matrix(pred_spans[rows], pred_scores[rows], gt, w)
        col = kernels.linear_assignment(cost)
        total += float(cost[np.arange(k), col].sum())
        for j in range(k):
            if col[j] < g:
                target[i * k + j] = 1.0
                matched[i * k + j] = gt[col[j]]
        counts[i] = g
    return MatchResult(target, matched, counts, k, total)


def match_batch(layer_out, gts_batch, num_queries, w: LossWeights):
    spans = layer_out.spans.detach().cpu().double().numpy()
    scores = layer_out.scores.detach().cpu().double().numpy()
    out = []
    for b, gts in enumerate(gts_batch):
        mk = len(gts) * num_queries
        out.append(restricted_match(spans[b, :mk], scores[b, :mk], gts, num_queries, w))
    return out


def compute_losses(layer_out, matches, w: LossWeights):
    """Returns a dict of scalar tensors ``l1``, ``giou``, ``score``, ``total``.

    Span terms average over matched rows within a diagram, then over diagrams
    that have ground truth, then over samples that have any. The score term
    is binary cross-entropy over every real row, negatives weighted by
    ``w.background_weight``, averaged over the sample's rows.
    """
    spans = layer_out.spans
    logits = layer_out.score_logits
    device, dtype = spans.device, spans.dtype
    idx_b, idx_r, pair_w, tgt = [], [], [], []
    score_terms = []
    span_samples = 0
    for b, mr in enumerate(matches):
        mk = mr.target.shape[0]
        has_gt = mr.counts > 0
        if has_gt.any():
            span_samples += 1
            n_diag = int(has_gt.sum())
            for i in np.nonzero(has_gt)[0]:
                for r in mr.matched_rows(i):
                    idx_b.append(b)
                    idx_r.append(r)
                    pair_w.append(1.0 / (mr.counts[i] * n_diag))
                    tgt.append(mr.matched_span[r])
        target = torch.as_tensor(mr.target, dtype=dtype, device=device)
        weight = torch.where(target > 0, torch.ones_like(target), torch.full_like(target, w.background_weight))
        bce = F.binary_cross_entropy_with_logits(logits[b, :mk], target, weight=weight, reduction="sum")
        score_terms.append(bce / mk)
    loss_score = torch.stack(score_terms).mean()
    if idx_b:
        pred = spans[torch.as_tensor(idx_b), torch.as_tensor(idx_r)]
        gt = torch.as_tensor(np.array(tgt), dtype=dtype, device=device)
        pw = torch.as_tensor(pair_w, dtype=dtype, device=device) / span_samples
        loss_l1 = (pw * (pred - gt).abs().sum(-1)).sum()
        loss_giou = (pw * (1.0 - giou_torch(pred, gt))).sum()
    else:
        loss_l1 = loss_giou = spans.sum() * 0.0
    total = w.lambda_l1 * loss_l1 + w.lambda_giou * loss_giou + w.lambda_score * loss_score
    return {"l1": loss_l1, "giou": loss_giou, "score": loss_score, "total": total}


def aggregate_aux_loss(layer_losses, use_aux):
    """Mean over layers when auxiliary supervision is on, otherwise the last layer."""
    if not len(layer_losses):
        raise ValueError("no layer losses")
    if use_aux:
        return sum(layer_losses) / len(layer_losses)
    return layer_losses[-1]


def grounding_loss(output, gts_batch, w: LossWeights, use_aux=True, matches=None):
    """Matches every layer (or reuses ``matches``) and aggregates the total loss.

    Returns ``(total, per_layer_dicts, per_layer_matches)``.
    """
    layers = output.layers if use_aux else output.layers[-1:]
    if matches is None:
        matches = [match_batch(lo, gts_batch, output.num_queries, w) for lo in layers]
    per_layer = [compute_losses(lo, mt, w) for lo, mt in zip(layers, matches)]
    total = aggregate_aux_loss([d["total"] for d in per_layer], True)
    return total, per_layer, matches
