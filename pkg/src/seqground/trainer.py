"""Windowed sampling, length normalization, training and inference."""
from __future__ import annotations

import copy
import itertools
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from scipy.stats import ortho_group

from .alignment import ProjectionPair
from .decoder import GroundingModel
from .io import decode_array, encode_array
from .matching import grounding_loss
from .metrics import evaluate, mean_iou, top_k_predictions
from .types import (
    ConfigError,
    DiagramSequence,
    GroundingSample,
    LossWeights,
    ModelConfig,
    SeqGroundError,
    Timespan,
    VideoFeatures,
)

log = logging.getLogger(__name__)

INF = math.inf
CHECKPOINT_VERSION = 1


class TrainingError(SeqGroundError):
    pass


def _strict(cls, data):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {unknown}", field=unknown[0])
    return cls(**data)


def _parse_size(v):
    if v is None or v == "inf" or v == INF:
        return INF
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ConfigError(f"window sizes and strides must be positive integers or 'inf', got {v!r}", field="sampler")
    return v


@dataclass
class SamplerConfig:
    window_sizes: list = field(default_factory=lambda: [INF])
    strides: list = field(default_factory=lambda: [INF])
    min_gt_visibility: float = 0.5

    def __post_init__(self):
        if not self.window_sizes or not self.strides:
            raise ConfigError("window_sizes and strides must be nonempty", field="sampler")
        self.window_sizes = [_parse_size(v) for v in self.window_sizes]
        self.strides = [_parse_size(v) for v in self.strides]
        if not 0.0 < self.min_gt_visibility <= 1.0:
            raise ConfigError("min_gt_visibility must lie in (0, 1]", field="min_gt_visibility")

    def configurations(self):
        """(window, stride) pairs; finite windows skip strides larger than themselves."""
        out = []
        for w, s in itertools.product(self.window_sizes, self.strides):
            if w == INF:
                s = INF
            elif s != INF and s > w:
                continue
            if (w, s) not in out:
                out.append((w, s))
        return out

    def to_dict(self):
        enc = lambda xs: ["inf" if x == INF else x for x in xs]  # noqa: E731
        return {"window_sizes": enc(self.window_sizes), "strides": enc(self.strides), "min_gt_visibility": self.min_gt_visibility}

    @classmethod
    def from_dict(cls, data):
        return _strict(cls, data)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    epochs: int = 60
    batch_size: int = 16
    lr_milestones: list = field(default_factory=lambda: [40])
    lr_gamma: float = 0.1
    seed: int = 0
    grad_clip: Optional[float] = 0.1
    # shared random orthogonal transform of each item's video and diagram
    # features, redrawn every step; only sensible when the feature basis itself
    # carries no meaning (synthetic data with random prototypes)
    rotation_augment: bool = False

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate and weight_decay must be nonnegative", field="learning_rate")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive", field="epochs")
        if list(self.lr_milestones) != sorted(self.lr_milestones):
            raise ConfigError("lr_milestones must be ascending", field="lr_milestones")
        if not self.lr_gamma > 0:
            raise ConfigError("lr_gamma must be positive", field="lr_gamma")

    def lr_at(self, epoch):
        """Learning rate in effect during 0-based ``epoch``."""
        return self.learning_rate * self.lr_gamma ** sum(1 for m in self.lr_milestones if m <= epoch)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return _strict(cls, data)


# ---------------------------------------------------------------- sampling


def window_starts(n, w, stride):
    if w == INF or w >= n:
        return [0]
    step = stride if stride != INF else n
    starts = list(range(0, n - w + 1, step))
    if starts[-1] + w < n:
        starts.append(n - w)
    return starts


def to_window(span, start, width, n):
    """Video-normalized span -> window-relative span for window [start, start+width) of n clips."""
    a = (span[0] * n - start) / width
    b = (span[1] * n - start) / width
    return min(max(a, 0.0), 1.0), min(max(b, 0.0), 1.0)


def from_window(span, start, width, n):
    return (span[0] * width + start) / n, (span[1] * width + start) / n


def sliding_window_sample(sample: GroundingSample, w, stride, min_gt_visibility=0.5):
    """Cuts ``sample`` into windows of ``w`` clips every ``stride`` clips.

    Ground truth is clipped to each window and renormalized; a segment is kept
    when at least ``min_gt_visibility`` of its length is visible. Windows that
    keep no segment are dropped.
    """
    n = sample.num_clips
    w = _parse_size(w)
    stride = _parse_size(stride)
    if w == INF or w >= n:
        starts, width = [0], n
    else:
        starts, width = window_starts(n, w, stride), w
    out = []
    for a in starts:
        lo, hi = a / n, (a + width) / n
        gt, kept = [], 0
        for spans in sample.ground_truth:
            mine = []
            for s in spans:
                inter = min(s.end, hi) - max(s.start, lo)
                length = s.end - s.start
                visible = inter / length if length > 0 else float(lo <= s.start <= hi)
                if inter >= 0 and visible >= min_gt_visibility:
                    rs, re = to_window((s.start, s.end), a, width, n)
                    mine.append(Timespan(rs, re))
            kept += len(mine)
            gt.append(mine)
        if kept == 0:
            continue
        whole = width == n
        out.append(
            GroundingSample(
                id=sample.id if whole else f"{sample.id}@{a}:{a + width}",
                video=VideoFeatures(
                    np.asarray(sample.video.clips)[a : a + width],
                    sample.video.duration_seconds * width / n,
                ),
                diagrams=sample.diagrams,
                ground_truth=sample.ground_truth if whole else gt,
                metadata={"parent": sample.id, "window": (a, a + width)},
            )
        )
    return out


def interpolate_length(features, target):
    """Linear resampling along time to ``target`` rows; first and last rows are kept."""
    if target < 2:
        raise ConfigError("interpolation target must be >= 2", field="normalize_video_length")
    x = np.asarray(features)
    n = x.shape[0]
    if n < 1:
        raise ConfigError("cannot interpolate an empty sequence")
    if n == target:
        return x.copy()
    if n == 1:
        return np.repeat(x, target, axis=0)
    pos = np.linspace(0.0, n - 1, target)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    frac = (pos - lo)[:, None]
    out = x[lo] * (1.0 - frac) + x[hi] * frac
    return out.astype(x.dtype, copy=False)


# ---------------------------------------------------------------- batching


@dataclass
class Item:
    id: str
    clips: np.ndarray
    diagrams: np.ndarray
    gts: list  # per diagram (G, 2) float64


def prepare(sample: GroundingSample, normalize_video_length=256):
    clips = np.asarray(sample.video.clips, dtype=np.float32)
    if normalize_video_length is not None:
        clips = interpolate_length(clips, normalize_video_length).astype(np.float32)
    return Item(sample.id, clips, np.asarray(sample.diagrams.diagrams, dtype=np.float32), sample.gt_arrays())


def build_items(samples, model_cfg: ModelConfig, sampler: SamplerConfig | None = None):
    sampler = sampler or SamplerConfig()
    items = []
    for s in samples:
        for w, stride in sampler.configurations():
            for win in sliding_window_sample(s, w, stride, sampler.min_gt_visibility):
                items.append(prepare(win, model_cfg.normalize_video_length))
    return items


def collate(items):
    bsz = len(items)
    n = max(it.clips.shape[0] for it in items)
    m = max(it.diagrams.shape[0] for it in items)
    video = torch.zeros(bsz, n, items[0].clips.shape[1])
    video_mask = torch.zeros(bsz, n, dtype=torch.bool)
    diagrams = torch.zeros(bsz, m, items[0].diagrams.shape[1])
    diagram_mask = torch.zeros(bsz, m, dtype=torch.bool)
    for b, it in enumerate(items):
        video[b, : it.clips.shape[0]] = torch.from_numpy(it.clips)
        video_mask[b, : it.clips.shape[0]] = True
        diagrams[b, : it.diagrams.shape[0]] = torch.from_numpy(it.diagrams)
        diagram_mask[b, : it.diagrams.shape[0]] = True
    return {
        "video": video,
        "video_mask": video_mask,
        "diagrams": diagrams,
        "diagram_mask": diagram_mask,
        "gts": [it.gts for it in items],
        "ids": [it.id for it in items],
    }


def rotate_batch(batch, rng):
    """Applies one random orthogonal matrix per item to both its clips and diagrams."""
    dim = batch["video"].shape[-1]
    if batch["diagrams"].shape[-1] != dim:
        raise ConfigError("rotation_augment needs equal video and diagram feature widths", field="rotation_augment")
    rot = torch.as_tensor(
        np.stack([ortho_group.rvs(dim, random_state=rng) for _ in range(batch["video"].shape[0])]),
        dtype=batch["video"].dtype,
    )
    return dict(batch, video=batch["video"] @ rot, diagrams=batch["diagrams"] @ rot)


def forward_batch(model, batch, return_attention=False):
    return model(batch["video"], batch["video_mask"], batch["diagrams"], batch["diagram_mask"], return_attention)


# ---------------------------------------------------------------- checkpoints


def save_parameters(module, directory, header):
    """Writes ``header.json`` plus one array file per parameter under ``directory``."""
    directory = Path(directory)
    (directory / "params").mkdir(parents=True, exist_ok=True)
    entries = []
    for name, tensor in module.state_dict().items():
        fname = f"params/{name}.sqga"
        arr = tensor.detach().cpu().numpy()
        (directory / fname).write_bytes(encode_array(arr.reshape(arr.shape) if arr.ndim else arr.reshape(())))
        entries.append({"name": name, "file": fname, "shape": list(arr.shape)})
    doc = dict(header, version=CHECKPOINT_VERSION, parameters=entries)
    (directory / "header.json").write_text(json.dumps(doc, indent=1))
    return directory


def load_parameters(module, directory):
    directory = Path(directory)
    header_path = directory / "header.json"
    if not header_path.exists():
        raise FileNotFoundError(f"checkpoint header not found: {header_path}")
    header = json.loads(header_path.read_text())
    state = {}
    for e in header["parameters"]:
        arr = decode_array((directory / e["file"]).read_bytes(), source=e["file"])
        state[e["name"]] = torch.from_numpy(arr.reshape(e["shape"]))
    module.load_state_dict(state)
    return header


def save_model(model: GroundingModel, directory, extra=None):
    header = {"kind": "grounding_model", "model_config": model.cfg.to_dict()}
    if extra:
        header.update(extra)
    return save_parameters(model, directory, header)


def load_model(directory) -> GroundingModel:
    directory = Path(directory)
    header_path = directory / "header.json"
    if not header_path.exists():
        raise FileNotFoundError(f"checkpoint not found: {directory}")
    header = json.loads(header_path.read_text())
    model = GroundingModel(ModelConfig.from_dict(header["model_config"]))
    load_parameters(model, directory)
    model.eval()
    return model


def save_projection(proj: ProjectionPair, directory):
    header = {
        "kind": "projection",
        "video_in_dim": proj.video_in_dim,
        "diagram_in_dim": proj.diagram_in_dim,
        "dim": proj.dim,
        "sprf_dim": proj.sprf_dim,
        "hidden_dim": proj.video_proj.layers[0].out_features,
        "temperature": proj.temperature,
    }
    return save_parameters(proj, directory, header)


def load_projection(directory) -> ProjectionPair:
    directory = Path(directory)
    header_path = directory / "header.json"
    if not header_path.exists():
        raise FileNotFoundError(f"projection checkpoint not found: {directory}")
    h = json.loads(header_path.read_text())
    proj = ProjectionPair(h["video_in_dim"], h["diagram_in_dim"], h["dim"], h["sprf_dim"], h["hidden_dim"])
    load_parameters(proj, directory)
    return proj


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    model: GroundingModel
    history: list
    best_epoch: int
    best_val_miou: float
    best_state: dict = field(repr=False, default=None)


def predict(model: GroundingModel, samples, batch_size=32, k=None):
    """Ranked whole-video predictions for each sample."""
    model.eval()
    items = [prepare(s, model.cfg.normalize_video_length) for s in samples]
    out = []
    with torch.no_grad():
        for i in range(0, len(items), batch_size):
            chunk = items[i : i + batch_size]
            res = forward_batch(model, collate(chunk)).final
            scores, spans = res.scores.double().numpy(), res.spans.double().numpy()
            for b, it in enumerate(chunk):
                mk = it.diagrams.shape[0] * model.cfg.num_queries
                out.append(top_k_predictions(scores[b, :mk], spans[b, :mk], model.cfg.num_queries, k, it.id))
    return out


def validate_model(model, samples):
    return mean_iou(predict(model, samples), [s.gt_arrays() for s in samples])


def _write_jsonl(path, record):
    with open(path, "a") as fh:
        fh.write(json.dumps(record) + "\n")


def set_threads():
    n = os.environ.get("SEQGROUND_THREADS")
    if n:
        torch.set_num_threads(max(1, int(n)))


def train(
    train_samples,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    weights: LossWeights | None = None,
    val_samples=None,
    sampler: SamplerConfig | None = None,
    out_dir=None,
    projection: ProjectionPair | None = None,
):
    """Trains a grounding model; returns the best-on-validation weights loaded.

    With ``out_dir`` set, writes ``metrics.jsonl`` (one record per epoch),
    ``checkpoints/last`` every epoch and ``checkpoints/best`` on improvement.
    """
    weights = weights or LossWeights()
    set_threads()
    torch.manual_seed(train_cfg.seed)
    gen = torch.Generator().manual_seed(train_cfg.seed)
    rot_rng = np.random.default_rng(train_cfg.seed)

    cfg = copy.deepcopy(model_cfg)
    if train_samples:
        cfg.video_in_dim = cfg.video_in_dim or int(np.asarray(train_samples[0].video.clips).shape[1])
        cfg.diagram_in_dim = cfg.diagram_in_dim or int(np.asarray(train_samples[0].diagrams.diagrams).shape[1])
    if projection is not None:
        cfg.sprf_dim = projection.sprf_dim
        projection = copy.deepcopy(projection)
    model = GroundingModel(cfg, projection)
    items = build_items(train_samples, cfg, sampler)
    if not items:
        raise TrainingError("no training windows with ground truth")

    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=train_cfg.learning_rate, weight_decay=train_cfg.weight_decay)
    sched = torch.optim.lr_scheduler.MultiStepLR(opt, milestones=list(train_cfg.lr_milestones), gamma=train_cfg.lr_gamma)

    metrics_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.jsonl"
        metrics_path.write_text("")

    history = []
    best_epoch, best_miou, best_state = -1, -math.inf, None
    for epoch in range(train_cfg.epochs):
        model.train()
        lr = opt.param_groups[0]["lr"]
        order = torch.randperm(len(items), generator=gen).tolist()
        losses = []
        for start in range(0, len(order), train_cfg.batch_size):
            batch = collate([items[i] for i in order[start : start + train_cfg.batch_size]])
            if train_cfg.rotation_augment:
                batch = rotate_batch(batch, rot_rng)
            out = forward_batch(model, batch)
            loss, _, _ = grounding_loss(out, batch["gts"], weights, cfg.use_aux_loss)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}; batch ids: {batch['ids']}")
            opt.zero_grad()
            loss.backward()
            if train_cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(params, train_cfg.grad_clip)
            opt.step()
            losses.append(loss.item())
        sched.step()
        record = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_miou": None, "lr": lr}
        if val_samples:
            record["val_miou"] = validate_model(model, val_samples)
        history.append(record)
        log.info("epoch %d loss %.4f val_miou %s lr %.2e", epoch, record["train_loss"], record["val_miou"], lr)

        score = record["val_miou"] if record["val_miou"] is not None else -record["train_loss"]
        if score > best_miou:
            best_epoch, best_miou = epoch, score
            best_state = copy.deepcopy(model.state_dict())
            if out_dir is not None:
                save_model(model, out_dir / "checkpoints" / "best", {"epoch": epoch})
        if out_dir is not None:
            _write_jsonl(metrics_path, record)
            save_model(model, out_dir / "checkpoints" / "last", {"epoch": epoch})

    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, history, best_epoch, best_miou if val_samples else float("nan"), best_state)


def evaluate_model(model, samples, name="model"):
    return evaluate(predict(model, samples), samples, name=name)
