"""Planted-alignment datasets with an analytic ground-truth oracle.

Every sample draws orthonormal step prototypes, lays the steps out in manual
order on a clip grid with background gaps, and renders clip features from the
active prototypes plus Gaussian noise. Missing steps, repeated steps and
overlapping neighbours are injected with configurable probabilities.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .types import ConfigError, DiagramSequence, GroundingSample, SeqGroundError, Timespan, VideoFeatures


class GenerationError(SeqGroundError):
    pass


@dataclass
class SynthConfig:
    num_samples: int = 100
    clip_count_range: tuple = (100, 200)
    diagram_count_range: tuple = (3, 6)
    feature_dim: int = 64
    noise_sigma: float = 0.1
    prob_missing_step: float = 0.1
    prob_repeated_step: float = 0.0
    prob_overlap: float = 0.0
    seed: int = 0
    background_fraction: tuple = (0.1, 0.3)
    min_segment_clips: int = 2
    clip_seconds: float = 1.0
    id_prefix: str = "synth"

    def __post_init__(self):
        self.clip_count_range = tuple(self.clip_count_range)
        self.diagram_count_range = tuple(self.diagram_count_range)
        self.background_fraction = tuple(self.background_fraction)
        for name in ("prob_missing_step", "prob_repeated_step", "prob_overlap"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0,1]", field=name)
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0", field="noise_sigma")
        for name in ("clip_count_range", "diagram_count_range"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ConfigError(f"{name} must be an ordered pair of positive integers", field=name)
        lo, hi = self.background_fraction
        if not 0.0 <= lo <= hi < 1.0:
            raise ConfigError("background_fraction must satisfy 0 <= lo <= hi < 1", field="background_fraction")
        if self.num_samples < 0 or self.feature_dim < 1 or self.min_segment_clips < 1:
            raise ConfigError("num_samples, feature_dim and min_segment_clips must be positive", field="num_samples")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown keys for SynthConfig: {unknown}", field=unknown[0])
        return cls(**data)


def _prototypes(rng, m, dim):
    raw = rng.standard_normal((dim, m))
    if m <= dim:
        q, _ = np.linalg.qr(raw)
        return q[:, :m].T.copy()
    return (raw / np.linalg.norm(raw, axis=0, keepdims=True)).T.copy()


def _step_order(rng, present, p_repeat):
    """Segment labels in timeline order; a repeated step recurs after the next step."""
    seq, pending = [], None
    for step in present:
        seq.append(step)
        if pending is not None:
            seq.append(pending)
            pending = None
        if rng.random() < p_repeat:
            pending = step
    if pending is not None:
        seq.append(pending)
    return seq


def _split(rng, total, parts):
    if parts == 0:
        return np.zeros(0, dtype=np.int64)
    if total == 0:
        return np.zeros(parts, dtype=np.int64)
    return rng.multinomial(total, rng.dirichlet(np.full(parts, 2.0)))


def generate_sample(cfg: SynthConfig, index: int) -> GroundingSample:
    rng = np.random.default_rng(cfg.seed + index)
    n = int(rng.integers(cfg.clip_count_range[0], cfg.clip_count_range[1] + 1))
    m = int(rng.integers(cfg.diagram_count_range[0], cfg.diagram_count_range[1] + 1))
    protos = _prototypes(rng, m, cfg.feature_dim)
    present = [i for i in range(m) if rng.random() >= cfg.prob_missing_step]
    seq = _step_order(rng, present, cfg.prob_repeated_step)
    s = len(seq)

    # consecutive segments of the same step need a background clip between them
    forced = np.zeros(s + 1, dtype=np.int64)
    for t in range(1, s):
        if seq[t] == seq[t - 1]:
            forced[t] = 1
    n_bg = max(math.ceil(rng.uniform(*cfg.background_fraction) * n), int(forced.sum())) if s else n
    n_fg = n - n_bg
    if n_fg < s * cfg.min_segment_clips:
        raise GenerationError(
            f"sample {index}: {s} segments of >= {cfg.min_segment_clips} clips do not fit in {n} clips"
        )
    seg_len = cfg.min_segment_clips + _split(rng, n_fg - s * cfg.min_segment_clips, s)
    gaps = forced + _split(rng, n_bg - int(forced.sum()), s + 1)

    segments = []  # [label, start_clip, end_clip)
    pos = 0
    for t in range(s):
        pos += int(gaps[t])
        segments.append([seq[t], pos, pos + int(seg_len[t])])
        pos += int(seg_len[t])

    overlaps = []
    for t in range(s - 1):
        a, b = segments[t], segments[t + 1]
        if a[0] == b[0] or rng.random() >= cfg.prob_overlap:
            continue
        room = b[2] - b[1] - 1
        if room < 1:
            continue
        depth = min(room, max(1, int(round(rng.uniform(0.2, 0.5) * (b[2] - b[1])))))
        a[2] = b[1] + depth
        overlaps.append((int(a[0]), int(b[0]), depth))

    active = np.zeros((n, m), dtype=bool)
    for label, start, end in segments:
        active[start:end, label] = True
    counts = active.sum(1, keepdims=True)
    clean = (active.astype(np.float64) @ protos) / np.sqrt(np.maximum(counts, 1))
    # single-step clips equal the prototype exactly; overlap clips are the normalized mean
    single = counts[:, 0] == 1
    clean[single] = protos[active[single].argmax(1)]
    clips = clean + cfg.noise_sigma * rng.standard_normal((n, cfg.feature_dim))
    diagrams = protos + cfg.noise_sigma * rng.standard_normal((m, cfg.feature_dim))

    gt = [[] for _ in range(m)]
    for label, start, end in segments:
        gt[label].append(Timespan(start / n, end / n))
    for spans in gt:
        spans.sort(key=lambda sp: sp.start)

    return GroundingSample(
        id=f"{cfg.id_prefix}_{index:05d}",
        video=VideoFeatures(clips.astype(np.float32), duration_seconds=n * cfg.clip_seconds),
        diagrams=DiagramSequence(diagrams.astype(np.float32)),
        ground_truth=gt,
        metadata={"overlaps": overlaps, "segments": [tuple(x) for x in segments]},
    )


def generate_dataset(cfg: SynthConfig) -> list:
    """Deterministic under ``cfg.seed``; sample ``i`` is seeded with ``seed + i``."""
    return [generate_sample(cfg, i) for i in range(cfg.num_samples)]


def _runs(flags):
    """Maximal runs of True as [start, end) index pairs."""
    out, start = [], None
    for c, f in enumerate(flags):
        if f and start is None:
            start = c
        elif not f and start is not None:
            out.append((start, c))
            start = None
    if start is not None:
        out.append((start, len(flags)))
    return out


def oracle_ground(sample: GroundingSample, threshold=0.5, relative=0.6) -> list:
    """Recovers spans by cosine similarity between clips and diagram features.

    A clip whose best similarity is below ``threshold`` is background.
    Otherwise it belongs to the argmax diagram and to any other diagram
    reaching ``relative`` times the best similarity, which picks up both
    steps inside an overlap. Maximal runs become spans.
    """
    clips = np.asarray(sample.video.clips, dtype=np.float64)
    diagrams = np.asarray(sample.diagrams.diagrams, dtype=np.float64)
    n = clips.shape[0]
    cn = np.linalg.norm(clips, axis=1, keepdims=True)
    dn = np.linalg.norm(diagrams, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = (clips / np.where(cn > 0, cn, 1.0)) @ (diagrams / np.where(dn > 0, dn, 1.0)).T
    sims[cn[:, 0] == 0] = -np.inf
    best = sims.max(axis=1, keepdims=True)
    active = (best >= threshold) & (sims >= relative * best)
    return [[Timespan(a / n, b / n) for a, b in _runs(active[:, i])] for i in range(diagrams.shape[0])]
