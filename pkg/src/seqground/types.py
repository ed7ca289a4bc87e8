"""Data model shared by every stage of the pipeline."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np


class SeqGroundError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(SeqGroundError):
    """A binary array file does not follow the expected layout."""


class ValidationError(SeqGroundError):
    """Input data or configuration violates an invariant."""

    def __init__(self, message, field=None, sample_id=None):
        parts = [message]
        if field is not None:
            parts.append(f"field={field}")
        if sample_id is not None:
            parts.append(f"sample={sample_id}")
        super().__init__("; ".join(parts))
        self.field = field
        self.sample_id = sample_id


class ConfigError(ValidationError):
    pass


@dataclass(frozen=True)
class Timespan:
    """A segment in normalized time, 0 <= start <= end <= 1."""

    start: float
    end: float

    def __post_init__(self):
        problems = span_problems(self.start, self.end)
        if problems:
            raise ValidationError(problems[0], field="span")

    @property
    def length(self):
        return self.end - self.start

    @property
    def midpoint(self):
        return 0.5 * (self.start + self.end)

    def as_tuple(self):
        return (self.start, self.end)


def span_problems(start, end):
    """Invariant violations of a (start, end) pair, as human-readable strings."""
    out = []
    if not (math.isfinite(start) and math.isfinite(end)):
        return ["span is not finite"]
    if start < 0.0 or start > 1.0:
        out.append("start out of [0,1]")
    if end < 0.0 or end > 1.0:
        out.append("end out of [0,1]")
    if start > end:
        out.append("start > end")
    return out


@dataclass
class VideoFeatures:
    clips: np.ndarray
    duration_seconds: float = 1.0

    @property
    def clip_count(self):
        return int(self.clips.shape[0])


@dataclass
class DiagramSequence:
    diagrams: np.ndarray

    @property
    def diagram_count(self):
        return int(self.diagrams.shape[0])


@dataclass
class GroundingSample:
    id: str
    video: VideoFeatures
    diagrams: DiagramSequence
    ground_truth: list  # per diagram: list[Timespan]
    metadata: dict = field(default_factory=dict)

    @property
    def num_diagrams(self):
        return self.diagrams.diagram_count

    @property
    def num_clips(self):
        return self.video.clip_count

    def gt_arrays(self):
        """Ground truth as a list of (n_i, 2) float64 arrays."""
        return [
            np.array([s.as_tuple() for s in spans], dtype=np.float64).reshape(-1, 2)
            for spans in self.ground_truth
        ]


@dataclass(frozen=True)
class Prediction:
    diagram_index: int
    query_index: int
    score: float
    span: Timespan


@dataclass
class ValidationReport:
    findings: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.findings

    def __bool__(self):
        return self.ok


def validate_sample(sample: GroundingSample) -> ValidationReport:
    """Collects every invariant violation of ``sample`` without raising."""
    findings = []
    clips = np.asarray(sample.video.clips)
    diagrams = np.asarray(sample.diagrams.diagrams)
    if clips.ndim != 2 or clips.shape[0] < 1:
        findings.append("clip_count must be >= 1")
    elif not np.all(np.isfinite(clips)):
        findings.append("video features contain non-finite values")
    if diagrams.ndim != 2 or diagrams.shape[0] < 1:
        findings.append("diagram_count must be >= 1")
    elif not np.all(np.isfinite(diagrams)):
        findings.append("diagram features contain non-finite values")
    if not (sample.video.duration_seconds > 0):
        findings.append("duration_seconds must be positive")
    m = diagrams.shape[0] if diagrams.ndim == 2 else 0
    if len(sample.ground_truth) != m:
        findings.append(f"length mismatch: ground_truth has {len(sample.ground_truth)} entries for {m} diagrams")
    for i, spans in enumerate(sample.ground_truth):
        for span in spans:
            start, end = (span.start, span.end) if isinstance(span, Timespan) else span
            for p in span_problems(float(start), float(end)):
                findings.append(f"diagram {i}: {p}")
    return ValidationReport(findings)


def _check_choice(name, value, choices):
    if value not in choices:
        raise ConfigError(f"{name} must be one of {sorted(choices)}, got {value!r}", field=name)


@dataclass
class ModelConfig:
    hidden_dim: int = 256
    num_queries: int = 3
    num_layers: int = 2
    num_heads: int = 8
    ffn_dim: Optional[int] = None
    dropout: float = 0.1
    mask_type: str = "D"
    value_fusion: str = "concat_project"
    use_diagram_pe: bool = True
    use_aux_loss: bool = True
    normalize_video_length: Optional[int] = 256
    freeze_projection: bool = False
    video_in_dim: Optional[int] = None
    diagram_in_dim: Optional[int] = None
    sprf_dim: int = 0
    # cross-attention content projections start as gain * identity, so the
    # content logits begin as the similarity of the aligned features; None keeps
    # the framework's random initialization
    content_init_gain: Optional[float] = 4.0
    projection_init: str = "random"

    def __post_init__(self):
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.hidden_dim
        self.validate()

    def validate(self):
        for name in ("hidden_dim", "num_queries", "num_layers", "num_heads", "ffn_dim"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}", field=name)
        if self.hidden_dim % self.num_heads:
            raise ConfigError("hidden_dim must be divisible by num_heads", field="hidden_dim")
        if self.hidden_dim % 2:
            raise ConfigError("hidden_dim must be even for sinusoidal encodings", field="hidden_dim")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0,1)", field="dropout")
        _check_choice("mask_type", self.mask_type, {"A", "B", "C", "D"})
        _check_choice("value_fusion", self.value_fusion, {"add", "concat_project"})
        if self.normalize_video_length is not None and self.normalize_video_length < 2:
            raise ConfigError("normalize_video_length must be >= 2 or null", field="normalize_video_length")
        if self.sprf_dim < 0 or self.sprf_dim % 2:
            raise ConfigError("sprf_dim must be a nonnegative even integer", field="sprf_dim")
        if self.content_init_gain is not None and not self.content_init_gain > 0:
            raise ConfigError("content_init_gain must be positive or null", field="content_init_gain")
        _check_choice("projection_init", self.projection_init, {"random", "identity"})

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**_strict_kwargs(cls, data))


@dataclass
class LossWeights:
    lambda_l1: float = 10.0
    lambda_giou: float = 1.0
    lambda_score: float = 4.0
    background_weight: float = 0.25

    def __post_init__(self):
        ws = (self.lambda_l1, self.lambda_giou, self.lambda_score)
        if any(w < 0 for w in ws):
            raise ConfigError("loss weights must be nonnegative", field="loss_weights")
        if all(w == 0 for w in ws):
            raise ConfigError("loss weights must not all be zero", field="loss_weights")
        if self.background_weight < 0:
            raise ConfigError("background_weight must be nonnegative", field="background_weight")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**_strict_kwargs(cls, data))


def _strict_kwargs(cls, data):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {unknown}", field=unknown[0])
    return dict(data)
