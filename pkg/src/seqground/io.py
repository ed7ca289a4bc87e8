"""Binary array files and the JSON sample manifest.

Array layout (little-endian, no padding)::

    b"SQGA" | version u8 = 1 | dtype u8 (1 = float32) | rank u8 | rank x u32 dims | payload

The manifest is a JSON list of objects with keys ``id``, ``video_features``,
``diagram_features``, ``duration_seconds`` and ``ground_truth``; feature paths
are relative to the manifest's directory.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .types import (
    DiagramSequence,
    FormatError,
    GroundingSample,
    Timespan,
    ValidationError,
    VideoFeatures,
    span_problems,
)

MAGIC = b"SQGA"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 1
_DTYPES = {DTYPE_FLOAT32: np.dtype("<f4")}


def encode_array(array) -> bytes:
    arr = np.asarray(array)
    if arr.dtype != np.float32:
        arr = arr.astype(np.float32)
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim > 255:
        raise FormatError("rank exceeds 255")
    header = MAGIC + struct.pack("<BBB", FORMAT_VERSION, DTYPE_FLOAT32, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def decode_array(buf: bytes, source="<bytes>") -> np.ndarray:
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic")
    version, dtype_code, rank = struct.unpack_from("<BBB", buf, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{source}: unsupported format version {version}")
    if dtype_code not in _DTYPES:
        raise FormatError(f"{source}: dtype mismatch (code {dtype_code})")
    offset = 7
    if len(buf) < offset + 4 * rank:
        raise FormatError(f"{source}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    dtype = _DTYPES[dtype_code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    expected = count * dtype.itemsize
    payload = len(buf) - offset
    if payload < expected:
        raise FormatError(f"{source}: truncated payload ({payload} of {expected} bytes)")
    if payload > expected:
        raise FormatError(f"{source}: {payload - expected} trailing bytes after payload")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(dims).copy()


def write_array_file(path, array):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_array(array))


def read_array_file(path):
    """Returns ``(array, shape)`` for a file written by :func:`write_array_file`."""
    path = Path(path)
    arr = decode_array(path.read_bytes(), source=str(path))
    return arr, arr.shape


def read_feature_file(path):
    """Reads a 2-D feature matrix with at least one row."""
    arr, shape = read_array_file(path)
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected a rank-2 feature matrix, got rank {arr.ndim}")
    if shape[0] < 1:
        raise FormatError(f"{path}: clip_count must be >= 1")
    return arr


@dataclass
class SampleDescriptor:
    id: str
    video_features: Path
    diagram_features: Path
    duration_seconds: float
    ground_truth: list  # per diagram: list[Timespan]

    @property
    def num_diagrams(self):
        return len(self.ground_truth)

    def load(self) -> GroundingSample:
        clips = read_feature_file(self.video_features)
        diagrams = read_feature_file(self.diagram_features)
        if diagrams.shape[0] != self.num_diagrams:
            raise ValidationError(
                f"length mismatch: {diagrams.shape[0]} diagram rows vs {self.num_diagrams} ground-truth entries",
                field="ground_truth",
                sample_id=self.id,
            )
        return GroundingSample(
            id=self.id,
            video=VideoFeatures(clips, self.duration_seconds),
            diagrams=DiagramSequence(diagrams),
            ground_truth=self.ground_truth,
        )


_REQUIRED = {
    "id": str,
    "video_features": str,
    "diagram_features": str,
    "duration_seconds": (int, float),
    "ground_truth": list,
}


def _parse_entry(entry, index, root):
    if not isinstance(entry, dict):
        raise ValidationError(f"entry {index} is not an object", field="<entry>")
    sample_id = entry.get("id", f"#{index}")
    for key, kind in _REQUIRED.items():
        if key not in entry:
            raise ValidationError("missing field", field=key, sample_id=sample_id)
        if not isinstance(entry[key], kind) or isinstance(entry[key], bool):
            raise ValidationError("wrong type", field=key, sample_id=sample_id)
    extra = sorted(set(entry) - set(_REQUIRED))
    if extra:
        raise ValidationError(f"unknown keys {extra}", field=extra[0], sample_id=sample_id)
    if not entry["duration_seconds"] > 0:
        raise ValidationError("duration_seconds must be positive", field="duration_seconds", sample_id=sample_id)
    gt = []
    for i, spans in enumerate(entry["ground_truth"]):
        if not isinstance(spans, list):
            raise ValidationError(f"diagram {i}: expected a list of spans", field="ground_truth", sample_id=sample_id)
        parsed = []
        for span in spans:
            if (
                not isinstance(span, list)
                or len(span) != 2
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in span)
            ):
                raise ValidationError(f"diagram {i}: span must be [start, end]", field="ground_truth", sample_id=sample_id)
            problems = span_problems(float(span[0]), float(span[1]))
            if problems:
                raise ValidationError(f"diagram {i}: {problems[0]}", field="ground_truth", sample_id=sample_id)
            parsed.append(Timespan(float(span[0]), float(span[1])))
        gt.append(parsed)
    if not gt:
        raise ValidationError("diagram_count must be >= 1", field="ground_truth", sample_id=sample_id)
    return SampleDescriptor(
        id=entry["id"],
        video_features=(root / entry["video_features"]).resolve(),
        diagram_features=(root / entry["diagram_features"]).resolve(),
        duration_seconds=float(entry["duration_seconds"]),
        ground_truth=gt,
    )


def read_manifest(path) -> list:
    """Parses a manifest into descriptors; raises on the first malformed entry."""
    path = Path(path)
    with open(path) as fh:  # missing file propagates as OSError
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, list):
        raise ValidationError(f"{path}: top level must be a list")
    root = path.parent
    out = [_parse_entry(entry, i, root) for i, entry in enumerate(doc)]
    ids = [d.id for d in out]
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise ValidationError("duplicate id", field="id", sample_id=dup)
    return out


def load_samples(path) -> list:
    return [d.load() for d in read_manifest(path)]


def write_dataset(samples, out_dir, manifest_name="manifest.json"):
    """Writes feature arrays under ``out_dir/features`` and a manifest; returns its path."""
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        vrel = os.path.join("features", f"{s.id}.video.sqga")
        drel = os.path.join("features", f"{s.id}.diagrams.sqga")
        write_array_file(out_dir / vrel, s.video.clips)
        write_array_file(out_dir / drel, s.diagrams.diagrams)
        entries.append(
            {
                "id": s.id,
                "video_features": vrel,
                "diagram_features": drel,
                "duration_seconds": float(s.video.duration_seconds),
                "ground_truth": [[[span.start, span.end] for span in spans] for spans in s.ground_truth],
            }
        )
    manifest = out_dir / manifest_name
    manifest.write_text(json.dumps(entries, indent=1))
    return manifest
