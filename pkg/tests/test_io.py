import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from seqground.io import (
    decode_array,
    encode_array,
    load_samples,
    read_array_file,
    read_feature_file,
    read_manifest,
    write_array_file,
    write_dataset,
)
from seqground.types import (
    DiagramSequence,
    FormatError,
    GroundingSample,
    Timespan,
    ValidationError,
    VideoFeatures,
    validate_sample,
)


def test_round_trip_ascending(tmp_path):
    x = np.arange(12, dtype=np.float32).reshape(3, 4)
    write_array_file(tmp_path / "a.sqga", x)
    y, shape = read_array_file(tmp_path / "a.sqga")
    assert shape == (3, 4)
    np.testing.assert_array_equal(x, y)


def test_header_layout():
    buf = encode_array(np.zeros((2, 3), dtype=np.float32))
    assert buf[:4] == b"SQGA"
    assert struct.unpack_from("<BBB", buf, 4) == (1, 1, 2)
    assert struct.unpack_from("<2I", buf, 7) == (2, 3)
    assert len(buf) == 4 + 3 + 8 + 6 * 4


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(0, 5), st.integers(0, 5)), elements=st.floats(width=32, allow_nan=False)))
def test_round_trip_bit_exact(x):
    y = decode_array(encode_array(x))
    assert y.shape == x.shape
    assert y.tobytes() == x.astype("<f4").tobytes()


def test_truncated_payload(tmp_path):
    buf = encode_array(np.zeros((2, 2), dtype=np.float32))[:-4]
    (tmp_path / "t.sqga").write_bytes(buf)
    with pytest.raises(FormatError, match="truncated"):
        read_array_file(tmp_path / "t.sqga")


def test_bad_magic_and_dtype():
    buf = bytearray(encode_array(np.zeros((1, 1), dtype=np.float32)))
    with pytest.raises(FormatError, match="magic"):
        decode_array(b"XXXX" + bytes(buf[4:]))
    buf[5] = 2
    with pytest.raises(FormatError, match="dtype"):
        decode_array(bytes(buf))


def test_empty_feature_matrix_rejected(tmp_path):
    write_array_file(tmp_path / "e.sqga", np.zeros((0, 8), dtype=np.float32))
    with pytest.raises(FormatError, match="clip_count must be >= 1"):
        read_feature_file(tmp_path / "e.sqga")


def _manifest(tmp_path, gt, **extra):
    write_array_file(tmp_path / "v.sqga", np.ones((10, 4), dtype=np.float32))
    write_array_file(tmp_path / "d.sqga", np.ones((len(gt), 4), dtype=np.float32))
    entry = {"id": "s0", "video_features": "v.sqga", "diagram_features": "d.sqga", "duration_seconds": 12.5, "ground_truth": gt}
    entry.update(extra)
    path = tmp_path / "m.json"
    path.write_text(json.dumps([entry]))
    return path


def test_manifest_basic(tmp_path):
    path = _manifest(tmp_path, [[[0.1, 0.3]], [[0.5, 0.9]]])
    (d,) = read_manifest(path)
    assert d.num_diagrams == 2
    assert d.ground_truth[0] == [Timespan(0.1, 0.3)]
    assert d.video_features == (tmp_path / "v.sqga").resolve()
    sample = d.load()
    assert sample.num_clips == 10 and sample.num_diagrams == 2


def test_manifest_start_after_end(tmp_path):
    path = _manifest(tmp_path, [[[0.7, 0.2]]])
    with pytest.raises(ValidationError, match="start > end") as err:
        read_manifest(path)
    assert err.value.sample_id == "s0"
    assert err.value.field == "ground_truth"


def test_manifest_empty_span_list_accepted(tmp_path):
    path = _manifest(tmp_path, [[], [[0.0, 1.0]]])
    (d,) = read_manifest(path)
    assert d.ground_truth[0] == []


def test_manifest_errors(tmp_path):
    with pytest.raises(OSError):
        read_manifest(tmp_path / "missing.json")
    path = _manifest(tmp_path, [[[0.1, 0.2]]], extra_key=1)
    with pytest.raises(ValidationError, match="unknown"):
        read_manifest(path)
    path.write_text(json.dumps([{"id": "x"}]))
    with pytest.raises(ValidationError) as err:
        read_manifest(path)
    assert err.value.sample_id == "x"


def _sample(gt, m=2):
    return GroundingSample("s", VideoFeatures(np.zeros((5, 3))), DiagramSequence(np.zeros((m, 3))), gt)


def test_validate_sample():
    assert validate_sample(_sample([[Timespan(0.1, 0.2)], []])).ok
    report = validate_sample(_sample([[(0.1, 1.2)], []]))
    assert any("end out of [0,1]" in f for f in report.findings)
    report = validate_sample(_sample([[], [], []]))
    assert any("length mismatch" in f for f in report.findings)


def test_write_dataset_round_trip(tmp_path):
    s = GroundingSample(
        "abc",
        VideoFeatures(np.random.default_rng(0).standard_normal((7, 3)).astype(np.float32), 7.0),
        DiagramSequence(np.eye(2, 3, dtype=np.float32)),
        [[Timespan(0.0, 0.25)], []],
    )
    path = write_dataset([s], tmp_path)
    (back,) = load_samples(path)
    np.testing.assert_array_equal(back.video.clips, s.video.clips)
    assert back.ground_truth == s.ground_truth
