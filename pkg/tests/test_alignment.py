import math

import numpy as np
import pytest
import torch

from seqground.alignment import (
    ProjectionPair,
    contrastive_loss_for_sample,
    contrastive_pretrain,
    info_nce,
    positive_pairs,
    positive_negative_similarity,
    project,
    symmetric_info_nce,
)
from seqground.synthetic import SynthConfig, generate_dataset
from seqground.trainer import load_projection, save_projection
from seqground.types import ConfigError


def test_info_nce_singleton_is_zero():
    a, c = torch.randn(1, 4), torch.randn(1, 4)
    assert float(info_nce(a, c, torch.ones(1, 1), 0.07)) == pytest.approx(0.0, abs=1e-7)


def test_info_nce_worked_value():
    anchor = torch.tensor([[1.0, 0.0, 0.0]])
    cands = torch.eye(3)
    loss = info_nce(anchor, cands, torch.tensor([[1, 0, 0]]), 1.0)
    assert float(loss) == pytest.approx(math.log(1 + 2 * math.exp(-1)), abs=1e-6)


def test_info_nce_permutation_invariant():
    g = torch.Generator().manual_seed(0)
    v, d = torch.randn(10, 8, generator=g), torch.randn(3, 8, generator=g)
    mask = torch.zeros(10, 3, dtype=torch.bool)
    mask[torch.arange(10), torch.arange(10) % 3] = True
    base = symmetric_info_nce(v, d, mask, 0.1)
    perm = torch.randperm(10, generator=g)
    assert float(symmetric_info_nce(v[perm], d, mask[perm], 0.1)) == pytest.approx(float(base), abs=1e-6)


def test_identity_projection():
    proj = ProjectionPair(6, 6, 6).identity_init()
    x = torch.randn(5, 6)
    v, d = proj(x, x[:2])
    assert torch.equal(v, x) and torch.equal(d, x[:2])
    with pytest.raises(ConfigError):
        ProjectionPair(5, 6, 6).identity_init()


def test_zero_input_gives_bias_composition():
    proj = ProjectionPair(4, 3, 8)
    v = proj.project_video(torch.zeros(2, 4))
    first, second = proj.video_proj.layers
    expected = second.weight @ torch.relu(first.bias) + second.bias
    assert torch.allclose(v, expected.expand(2, 8), atol=0)


def test_width_mismatch():
    with pytest.raises(ConfigError):
        ProjectionPair(4, 3, 8).project_video(torch.zeros(2, 5))


def test_save_load_bit_identical(tmp_path):
    torch.manual_seed(0)
    proj = ProjectionPair(5, 7, 8, sprf_dim=4)
    sample = generate_dataset(SynthConfig(num_samples=1, feature_dim=5, clip_count_range=(20, 20)))[0]
    sample.diagrams.diagrams = np.random.default_rng(0).standard_normal((sample.num_diagrams, 7)).astype(np.float32)
    save_projection(proj, tmp_path / "p")
    back = load_projection(tmp_path / "p")
    a, b = project(proj, sample), project(back, sample)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert back.temperature == pytest.approx(0.07)


def test_positive_pairs_exclude_background():
    s = generate_dataset(SynthConfig(num_samples=1, noise_sigma=0.0))[0]
    mask = positive_pairs(s)
    labels = np.zeros_like(mask)
    for label, a, b in s.metadata["segments"]:
        labels[a:b, label] = True
    np.testing.assert_array_equal(mask, labels)


def test_no_positive_batch_skipped(caplog):
    s = generate_dataset(SynthConfig(num_samples=1, prob_missing_step=1.0, diagram_count_range=(3, 3)))[0]
    proj = ProjectionPair(64, 64, 16)
    assert contrastive_loss_for_sample(proj, s) is None
    with caplog.at_level("WARNING"):
        contrastive_pretrain([s], proj, epochs=1)
    assert "no positive pair" in caplog.text


def test_pretraining_separates_pairs():
    torch.manual_seed(0)
    cfg = SynthConfig(num_samples=40, noise_sigma=0.1, clip_count_range=(60, 80), feature_dim=32)
    train = generate_dataset(cfg)
    held = generate_dataset(SynthConfig(**dict(cfg.to_dict(), seed=999, num_samples=10)))
    # a random linear mix so the two modalities start in different spaces
    mix = np.random.default_rng(1).standard_normal((32, 32)).astype(np.float32)
    for s in train + held:
        s.diagrams.diagrams = s.diagrams.diagrams @ mix
    proj = ProjectionPair(32, 32, 32, sprf_dim=8)
    history = []
    contrastive_pretrain(train, proj, epochs=5, lr=1e-3, history=history)
    assert all(np.isfinite(history))
    assert history[-1] < history[0]
    pos, neg = positive_negative_similarity(proj, held, max_pairs=100)
    assert pos - neg > 0.2
