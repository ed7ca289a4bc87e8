"""Feature projections into the shared space and their contrastive pretraining."""
from __future__ import annotations

import logging
import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .encoding import normalized_pe, progress_encoding
from .types import ConfigError

log = logging.getLogger(__name__)

_PE_CACHE = {}


def sprf(index, length, dim):
    """Sinusoidal progress-rate feature of position ``index`` out of ``length``."""
    return progress_encoding(index, length, dim)


def pe_table(length, dim, device=None, dtype=torch.float32):
    key = (int(length), int(dim), dtype)
    if key not in _PE_CACHE:
        _PE_CACHE[key] = torch.from_numpy(normalized_pe(length, dim)).to(dtype)
    out = _PE_CACHE[key]
    return out if device is None else out.to(device)


def padded_pe(lengths, max_len, dim, dtype=torch.float32):
    """(B, max_len, dim) encodings per sample length, zeros past each length."""
    out = torch.zeros(len(lengths), max_len, dim, dtype=dtype)
    for b, n in enumerate(lengths):
        out[b, :n] = pe_table(int(n), dim, dtype=dtype)
    return out


class MLP(nn.Module):
    def __init__(self, in_dim, hidden_dim, out_dim, num_layers=2):
        super().__init__()
        dims = [in_dim] + [hidden_dim] * (num_layers - 1) + [out_dim]
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.relu(x)
        return x


class ProjectionPair(nn.Module):
    """Two-layer perceptrons mapping raw video and diagram features to width ``dim``.

    With ``sprf_dim > 0`` each input row is first concatenated with its
    progress-rate feature, so the perceptrons see ``in_dim + sprf_dim`` columns.
    """

    def __init__(self, video_in_dim, diagram_in_dim, dim, sprf_dim=0, hidden_dim=None):
        super().__init__()
        hidden_dim = hidden_dim or 2 * dim
        self.video_in_dim = video_in_dim
        self.diagram_in_dim = diagram_in_dim
        self.dim = dim
        self.sprf_dim = sprf_dim
        self.video_proj = MLP(video_in_dim + sprf_dim, hidden_dim, dim)
        self.diagram_proj = MLP(diagram_in_dim + sprf_dim, hidden_dim, dim)
        # learnable, stored as log so it stays positive; used only by the contrastive loss
        self.log_temperature = nn.Parameter(torch.tensor(math.log(0.07)))

    @property
    def temperature(self):
        return float(self.log_temperature.detach().exp())

    def identity_init(self):
        """Exact identity map (needs in_dim == dim, sprf_dim == 0, hidden >= 2*dim)."""
        for mlp, in_dim in ((self.video_proj, self.video_in_dim), (self.diagram_proj, self.diagram_in_dim)):
            first, second = mlp.layers
            if in_dim != self.dim or self.sprf_dim or first.out_features < 2 * self.dim:
                raise ConfigError("identity init needs in_dim == dim, no SPRF and hidden >= 2*dim")
            eye = torch.eye(self.dim)
            with torch.no_grad():
                first.weight.zero_()
                first.bias.zero_()
                second.weight.zero_()
                second.bias.zero_()
                # relu(x) - relu(-x) == x
                first.weight[: self.dim] = eye
                first.weight[self.dim : 2 * self.dim] = -eye
                second.weight[:, : self.dim] = eye
                second.weight[:, self.dim : 2 * self.dim] = -eye
        return self

    def _with_sprf(self, x, lengths):
        if not self.sprf_dim:
            return x
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        if lengths is None:
            lengths = [x.shape[1]] * x.shape[0]
        pe = padded_pe(lengths, x.shape[1], self.sprf_dim, dtype=x.dtype).to(x.device)
        out = torch.cat([x, pe], dim=-1)
        return out.squeeze(0) if squeeze else out

    def project_video(self, video, lengths=None):
        if video.shape[-1] != self.video_in_dim:
            raise ConfigError(f"video width {video.shape[-1]} != projection input {self.video_in_dim}", field="video_in_dim")
        return self.video_proj(self._with_sprf(video, lengths))

    def project_diagrams(self, diagrams, lengths=None):
        if diagrams.shape[-1] != self.diagram_in_dim:
            raise ConfigError(
                f"diagram width {diagrams.shape[-1]} != projection input {self.diagram_in_dim}", field="diagram_in_dim"
            )
        return self.diagram_proj(self._with_sprf(diagrams, lengths))

    def forward(self, video, diagrams, video_lengths=None, diagram_lengths=None):
        return self.project_video(video, video_lengths), self.project_diagrams(diagrams, diagram_lengths)


def project(proj: ProjectionPair, sample):
    """Projects one sample's features; returns float32 numpy arrays (N, D), (M, D)."""
    with torch.no_grad():
        v = torch.as_tensor(np.asarray(sample.video.clips), dtype=torch.float32)
        d = torch.as_tensor(np.asarray(sample.diagrams.diagrams), dtype=torch.float32)
        f_v, f_i = proj(v, d)
    return f_v.numpy(), f_i.numpy()


def info_nce(anchors, candidates, positive_mask, temperature):
    """One-directional InfoNCE with possibly several positives per anchor.

    Rows of ``anchors`` without any positive are ignored. Similarities are
    cosine similarities divided by ``temperature``.
    """
    a = F.normalize(anchors, dim=-1)
    c = F.normalize(candidates, dim=-1)
    logits = a @ c.T / temperature
    pos = positive_mask.bool()
    keep = pos.any(dim=1)
    if not bool(keep.any()):
        return logits.new_zeros(())
    logits, pos = logits[keep], pos[keep]
    log_all = torch.logsumexp(logits, dim=1)
    log_pos = torch.logsumexp(logits.masked_fill(~pos, float("-inf")), dim=1)
    return (log_all - log_pos).mean()


def symmetric_info_nce(video_z, diagram_z, positive_mask, temperature):
    """Average of clip->diagram and diagram->clip InfoNCE; mask is (clips, diagrams)."""
    return 0.5 * (
        info_nce(video_z, diagram_z, positive_mask, temperature)
        + info_nce(diagram_z, video_z, positive_mask.T, temperature)
    )


def positive_pairs(sample):
    """(N, M) mask: clip ``c`` is positive for diagram ``i`` if its center lies in a span of ``i``."""
    n, m = sample.num_clips, sample.num_diagrams
    centers = (np.arange(n) + 0.5) / n
    mask = np.zeros((n, m), dtype=bool)
    for i, spans in enumerate(sample.ground_truth):
        for s in spans:
            mask[:, i] |= (centers >= s.start) & (centers <= s.end)
    return mask


def contrastive_loss_for_sample(proj, sample):
    mask = positive_pairs(sample)
    fg = mask.any(axis=1)  # background clips take no part
    if not fg.any():
        return None
    video = torch.as_tensor(np.asarray(sample.video.clips), dtype=torch.float32)
    diagrams = torch.as_tensor(np.asarray(sample.diagrams.diagrams), dtype=torch.float32)
    zv, zd = proj(video, diagrams)
    pos = torch.from_numpy(mask[fg])
    return symmetric_info_nce(zv[torch.from_numpy(fg)], zd, pos, proj.log_temperature.exp())


def contrastive_pretrain(samples, proj: ProjectionPair, temperature=None, epochs=5, lr=1e-3, seed=0, history=None):
    """Trains ``proj`` in place with the symmetric clip/diagram InfoNCE loss.

    Each sample forms one batch: its foreground clips against its diagrams.
    ``temperature`` overrides the initial learnable temperature. Per-epoch
    mean losses are appended to ``history`` when given.
    """
    if temperature is not None:
        with torch.no_grad():
            proj.log_temperature.fill_(math.log(temperature))
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.AdamW(proj.parameters(), lr=lr, weight_decay=1e-4)
    proj.train()
    for epoch in range(epochs):
        order = torch.randperm(len(samples), generator=gen).tolist()
        losses = []
        for idx in order:
            loss = contrastive_loss_for_sample(proj, samples[idx])
            if loss is None:
                log.warning("sample %s has no positive pair; skipped", samples[idx].id)
                continue
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite contrastive loss on sample {samples[idx].id}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        mean = float(np.mean(losses)) if losses else float("nan")
        log.info("align epoch %d loss %.4f", epoch, mean)
        if history is not None:
            history.append(mean)
    proj.eval()
    return proj


def positive_negative_similarity(proj, samples, max_pairs=100, seed=0):
    """Mean cosine similarity of sampled positive and negative clip/diagram pairs."""
    rng = np.random.default_rng(seed)
    pos_sims, neg_sims = [], []
    for sample in samples:
        mask = positive_pairs(sample)
        fv, fi = project(proj, sample)
        fv = fv / np.linalg.norm(fv, axis=1, keepdims=True)
        fi = fi / np.linalg.norm(fi, axis=1, keepdims=True)
        sims = fv @ fi.T
        fg = mask.any(axis=1)
        pos_sims.extend(sims[mask].tolist())
        neg_sims.extend(sims[fg[:, None] & ~mask].tolist())
    pos = rng.choice(pos_sims, size=min(max_pairs, len(pos_sims)), replace=False)
    neg = rng.choice(neg_sims, size=min(max_pairs, len(neg_sims)), replace=False)
    return float(np.mean(pos)), float(np.mean(neg))
