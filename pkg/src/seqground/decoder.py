"""Encoder-free grounding decoder over composite queries.

Each layer runs masked self-attention among the M*K composite queries, adds
the diagram order encoding, cross-attends onto the video clips and applies a
feed-forward block. All attention logits are the sum of a content term and a
position term, computed as one dot product of concatenated vectors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .alignment import MLP, ProjectionPair, padded_pe
from .queries import build_composite_queries, build_mask
from .types import ConfigError, ModelConfig


def joint_attention_logits(q_content, k_content, q_pos, k_pos):
    """``(Q_c ⊕ Q_p)(K_c ⊕ K_p)^T``, i.e. ``Q_c K_c^T + Q_p K_p^T``; unscaled."""
    q_content, k_content, q_pos, k_pos = (torch.as_tensor(t) for t in (q_content, k_content, q_pos, k_pos))
    if q_content.shape != q_pos.shape or k_content.shape != k_pos.shape:
        raise ConfigError("content and position arrays must share shapes")
    if q_content.shape[-1] != k_content.shape[-1]:
        raise ConfigError("query and key widths differ")
    q = torch.cat([q_content, q_pos], dim=-1)
    k = torch.cat([k_content, k_pos], dim=-1)
    return q @ k.transpose(-1, -2)


def span_from_center_width(cw):
    """(..., 2) (center, width) in [0,1] -> (start, end) clamped to [0,1]."""
    center, width = cw[..., 0], cw[..., 1]
    start = (center - 0.5 * width).clamp(0.0, 1.0)
    end = (center + 0.5 * width).clamp(0.0, 1.0)
    return torch.stack([start, end], dim=-1)


class JointAttention(nn.Module):
    """Multi-head attention with separate content and position projections.

    Per head, the content and position parts of queries and keys are
    concatenated before the dot product, so logits carry no cross terms.
    Values fuse a feature stream and a position stream, either by adding them
    or by concatenating and projecting back to ``dim``.
    """

    def __init__(self, dim, num_heads, value_fusion="concat_project", dropout=0.0):
        super().__init__()
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.value_fusion = value_fusion
        self.q_content = nn.Linear(dim, dim)
        self.k_content = nn.Linear(dim, dim)
        self.q_pos = nn.Linear(dim, dim)
        self.k_pos = nn.Linear(dim, dim)
        self.value = nn.Linear(2 * dim if value_fusion == "concat_project" else dim, dim)
        self.out = nn.Linear(dim, dim)
        self.attn_drop = nn.Dropout(dropout)
        # per-head key width is content + position
        self.scale = (2 * self.head_dim) ** -0.5

    def _heads(self, x):
        b, n, _ = x.shape
        return x.view(b, n, self.num_heads, self.head_dim).transpose(1, 2)

    def fuse(self, feat, pos):
        if self.value_fusion == "add":
            return self.value(feat + pos)
        return self.value(torch.cat([feat, pos], dim=-1))

    def forward(self, q_content, q_pos, k_content, k_pos, v_feat, v_pos, allowed=None):
        """Returns ``(output (B, Lq, D), weights (B, H, Lq, Lk))``.

        ``allowed`` is a boolean (B, Lq, Lk) or (Lq, Lk) tensor; False entries
        get exactly zero weight.
        """
        qc, qp = self._heads(self.q_content(q_content)), self._heads(self.q_pos(q_pos))
        kc, kp = self._heads(self.k_content(k_content)), self._heads(self.k_pos(k_pos))
        logits = joint_attention_logits(qc, kc, qp, kp) * self.scale
        if allowed is not None:
            if allowed.dim() == 2:
                allowed = allowed.unsqueeze(0)
            if not bool(allowed.any(dim=-1).all()):
                raise RuntimeError("attention row with no allowed entries")
            logits = logits.masked_fill(~allowed.unsqueeze(1), float("-inf"))
        weights = logits.softmax(dim=-1)
        v = self._heads(self.fuse(v_feat, v_pos))
        out = self.attn_drop(weights) @ v
        b, _, lq, _ = out.shape
        out = out.transpose(1, 2).reshape(b, lq, self.dim)
        return self.out(out), weights


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.hidden_dim
        self.self_attn = JointAttention(d, cfg.num_heads, cfg.value_fusion, cfg.dropout)
        self.cross_attn = JointAttention(d, cfg.num_heads, cfg.value_fusion, cfg.dropout)
        self.ffn = nn.Sequential(
            nn.Linear(d, cfg.ffn_dim), nn.ReLU(), nn.Dropout(cfg.dropout), nn.Linear(cfg.ffn_dim, d)
        )
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)
        self.norm3 = nn.LayerNorm(d)
        self.drop1 = nn.Dropout(cfg.dropout)
        self.drop2 = nn.Dropout(cfg.dropout)
        self.drop3 = nn.Dropout(cfg.dropout)

    def self_attention(self, state, query_pos, allowed):
        out, w = self.self_attn(state, query_pos, state, query_pos, state, query_pos, allowed)
        return self.norm1(state + self.drop1(out)), w

    def cross_attention(self, state, query_pos, video, video_pos, allowed):
        out, w = self.cross_attn(state, query_pos, video, video_pos, video, video_pos, allowed)
        return self.norm2(state + self.drop2(out)), w

    def forward(self, state, query_pos, diagram_pos, video, video_pos, self_allowed, cross_allowed):
        state, self_w = self.self_attention(state, query_pos, self_allowed)
        state = inject_diagram_prior(state, diagram_pos)
        state, cross_w = self.cross_attention(state, query_pos, video, video_pos, cross_allowed)
        state = self.norm3(state + self.drop3(self.ffn(state)))
        return state, self_w, cross_w


def inject_diagram_prior(state, diagram_pos_rows):
    """Adds each composite row's diagram encoding; ``None`` leaves states unchanged."""
    if diagram_pos_rows is None:
        return state
    return state + diagram_pos_rows


@dataclass
class LayerOutput:
    score_logits: torch.Tensor  # (B, MK)
    spans: torch.Tensor  # (B, MK, 2) as (start, end)

    @property
    def scores(self):
        return self.score_logits.sigmoid()


@dataclass
class DecoderOutput:
    layers: list  # LayerOutput per decoder layer
    row_valid: torch.Tensor  # (B, MK) False for padded diagram rows
    num_diagrams: list  # real M per sample
    num_queries: int
    self_attention: list = field(default_factory=list)  # per layer (B, H, MK, MK)
    cross_attention: list = field(default_factory=list)  # per layer (B, H, MK, N)

    @property
    def final(self):
        return self.layers[-1]


class PredictionHeads(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.span = MLP(dim, dim, 2, num_layers=3)
        self.score = nn.Linear(dim, 1)

    def forward(self, state):
        cw = self.span(state).sigmoid()
        return LayerOutput(self.score(state).squeeze(-1), span_from_center_width(cw))


class GroundingModel(nn.Module):
    def __init__(self, cfg: ModelConfig, projection: ProjectionPair | None = None):
        super().__init__()
        if cfg.video_in_dim is None or cfg.diagram_in_dim is None:
            raise ConfigError("video_in_dim and diagram_in_dim must be set", field="video_in_dim")
        self.cfg = cfg
        d = cfg.hidden_dim
        if projection is None:
            projection = ProjectionPair(cfg.video_in_dim, cfg.diagram_in_dim, d, cfg.sprf_dim)
            if cfg.projection_init == "identity":
                projection.identity_init()
        self.projection = projection
        if self.projection.dim != d:
            raise ConfigError("projection width must equal hidden_dim", field="hidden_dim")
        if cfg.freeze_projection:
            for p in self.projection.parameters():
                p.requires_grad_(False)
        self.query_embed = nn.Parameter(torch.randn(cfg.num_queries, d))
        self.layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.num_layers))
        self.heads = PredictionHeads(d)
        self._masks = {}
        if cfg.content_init_gain is not None:
            eye = torch.eye(d) * cfg.content_init_gain
            with torch.no_grad():
                for layer in self.layers:
                    for lin in (layer.cross_attn.q_content, layer.cross_attn.k_content):
                        lin.weight.copy_(eye)
                        lin.bias.zero_()

    def self_mask(self, m):
        if m not in self._masks:
            self._masks[m] = torch.from_numpy(build_mask(m, self.cfg.num_queries, self.cfg.mask_type))
        return self._masks[m]

    def forward(self, video, video_mask, diagrams, diagram_mask, return_attention=False):
        """
        Args:
            video: (B, N, Dv) clip features, padded past each sample's length.
            video_mask: (B, N) bool, True for real clips.
            diagrams: (B, M, Di) diagram features.
            diagram_mask: (B, M) bool, True for real diagrams.
        """
        cfg = self.cfg
        k, d = cfg.num_queries, cfg.hidden_dim
        bsz, n_max = video_mask.shape
        m_max = diagram_mask.shape[1]
        if n_max == 0:
            raise ConfigError("video has no clips")
        v_len = video_mask.sum(1).tolist()
        m_len = diagram_mask.sum(1).tolist()
        f_v, f_i = self.projection(video, diagrams, v_len, m_len)
        f_v = f_v * video_mask.unsqueeze(-1)
        p_v = padded_pe(v_len, n_max, d, dtype=f_v.dtype).to(f_v.device)
        cq = build_composite_queries(f_i, self.query_embed)
        row_valid = diagram_mask.repeat_interleave(k, dim=1)
        eye = torch.eye(m_max * k, dtype=torch.bool, device=video.device)
        self_allowed = (self.self_mask(m_max).to(video.device) & row_valid[:, None, :]) | eye
        cross_allowed = video_mask[:, None, :].expand(bsz, m_max * k, n_max)
        diagram_pos = None
        if cfg.use_diagram_pe:
            p_i = padded_pe(m_len, m_max, d, dtype=f_v.dtype).to(f_v.device)
            diagram_pos = p_i.repeat_interleave(k, dim=1)

        state, query_pos = cq.content, cq.position
        out = DecoderOutput([], row_valid, [int(x) for x in m_len], k)
        for layer in self.layers:
            state, self_w, cross_w = layer(state, query_pos, diagram_pos, f_v, p_v, self_allowed, cross_allowed)
            out.layers.append(self.heads(state))
            if return_attention:
                out.self_attention.append(self_w.detach())
                out.cross_attention.append(cross_w.detach())
        return out
