"""Composite queries (diagram x learnable query) and self-attention masks."""
from dataclasses import dataclass

import numpy as np
import torch

from .types import ConfigError

MASK_TYPES = ("A", "B", "C", "D")


@dataclass
class CompositeQuerySet:
    """Row ``r = i*K + j`` pairs diagram ``i`` (content) with query ``j`` (position)."""

    content: torch.Tensor  # (..., M*K, D)
    position: torch.Tensor  # (..., M*K, D)
    num_diagrams: int
    num_queries: int

    def index_of(self, r):
        return divmod(r, self.num_queries)

    def row_of(self, i, j):
        return i * self.num_queries + j

    def joint(self):
        """(content, position) concatenated along the feature axis."""
        return torch.cat([self.content, self.position], dim=-1)


def build_composite_queries(diagram_feats, queries):
    """Cartesian pairing of (…, M, D) diagram features with (K, D) query embeddings."""
    if diagram_feats.shape[-1] != queries.shape[-1]:
        raise ConfigError(
            f"width mismatch: diagrams {diagram_feats.shape[-1]} vs queries {queries.shape[-1]}",
            field="hidden_dim",
        )
    m, k = diagram_feats.shape[-2], queries.shape[0]
    content = diagram_feats.repeat_interleave(k, dim=-2)
    lead = diagram_feats.shape[:-2]
    position = queries.repeat(m, 1).expand(*lead, m * k, queries.shape[-1])
    return CompositeQuerySet(content, position, m, k)


def build_mask(m, k, kind):
    """(M*K, M*K) boolean matrix, True where attention is allowed.

    A: everything. B: same diagram. C: same query index. D: B or C.
    """
    if kind not in MASK_TYPES:
        raise ConfigError(f"unknown mask type {kind!r}", field="mask_type")
    if m < 1 or k < 1:
        raise ConfigError("mask needs M, K >= 1", field="mask_type")
    rows = np.arange(m * k)
    diag_idx, query_idx = rows // k, rows % k
    same_diagram = diag_idx[:, None] == diag_idx[None, :]
    same_query = query_idx[:, None] == query_idx[None, :]
    if kind == "A":
        return np.ones((m * k, m * k), dtype=bool)
    if kind == "B":
        return same_diagram
    if kind == "C":
        return same_query
    return same_diagram | same_query
