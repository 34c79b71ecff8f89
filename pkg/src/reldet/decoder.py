"""Latent-query relation decoder over detector instance embeddings.

A fixed set of learned latent queries cross-attends to the instance
embeddings; following the resampler attention pattern, the keys and values
are the projected instance embeddings concatenated with the current latents.
Blocks are post-normalized and use ReLU inside the feed-forward.  Each output
relation embedding is projected by two independent FFNs into subject and
object embeddings whose cosine similarity against the instance embeddings
selects the subject/object box indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .detector import DTYPE, Temperature, cosine_similarity_matrix, init_linear


@dataclass(frozen=True)
class DecoderConfig:
    num_queries: int = 100
    layers: int = 3
    heads: int = 8
    width: int = 64
    mlp_ratio: int = 4
    instance_dim: int = 64  # width of the detector tokens fed in
    text_dim: int = 128
    temperature_init: float = 0.07

    def __post_init__(self):
        if self.num_queries < 1:
            raise ValueError("need at least one relation query")
        if self.width % self.heads != 0:
            raise ValueError("width must be divisible by heads")


class CrossAttention(nn.Module):
    """Latents attend to concat(projected instances, latents)."""

    def __init__(self, dim: int, heads: int, gen: torch.Generator):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.q = nn.Linear(dim, dim, dtype=DTYPE)
        self.k = nn.Linear(dim, dim, dtype=DTYPE)
        self.v = nn.Linear(dim, dim, dtype=DTYPE)
        self.proj = nn.Linear(dim, dim, dtype=DTYPE)
        for layer in (self.q, self.k, self.v, self.proj):
            init_linear(layer, gen)

    def forward(self, latents: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        m = latents.shape[0]
        kv = torch.cat([context, latents], dim=0)
        n = kv.shape[0]
        q = self.q(latents).reshape(m, self.heads, self.head_dim).transpose(0, 1)
        k = self.k(kv).reshape(n, self.heads, self.head_dim).transpose(0, 1)
        v = self.v(kv).reshape(n, self.heads, self.head_dim).transpose(0, 1)
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.head_dim), dim=-1)
        out = (attn @ v).transpose(0, 1).reshape(m, -1)
        return self.proj(out)


class DecoderBlock(nn.Module):
    """Post-norm residual block: LN(x + attn), then LN(x + ReLU-FFN)."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int, gen: torch.Generator):
        super().__init__()
        self.attn = CrossAttention(dim, heads, gen)
        self.norm1 = nn.LayerNorm(dim, dtype=DTYPE)
        self.fc1 = nn.Linear(dim, dim * mlp_ratio, dtype=DTYPE)
        self.fc2 = nn.Linear(dim * mlp_ratio, dim, dtype=DTYPE)
        init_linear(self.fc1, gen)
        init_linear(self.fc2, gen)
        self.norm2 = nn.LayerNorm(dim, dtype=DTYPE)

    def forward(self, latents: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        latents = self.norm1(latents + self.attn(latents, context))
        return self.norm2(latents + self.fc2(torch.relu(self.fc1(latents))))


class RoleProjection(nn.Module):
    """Two-layer FFN from relation embeddings into the instance-embedding space."""

    def __init__(self, dim: int, out_dim: int, gen: torch.Generator):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim, dtype=DTYPE)
        self.fc2 = nn.Linear(dim, out_dim, dtype=DTYPE)
        init_linear(self.fc1, gen)
        init_linear(self.fc2, gen)

    def forward(self, r: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.nn.functional.gelu(self.fc1(r)))


@dataclass
class RelationOutput:
    relation_embeddings: torch.Tensor  # (M, D_r)
    subject_logits: torch.Tensor  # (M, N)
    object_logits: torch.Tensor  # (M, N)
    class_logits: torch.Tensor  # (M, K)
    temperature_cls: torch.Tensor
    temperature_index: torch.Tensor


class RelationDecoder(nn.Module):
    def __init__(self, cfg: DecoderConfig, gen: torch.Generator):
        super().__init__()
        self.cfg = cfg
        self.latents = nn.Parameter(
            torch.empty(cfg.num_queries, cfg.width, dtype=DTYPE).normal_(0, 0.02, generator=gen)
        )
        self.input_proj = nn.Linear(cfg.instance_dim, cfg.width, dtype=DTYPE)
        init_linear(self.input_proj, gen)
        self.blocks = nn.ModuleList(
            DecoderBlock(cfg.width, cfg.heads, cfg.mlp_ratio, gen) for _ in range(cfg.layers)
        )
        self.subject_proj = RoleProjection(cfg.width, cfg.instance_dim, gen)
        self.object_proj = RoleProjection(cfg.width, cfg.instance_dim, gen)
        self.rel_head = nn.Linear(cfg.width, cfg.text_dim, dtype=DTYPE)
        init_linear(self.rel_head, gen)
        self.temperature_cls = Temperature(cfg.temperature_init)
        self.temperature_index = Temperature(cfg.temperature_init)

    def decode(self, instance_embeddings: torch.Tensor) -> torch.Tensor:
        """Relation embeddings (M, width) for a set of instance embeddings (N, D).

        The instance tokens enter as an unordered set: no positional encoding
        is added here, so permuting them leaves the output unchanged.
        """
        context = self.input_proj(instance_embeddings)
        x = self.latents
        for block in self.blocks:
            x = block(x, context)
        return x

    def project_roles(self, r: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.subject_proj(r), self.object_proj(r)

    def forward(self, instance_embeddings: torch.Tensor, query_embeddings: torch.Tensor) -> RelationOutput:
        r = self.decode(instance_embeddings)
        sub_emb, obj_emb = self.project_roles(r)
        tau_cls = self.temperature_cls()
        tau_ind = self.temperature_index()
        return RelationOutput(
            relation_embeddings=r,
            subject_logits=cosine_similarity_matrix(sub_emb, instance_embeddings) / tau_ind,
            object_logits=cosine_similarity_matrix(obj_emb, instance_embeddings) / tau_ind,
            class_logits=cosine_similarity_matrix(self.rel_head(r), query_embeddings) / tau_cls,
            temperature_cls=tau_cls,
            temperature_index=tau_ind,
        )


def select_indices(
    relation_output: RelationOutput,
) -> tuple[np.ndarray, np.ndarray]:
    """Argmax subject/object instance index per query; ties break to the lowest index.

    Cosine similarities are scale invariant, so any positive rescaling of the
    instance embeddings or role projections selects the same indices.
    """
    sub = relation_output.subject_logits.detach().cpu().numpy()
    obj = relation_output.object_logits.detach().cpu().numpy()
    if sub.shape[1] < 1:
        raise ValueError("need at least one instance embedding")
    return np.argmax(sub, axis=1), np.argmax(obj, axis=1)
