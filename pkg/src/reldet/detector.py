"""Encoder-only detector: a small ViT whose every output token predicts one instance.

Each image token yields an instance embedding, from which a linear layer
produces the classification embedding (compared against text queries by
cosine similarity over a learnable temperature) and a two-layer FFN produces
box coordinates.  Box coordinates are biased so that a zero-output head
predicts a one-patch box centered on the token's own patch.  The class token
is merged into the feature map multiplicatively and a final layer norm is
applied to the output tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .boxes import Box

DTYPE = torch.float64

TEMPERATURE_MIN = 5e-3
TEMPERATURE_MAX = 1.0


@dataclass(frozen=True)
class DetectorConfig:
    image_size: int = 64
    patch_size: int = 16
    depth: int = 4
    width: int = 64
    heads: int = 4
    mlp_ratio: int = 4
    text_dim: int = 128
    droplayer_rate: float = 0.0
    temperature_init: float = 0.07

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be divisible by patch_size")
        if self.width % self.heads != 0:
            raise ValueError("width must be divisible by heads")
        if not (0.0 <= self.droplayer_rate < 1.0):
            raise ValueError("droplayer_rate must be in [0, 1)")
        if self.temperature_init <= 0:
            raise ValueError("temperature_init must be positive")

    @property
    def grid_side(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_tokens(self) -> int:
        return self.grid_side ** 2


def init_linear(layer: nn.Linear, gen: torch.Generator) -> None:
    """Kaiming-uniform weight / fan-in-uniform bias, drawn from an explicit generator."""
    fan_in = layer.weight.shape[1]
    bound = math.sqrt(1.0 / fan_in)
    with torch.no_grad():
        layer.weight.uniform_(-math.sqrt(3.0) * bound, math.sqrt(3.0) * bound, generator=gen)
        if layer.bias is not None:
            layer.bias.uniform_(-bound, bound, generator=gen)


def cosine_similarity_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Row-wise cosine similarities, (n,d) x (m,d) -> (n,m)."""
    a = a / a.norm(dim=-1, keepdim=True).clamp_min(1e-8)
    b = b / b.norm(dim=-1, keepdim=True).clamp_min(1e-8)
    return a @ b.T


class Temperature(nn.Module):
    """Learnable positive scalar, clamped to [5e-3, 1] at use."""

    def __init__(self, init: float = 0.07):
        super().__init__()
        self.raw = nn.Parameter(torch.tensor(float(init), dtype=DTYPE))

    def forward(self) -> torch.Tensor:
        return self.raw.clamp(TEMPERATURE_MIN, TEMPERATURE_MAX)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int, gen: torch.Generator):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim, dtype=DTYPE)
        self.proj = nn.Linear(dim, dim, dtype=DTYPE)
        init_linear(self.qkv, gen)
        init_linear(self.proj, gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, d = x.shape
        qkv = self.qkv(x).reshape(n, 3, self.heads, self.head_dim).permute(1, 2, 0, 3)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.head_dim), dim=-1)
        out = (attn @ v).transpose(0, 1).reshape(n, d)
        return self.proj(out)


class EncoderBlock(nn.Module):
    """Pre-norm transformer block with GELU MLP."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int, gen: torch.Generator):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, dtype=DTYPE)
        self.attn = SelfAttention(dim, heads, gen)
        self.norm2 = nn.LayerNorm(dim, dtype=DTYPE)
        self.fc1 = nn.Linear(dim, dim * mlp_ratio, dtype=DTYPE)
        self.fc2 = nn.Linear(dim * mlp_ratio, dim, dtype=DTYPE)
        init_linear(self.fc1, gen)
        init_linear(self.fc2, gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(torch.nn.functional.gelu(self.fc1(self.norm2(x))))


class ImageEncoder(nn.Module):
    """Patchify, embed, run pre-norm blocks with droplayer, merge the class token."""

    def __init__(self, cfg: DetectorConfig, gen: torch.Generator):
        super().__init__()
        self.cfg = cfg
        patch_dim = cfg.patch_size * cfg.patch_size * 3
        self.patch_embed = nn.Linear(patch_dim, cfg.width, dtype=DTYPE)
        init_linear(self.patch_embed, gen)
        self.pos_embed = nn.Parameter(
            torch.empty(cfg.num_tokens, cfg.width, dtype=DTYPE).normal_(0, 0.02, generator=gen)
        )
        self.cls_token = nn.Parameter(
            torch.empty(cfg.width, dtype=DTYPE).normal_(0, 0.02, generator=gen)
        )
        self.cls_pos = nn.Parameter(
            torch.empty(cfg.width, dtype=DTYPE).normal_(0, 0.02, generator=gen)
        )
        self.blocks = nn.ModuleList(
            EncoderBlock(cfg.width, cfg.heads, cfg.mlp_ratio, gen) for _ in range(cfg.depth)
        )
        self.norm_out = nn.LayerNorm(cfg.width, dtype=DTYPE)

    def patchify(self, image: torch.Tensor) -> torch.Tensor:
        s, p = self.cfg.image_size, self.cfg.patch_size
        if image.shape != (s, s, 3):
            raise ValueError(f"expected image of shape ({s}, {s}, 3), got {tuple(image.shape)}")
        g = self.cfg.grid_side
        patches = image.reshape(g, p, g, p, 3).permute(0, 2, 1, 3, 4).reshape(g * g, p * p * 3)
        return patches

    def forward(
        self,
        image: torch.Tensor,
        droplayer_rng: torch.Generator | None = None,
        train: bool = False,
        droplayer_rate: float | None = None,
    ) -> torch.Tensor:
        tokens = self.patch_embed(self.patchify(image)) + self.pos_embed
        cls = (self.cls_token + self.cls_pos).unsqueeze(0)
        x = torch.cat([cls, tokens], dim=0)
        rate = self.cfg.droplayer_rate if droplayer_rate is None else droplayer_rate
        for block in self.blocks:
            if train and rate > 0.0:
                keep = (
                    torch.rand((), dtype=DTYPE, generator=droplayer_rng) >= rate
                ).to(DTYPE) / (1.0 - rate)
                x = x + keep * (block(x) - x)
            else:
                x = block(x)
        merged = x[1:] * x[0]
        return self.norm_out(merged)


@dataclass
class DetectorOutput:
    """Per-token instance embeddings, boxes (cxcywh), and query logits."""

    instance_embeddings: torch.Tensor  # (N, D)
    boxes: torch.Tensor  # (N, 4)
    class_logits: torch.Tensor  # (N, K)
    temperature: torch.Tensor  # scalar

    def box_list(self) -> list[Box]:
        return [Box.from_array(b) for b in self.boxes.detach().cpu().numpy()]


class Detector(nn.Module):
    def __init__(self, cfg: DetectorConfig, gen: torch.Generator):
        super().__init__()
        self.cfg = cfg
        self.encoder = ImageEncoder(cfg, gen)
        self.cls_head = nn.Linear(cfg.width, cfg.text_dim, dtype=DTYPE)
        self.box_fc1 = nn.Linear(cfg.width, cfg.width, dtype=DTYPE)
        self.box_fc2 = nn.Linear(cfg.width, 4, dtype=DTYPE)
        for layer in (self.cls_head, self.box_fc1, self.box_fc2):
            init_linear(layer, gen)
        self.temperature = Temperature(cfg.temperature_init)
        g = cfg.grid_side
        centers = (torch.arange(g, dtype=DTYPE) + 0.5) / g
        px = centers.repeat(g)  # token index is row-major: row = i // g, col = i % g
        py = centers.repeat_interleave(g)
        logit = lambda p: torch.log(p / (1.0 - p))
        self.register_buffer("center_bias_x", logit(px))
        self.register_buffer("center_bias_y", logit(py))
        size_bias = logit(torch.tensor(1.0 / g, dtype=DTYPE))
        self.register_buffer("size_bias", size_bias)

    def class_embedding(self, z: torch.Tensor) -> torch.Tensor:
        """Linear map from instance embeddings to the text-embedding space."""
        return self.cls_head(z)

    def predict_boxes(self, z: torch.Tensor) -> torch.Tensor:
        """Boxes for all N tokens at once; rows of `z` are token-ordered."""
        if z.shape[0] != self.cfg.num_tokens:
            raise ValueError(f"expected {self.cfg.num_tokens} token embeddings, got {z.shape[0]}")
        raw = self.box_fc2(torch.nn.functional.gelu(self.box_fc1(z)))
        cx = torch.sigmoid(raw[:, 0] + self.center_bias_x)
        cy = torch.sigmoid(raw[:, 1] + self.center_bias_y)
        w = torch.sigmoid(raw[:, 2] + self.size_bias)
        h = torch.sigmoid(raw[:, 3] + self.size_bias)
        return torch.stack([cx, cy, w, h], dim=1)

    def predict_box(self, z: torch.Tensor, token_index: int) -> Box:
        """Single-token variant of predict_boxes."""
        if not 0 <= token_index < self.cfg.num_tokens:
            raise ValueError(f"token index {token_index} out of range")
        raw = self.box_fc2(torch.nn.functional.gelu(self.box_fc1(z)))
        cx = torch.sigmoid(raw[0] + self.center_bias_x[token_index])
        cy = torch.sigmoid(raw[1] + self.center_bias_y[token_index])
        w = torch.sigmoid(raw[2] + self.size_bias)
        h = torch.sigmoid(raw[3] + self.size_bias)
        return Box(float(cx), float(cy), float(w), float(h))

    def forward(
        self,
        image: torch.Tensor | np.ndarray,
        query_embeddings: torch.Tensor,
        droplayer_rng: torch.Generator | None = None,
        train: bool = False,
        droplayer_rate: float | None = None,
    ) -> DetectorOutput:
        """Detect against a set of text queries; no background column is added."""
        if query_embeddings.ndim != 2 or query_embeddings.shape[0] < 1:
            raise ValueError("need at least one text query")
        if isinstance(image, np.ndarray):
            image = torch.from_numpy(image).to(DTYPE)
        z = self.encoder(image, droplayer_rng=droplayer_rng, train=train, droplayer_rate=droplayer_rate)
        tau = self.temperature()
        logits = cosine_similarity_matrix(self.class_embedding(z), query_embeddings) / tau
        return DetectorOutput(
            instance_embeddings=z,
            boxes=self.predict_boxes(z),
            class_logits=logits,
            temperature=tau,
        )


def queries_to_tensor(embeddings) -> torch.Tensor:
    """Stack unit-norm numpy query embeddings into a (K, D_t) tensor."""
    return torch.from_numpy(np.stack(embeddings)).to(DTYPE)
