"""
Building blocks shared by every network in the pipeline.

Initialisation follows the transformer convention: truncated normal (std 0.02)
for projection weights, zero biases, unit LayerNorm gains.
"""

import math
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from priorrg.errors import ConfigError
from priorrg.numerics.ops import matmul, softmax

INIT_STD = 0.02


def init_weights(module: nn.Module) -> None:
    """Apply the projection / bias / LN-gain init to one module (use with .apply)"""
    if isinstance(module, (nn.Linear, nn.Conv2d)):
        nn.init.trunc_normal_(module.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Embedding):
        nn.init.trunc_normal_(module.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


class FeedForward(nn.Module):
    """Two affine layers with GELU, hidden width mult * d"""

    def __init__(self, d: int, mult: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(d, d * mult)
        self.fc2 = nn.Linear(d * mult, d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class CrossAttention(nn.Module):
    """
    Multi-head scaled dot-product attention with learned Q/K/V/output projections.

    `key_padding_mask` is [B, n_kv] with True on valid keys; `attn_mask` is
    [n_q, n_kv] (or [B, n_q, n_kv]) with True where attention is allowed.
    """

    def __init__(self, d: int, heads: int):
        super().__init__()
        if d % heads:
            raise ConfigError(f"Attention width {d} is not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.head_dim = d // heads
        self.scale = 1.0 / math.sqrt(self.head_dim)

        self.q_proj = nn.Linear(d, d)
        self.k_proj = nn.Linear(d, d)
        self.v_proj = nn.Linear(d, d)
        self.o_proj = nn.Linear(d, d)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        B, n, _ = x.shape
        return x.view(B, n, self.heads, self.head_dim).transpose(1, 2)

    def forward(self, q: torch.Tensor, kv: torch.Tensor,
                key_padding_mask: Optional[torch.Tensor] = None,
                attn_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        B, n_q, _ = q.shape
        qry = self._split(self.q_proj(q))
        key = self._split(self.k_proj(kv))
        val = self._split(self.v_proj(kv))

        scores = matmul(qry, key.transpose(-2, -1)) * self.scale  # [B, H, n_q, n_kv]
        if attn_mask is not None:
            allowed = attn_mask if attn_mask.dim() == 2 else attn_mask.unsqueeze(1)
            scores = scores.masked_fill(~allowed, float("-inf"))
        if key_padding_mask is not None:
            scores = scores.masked_fill(~key_padding_mask[:, None, None, :], float("-inf"))

        attn = softmax(scores, axis=-1)
        out = matmul(attn, val).transpose(1, 2).reshape(B, n_q, self.d)
        return self.o_proj(out)


class SelfAttentionBlock(nn.Module):
    """Pre-LN transformer block: x + SA(LN(x)), then x + FFN(LN(x))"""

    def __init__(self, d: int, heads: int, ffn_mult: int = 4):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.attn = CrossAttention(d, heads)
        self.ln2 = nn.LayerNorm(d)
        self.ffn = FeedForward(d, ffn_mult)

    def forward(self, x: torch.Tensor, key_padding_mask: Optional[torch.Tensor] = None,
                attn_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, key_padding_mask=key_padding_mask, attn_mask=attn_mask)
        return x + self.ffn(self.ln2(x))


class ProjectionHead(nn.Module):
    """
    affine -> GELU -> affine to d, then LayerNorm.
    When input and output widths match the input is added back before the norm.
    """

    def __init__(self, d_in: int, d: int):
        super().__init__()
        self.fc1 = nn.Linear(d_in, d)
        self.fc2 = nn.Linear(d, d)
        self.norm = nn.LayerNorm(d)
        self.residual = d_in == d

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.fc2(F.gelu(self.fc1(x)))
        if self.residual:
            h = h + x
        return self.norm(h)
