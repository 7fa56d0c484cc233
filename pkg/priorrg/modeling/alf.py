"""
Attention-enhanced layer fusion.

Every encoder hidden state is reshaped to a feature map, reweighted by CBAM
(channel attention, then spatial attention), stacked along channels and
compressed back to d_enc channels by a small Conv2D projector.
"""

import math
from typing import List

import torch
import torch.nn as nn
import torch.nn.functional as F

from priorrg.config import RunConfig
from priorrg.errors import ConfigError, DimensionError
from priorrg.numerics.layers import ProjectionHead, init_weights
from priorrg.numerics.ops import conv2d

SPATIAL_KERNEL = 7


class ChannelAttention(nn.Module):
    """sigmoid(MLP(avgpool(x)) + MLP(maxpool(x))) with a shared two-layer MLP"""

    def __init__(self, channels: int, reduction: int):
        super().__init__()
        if channels % reduction:
            raise ConfigError(f"Reduction ratio {reduction} does not divide {channels} channels")
        self.fc1 = nn.Linear(channels, channels // reduction)
        self.fc2 = nn.Linear(channels // reduction, channels)

    def mlp(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.relu(self.fc1(x)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """[B, c, h, w] (or [c, h, w]) -> weights [B, c] (or [c])"""
        unbatched = x.dim() == 3
        if unbatched:
            x = x.unsqueeze(0)
        weights = torch.sigmoid(self.mlp(x.mean(dim=(2, 3))) + self.mlp(x.amax(dim=(2, 3))))
        return weights.squeeze(0) if unbatched else weights


class SpatialAttention(nn.Module):
    """sigmoid(conv7x7([mean_c(x); max_c(x)])), padding 3"""

    def __init__(self, kernel_size: int = SPATIAL_KERNEL):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """[B, c, h, w] (or [c, h, w]) -> weights [B, h, w] (or [h, w])"""
        unbatched = x.dim() == 3
        if unbatched:
            x = x.unsqueeze(0)
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        weights = torch.sigmoid(conv2d(pooled, self.conv.weight, self.conv.bias, pad=self.conv.padding[0]))[:, 0]
        return weights.squeeze(0) if unbatched else weights


class CBAM(nn.Module):
    def __init__(self, channels: int, reduction: int):
        super().__init__()
        self.channel = ChannelAttention(channels, reduction)
        self.spatial = SpatialAttention()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x * self.channel(x)[:, :, None, None]
        return x * self.spatial(x)[:, None, :, :]


class LayerFusion(nn.Module):
    def __init__(self, config: RunConfig):
        super().__init__()
        n_layers = config.vision_layers if config.use_hidden_states else 1
        c = config.d_enc
        self.cbams = nn.ModuleList(CBAM(c, config.cbam_reduction) for _ in range(n_layers))
        self.compress = nn.Conv2d(n_layers * c, c, kernel_size=1)
        self.mix = nn.Conv2d(c, c, kernel_size=3, padding=1)
        self.head = ProjectionHead(c, config.d)
        self.norm = nn.LayerNorm(config.d)
        self.apply(init_weights)

    def forward(self, layer_states: List[torch.Tensor], temporal_row: torch.Tensor) -> torch.Tensor:
        """L x [B, s, d_enc] -> V_hier [B, s, d]; temporal_row is the current-stream temporal embedding"""
        if len(layer_states) != len(self.cbams):
            raise DimensionError(f"Layer fusion built for {len(self.cbams)} states, got {len(layer_states)}")
        B, s, c = layer_states[0].shape
        side = math.isqrt(s)
        if side * side != s:
            raise ConfigError(f"Layer fusion needs a square patch grid, got s={s}")

        maps = []
        for state, cbam in zip(layer_states, self.cbams):
            grid = state.transpose(1, 2).reshape(B, c, side, side)
            maps.append(cbam(grid))
        fused = conv2d(torch.cat(maps, dim=1), self.compress.weight, self.compress.bias)
        fused = conv2d(F.gelu(fused), self.mix.weight, self.mix.bias, pad=1)
        tokens = fused.flatten(2).transpose(1, 2)  # [B, s, d_enc]
        return self.norm(self.head(tokens) + temporal_row)
