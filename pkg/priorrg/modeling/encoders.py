"""
Vision and text encoders.

The vision encoder is a small pre-LN ViT without a class token; it exposes
every block output because the layer-fusion network consumes all of them.
The view-position embedding is added after the backbone, so hidden states
never depend on the view.
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import torch
import torch.nn as nn

from priorrg.config import RunConfig
from priorrg.corpus.render import VIEWS
from priorrg.corpus.vocab import FINDINGS_ID, INDICATION_ID
from priorrg.errors import ConfigError, DimensionError, UsageError
from priorrg.numerics.layers import INIT_STD, ProjectionHead, SelfAttentionBlock, init_weights

logger = logging.getLogger(__name__)

TEXT_KINDS = {"clinical_context": INDICATION_ID, "report": FINDINGS_ID}


@dataclass
class VisionEncoderOutput:
    layer_states: List[torch.Tensor]  # L x [B, s, d_enc]

    @property
    def final_state(self) -> torch.Tensor:
        return self.layer_states[-1]


@dataclass
class TextFeatures:
    tokens: torch.Tensor  # [B, p, d]
    mask: torch.Tensor  # [B, p], True on real tokens
    kind: str


class VisionEncoder(nn.Module):
    def __init__(self, config: RunConfig):
        super().__init__()
        self.patch_size = config.patch_size
        self.grid = config.image_size // config.patch_size

        self.patch_embed = nn.Linear(config.patch_size * config.patch_size, config.d_enc)
        self.row_embed = nn.Parameter(torch.zeros(self.grid, config.d_enc))
        self.col_embed = nn.Parameter(torch.zeros(self.grid, config.d_enc))
        self.blocks = nn.ModuleList(
            SelfAttentionBlock(config.d_enc, config.heads, config.ffn_mult) for _ in range(config.vision_layers)
        )
        self.view_embed = nn.Embedding(len(VIEWS), config.d_enc)
        self.head = ProjectionHead(config.d_enc, config.d)

        self.apply(init_weights)
        nn.init.trunc_normal_(self.row_embed, std=INIT_STD)
        nn.init.trunc_normal_(self.col_embed, std=INIT_STD)

    def patchify(self, image: torch.Tensor) -> torch.Tensor:
        """[B, 1, H, W] -> [B, s, patch*patch], patches in row-major order"""
        B, C, H, W = image.shape
        p = self.patch_size
        if C != 1 or H % p or W % p or H // p != self.grid or W // p != self.grid:
            raise DimensionError(f"Image of shape {tuple(image.shape)} does not tile into a "
                                 f"{self.grid}x{self.grid} grid of {p}x{p} patches")
        patches = image.reshape(B, H // p, p, W // p, p).permute(0, 1, 3, 2, 4)
        return patches.reshape(B, (H // p) * (W // p), p * p)

    def backbone(self, image: torch.Tensor) -> VisionEncoderOutput:
        pos = (self.row_embed[:, None, :] + self.col_embed[None, :, :]).reshape(self.grid * self.grid, -1)
        x = self.patch_embed(self.patchify(image)) + pos
        states = []
        for block in self.blocks:
            x = block(x)
            states.append(x)
        return VisionEncoderOutput(layer_states=states)

    def forward(self, image: torch.Tensor, view: torch.Tensor) -> Tuple[torch.Tensor, VisionEncoderOutput]:
        """Returns projected features V [B, s, d] and the backbone states"""
        if view.dtype != torch.long or ((view < 0) | (view >= len(VIEWS))).any():
            raise ConfigError(f"View positions must be ids in [0, {len(VIEWS)}), got {view.tolist()}")
        out = self.backbone(image)
        v = self.head(out.final_state + self.view_embed(view)[:, None, :])
        return v, out

    def freeze_backbone(self) -> None:
        """Freeze everything except the view embedding and projection head"""
        for module in (self.patch_embed, self.blocks):
            for p in module.parameters():
                p.requires_grad_(False)
        self.row_embed.requires_grad_(False)
        self.col_embed.requires_grad_(False)


class TextEncoder(nn.Module):
    """Bidirectional transformer over word ids, followed by a projection head"""

    def __init__(self, config: RunConfig, vocab_size: int):
        super().__init__()
        self.max_len = config.max_text_len
        self.token_embed = nn.Embedding(vocab_size, config.d)
        self.pos_embed = nn.Parameter(torch.zeros(config.max_text_len, config.d))
        self.blocks = nn.ModuleList(
            SelfAttentionBlock(config.d, config.heads, config.ffn_mult) for _ in range(config.text_layers)
        )
        self.norm = nn.LayerNorm(config.d)
        self.head = ProjectionHead(config.d, config.d)

        self.apply(init_weights)
        nn.init.trunc_normal_(self.pos_embed, std=INIT_STD)

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        p = ids.shape[1]
        if p > self.max_len:
            raise DimensionError(f"Text of length {p} exceeds max_text_len={self.max_len}")
        x = self.token_embed(ids) + self.pos_embed[:p]
        for block in self.blocks:
            x = block(x, key_padding_mask=mask)
        return self.head(self.norm(x))

    def encode(self, ids: torch.Tensor, mask: torch.Tensor, kind: str) -> TextFeatures:
        if kind not in TEXT_KINDS:
            raise UsageError(f"Unknown text kind '{kind}'")
        if (ids[:, 0] != TEXT_KINDS[kind]).any():
            raise UsageError(f"{kind} sequences must start with their special token")
        return TextFeatures(tokens=self(ids, mask), mask=mask, kind=kind)
