"""
Perceiver resampling and the coarse-to-fine fusion chain.

Each stage compresses its input into N latents, and the output of one stage
is the latent query of the next: clinical context, then spatiotemporal
features, then hierarchical features.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn as nn

from priorrg.config import RunConfig
from priorrg.errors import UsageError
from priorrg.numerics.layers import INIT_STD, CrossAttention, FeedForward, init_weights

CHAIN_ORDERS = ("coarse2fine", "fine2coarse")

# Segment ids marking the bundle parts in the decoder prefix
CONTEXT_SEGMENT, SPATIOTEMPORAL_SEGMENT, HIERARCHICAL_SEGMENT = 0, 1, 2


class PerceiverBlock(nn.Module):
    """lat = LN(lat + CA(lat, q)); lat = LN(lat + FFN(lat))"""

    def __init__(self, d: int, heads: int, ffn_mult: int = 4):
        super().__init__()
        self.attn = CrossAttention(d, heads)
        self.ln1 = nn.LayerNorm(d)
        self.ffn = FeedForward(d, ffn_mult)
        self.ln2 = nn.LayerNorm(d)

    def forward(self, latents: torch.Tensor, q: torch.Tensor, q_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        latents = self.ln1(latents + self.attn(latents, q, key_padding_mask=q_mask))
        return self.ln2(latents + self.ffn(latents))


class Perceiver(nn.Module):
    def __init__(self, d: int, heads: int, ffn_mult: int = 4, depth: int = 1):
        super().__init__()
        self.blocks = nn.ModuleList(PerceiverBlock(d, heads, ffn_mult) for _ in range(depth))

    def forward(self, p: torch.Tensor, q: torch.Tensor, q_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        for block in self.blocks:
            p = block(p, q, q_mask)
        return p


@dataclass
class LatentBundle:
    t_bar_c: torch.Tensor
    v_bar_st: torch.Tensor
    v_bar_hier: Optional[torch.Tensor] = None
    order: str = "coarse2fine"


class CoarseToFineFusion(nn.Module):
    def __init__(self, config: RunConfig):
        super().__init__()
        d = config.d
        self.latents = nn.Parameter(torch.zeros(config.n_latents, d))
        self.context_perceiver = Perceiver(d, config.heads, config.ffn_mult, config.perceiver_depth)
        self.spatiotemporal_perceiver = Perceiver(d, config.heads, config.ffn_mult, config.perceiver_depth)
        self.hierarchical_perceiver = Perceiver(d, config.heads, config.ffn_mult, config.perceiver_depth)
        self.apply(init_weights)
        nn.init.trunc_normal_(self.latents, std=INIT_STD)

    def forward(self, context: torch.Tensor, context_mask: Optional[torch.Tensor], v_st: torch.Tensor,
                v_hier: Optional[torch.Tensor] = None, stage: int = 1, order: str = "coarse2fine") -> LatentBundle:
        if stage == 1 and v_hier is not None:
            raise UsageError("Stage 1 fusion takes no hierarchical features")
        if stage == 2 and v_hier is None:
            raise UsageError("Stage 2 fusion needs hierarchical features")
        if stage not in (1, 2) or order not in CHAIN_ORDERS:
            raise UsageError(f"Unsupported fusion mode stage={stage}, order={order}")
        if order == "fine2coarse" and stage == 1:
            raise UsageError("fine2coarse ordering only applies to the Stage 2 chain")

        B = context.shape[0]
        t_bar_c = self.context_perceiver(self.latents.expand(B, -1, -1), context, context_mask)
        if order == "coarse2fine":
            v_bar_st = self.spatiotemporal_perceiver(t_bar_c, v_st)
            v_bar_hier = self.hierarchical_perceiver(v_bar_st, v_hier) if stage == 2 else None
        else:
            # hierarchical features enter first, spatiotemporal last
            v_bar_hier = self.spatiotemporal_perceiver(t_bar_c, v_hier)
            v_bar_st = self.hierarchical_perceiver(v_bar_hier, v_st)
        return LatentBundle(t_bar_c=t_bar_c, v_bar_st=v_bar_st, v_bar_hier=v_bar_hier, order=order)


def assemble_prefix(bundle: LatentBundle, variant: str) -> Tuple[torch.Tensor, torch.Tensor]:
    """Concatenate the bundle for the decoder; returns (prefix [B, k*N, d], segment ids [k*N])"""
    if bundle.v_bar_hier is None:
        raise UsageError("Decoder prefix needs a Stage 2 bundle")
    if variant == "full":
        if bundle.order != "coarse2fine":
            raise UsageError("The full prefix is built from the coarse-to-fine chain")
        parts = [(bundle.t_bar_c, CONTEXT_SEGMENT), (bundle.v_bar_st, SPATIOTEMPORAL_SEGMENT),
                 (bundle.v_bar_hier, HIERARCHICAL_SEGMENT)]
    elif variant == "last_only":
        if bundle.order != "coarse2fine":
            raise UsageError("last_only keeps the final stage of the coarse-to-fine chain")
        parts = [(bundle.v_bar_hier, HIERARCHICAL_SEGMENT)]
    elif variant == "fine2coarse":
        if bundle.order != "fine2coarse":
            raise UsageError("fine2coarse prefix needs a bundle computed in fine-to-coarse order")
        # segments follow chain position
        parts = [(bundle.t_bar_c, CONTEXT_SEGMENT), (bundle.v_bar_hier, SPATIOTEMPORAL_SEGMENT),
                 (bundle.v_bar_st, HIERARCHICAL_SEGMENT)]
    else:
        raise UsageError(f"Unknown fusion variant '{variant}'")

    prefix = torch.cat([t for t, _ in parts], dim=1)
    n = bundle.t_bar_c.shape[1]
    segments = torch.cat([torch.full((n,), seg, dtype=torch.long) for _, seg in parts])
    return prefix, segments
