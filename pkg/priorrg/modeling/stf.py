from typing import Optional

import torch
import torch.nn as nn

from priorrg.config import RunConfig
from priorrg.errors import DimensionError
from priorrg.numerics.layers import INIT_STD, CrossAttention, FeedForward, init_weights


class TemporalEmbedding(nn.Module):
    """Row 0 marks the current image stream, row 1 the prior"""

    def __init__(self, d: int):
        super().__init__()
        self.table = nn.Parameter(torch.zeros(2, d))
        nn.init.trunc_normal_(self.table, std=INIT_STD)

    @property
    def current(self) -> torch.Tensor:
        return self.table[0]

    @property
    def prior(self) -> torch.Tensor:
        return self.table[1]


class STFBlock(nn.Module):
    """
    V_ca = LN2(V_cur + CA(LN1(V_cur), LN1(V_pri)))
    V    = LN3(V_ca + FFN(V_ca))
    """

    def __init__(self, d: int, heads: int, ffn_mult: int = 4):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.attn = CrossAttention(d, heads)
        self.ln2 = nn.LayerNorm(d)
        self.ffn = FeedForward(d, ffn_mult)
        self.ln3 = nn.LayerNorm(d)

    def forward(self, v_cur: torch.Tensor, v_pri: torch.Tensor) -> torch.Tensor:
        v_ca = self.ln2(v_cur + self.attn(self.ln1(v_cur), self.ln1(v_pri)))
        return self.ln3(v_ca + self.ffn(v_ca))


class SpatiotemporalFusion(nn.Module):
    def __init__(self, config: RunConfig):
        super().__init__()
        self.temporal = TemporalEmbedding(config.d)
        self.blocks = nn.ModuleList(STFBlock(config.d, config.heads, config.ffn_mult) for _ in range(config.stf_blocks))
        for block in self.blocks:
            block.apply(init_weights)

    def forward(self, v_cur: torch.Tensor, v_pri: Optional[torch.Tensor] = None,
                has_prior: Optional[torch.Tensor] = None) -> torch.Tensor:
        """
        Fuse current features with the prior. Without a prior (v_pri None, or
        has_prior False for a row) the current features are returned unchanged.
        """
        if v_pri is None:
            return v_cur
        if v_pri.shape != v_cur.shape:
            raise DimensionError(f"Current {tuple(v_cur.shape)} and prior {tuple(v_pri.shape)} features differ in shape")
        if has_prior is not None and not bool(has_prior.any()):
            return v_cur

        cur = v_cur + self.temporal.current
        pri = v_pri + self.temporal.prior
        for block in self.blocks:
            cur = block(cur, pri)

        if has_prior is None:
            return cur
        return torch.where(has_prior[:, None, None], cur, v_cur)
