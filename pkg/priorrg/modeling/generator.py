"""
Prefix-conditioned report decoder.

Decoder-only transformer reading [prefix ; [BOS] generated...] under a
prefix-LM mask: prefix positions see each other, generated positions see the
whole prefix and earlier generated positions. Output logits share the token
embedding matrix.
"""

import torch
import torch.nn as nn

from priorrg.config import RunConfig
from priorrg.corpus.vocab import BOS_ID, PAD_ID
from priorrg.errors import DimensionError, UsageError
from priorrg.numerics.layers import INIT_STD, SelfAttentionBlock, init_weights
from priorrg.numerics.ops import log_softmax, matmul

N_SEGMENTS = 3


def prefix_lm_mask(m: int, n: int) -> torch.Tensor:
    """[m+n, m+n] bool, True where attention is allowed"""
    total = m + n
    causal = torch.ones(total, total, dtype=torch.bool).tril()
    causal[:, :m] = True
    causal[:m, m:] = False
    return causal


class ReportDecoder(nn.Module):
    def __init__(self, config: RunConfig, vocab_size: int):
        super().__init__()
        self.max_new_tokens = config.max_new_tokens
        self.token_embed = nn.Embedding(vocab_size, config.d)
        self.pos_embed = nn.Parameter(torch.zeros(config.max_new_tokens + 1, config.d))
        self.segment_embed = nn.Embedding(N_SEGMENTS, config.d)
        self.blocks = nn.ModuleList(
            SelfAttentionBlock(config.d, config.heads, config.ffn_mult) for _ in range(config.decoder_layers)
        )
        self.norm = nn.LayerNorm(config.d)
        self.out_bias = nn.Parameter(torch.zeros(vocab_size))

        self.apply(init_weights)
        nn.init.trunc_normal_(self.pos_embed, std=INIT_STD)

    @property
    def vocab_size(self) -> int:
        return self.token_embed.num_embeddings

    def forward(self, prefix: torch.Tensor, segments: torch.Tensor, input_ids: torch.Tensor) -> torch.Tensor:
        """Logits [B, n, V] for every input position"""
        B, m, d = prefix.shape
        n = input_ids.shape[1]
        if n > self.max_new_tokens + 1:
            raise UsageError(f"Decoder input of {n} positions exceeds K+1={self.max_new_tokens + 1}")
        if segments.shape != (m,):
            raise DimensionError(f"Expected {m} segment ids, got {tuple(segments.shape)}")

        x = torch.cat([
            prefix + self.segment_embed(segments),
            self.token_embed(input_ids) + self.pos_embed[:n],
        ], dim=1)
        mask = prefix_lm_mask(m, n)
        for block in self.blocks:
            x = block(x, attn_mask=mask)
        h = self.norm(x[:, m:])
        return matmul(h, self.token_embed.weight.t()) + self.out_bias

    def decode_step(self, prefix: torch.Tensor, segments: torch.Tensor, generated_ids: torch.Tensor) -> torch.Tensor:
        """Next-token logits [B, V] after [BOS] + generated_ids"""
        if generated_ids.shape[1] > self.max_new_tokens:
            raise UsageError(f"Generated length {generated_ids.shape[1]} exceeds K={self.max_new_tokens}")
        bos = torch.full((prefix.shape[0], 1), BOS_ID, dtype=torch.long)
        return self(prefix, segments, torch.cat([bos, generated_ids.long()], dim=1))[:, -1]

    def generation_loss(self, prefix: torch.Tensor, segments: torch.Tensor, reference_ids: torch.Tensor) -> torch.Tensor:
        """Teacher-forced mean NLL per reference token; [PAD] targets excluded"""
        inputs, targets = reference_ids[:, :-1], reference_ids[:, 1:]
        logp = log_softmax(self(prefix, segments, inputs), axis=-1)
        picked = logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
        valid = targets != PAD_ID
        return -(picked * valid).sum() / valid.sum().clamp_min(1)
