"""
Stage 1 objective: multi-positive image/report alignment.

Studies sharing the same reference report are all positives for each other,
so the target distribution of a row spreads evenly over its positives.
"""

import math
from typing import Hashable, Sequence, Tuple, Union

import torch
import torch.nn as nn

from priorrg.numerics.ops import l2_normalize, matmul, softmax

LOG_FLOOR = 1e-12
INV_TAU_RANGE = (1.0, 100.0)


class Temperature(nn.Module):
    """Learned inverse temperature, stored as a log and clamped to [1, 100]"""

    def __init__(self, init_inv_tau: float = 14.0):
        super().__init__()
        self.log_inv_tau = nn.Parameter(torch.tensor(math.log(init_inv_tau)))

    @property
    def inv_tau(self) -> torch.Tensor:
        return self.log_inv_tau.exp().clamp(*INV_TAU_RANGE)


def global_pool(t_bar_c: torch.Tensor, v_bar_st: torch.Tensor) -> torch.Tensor:
    """Image-side global feature v_g: mean over the 2N concatenated latents, L2-normalized"""
    return l2_normalize(torch.cat([t_bar_c, v_bar_st], dim=1).mean(dim=1))


def report_global(tokens: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Report-side global feature t_g: masked mean over report positions, L2-normalized"""
    weights = mask.to(tokens.dtype).unsqueeze(-1)
    pooled = (tokens * weights).sum(dim=1) / weights.sum(dim=1).clamp_min(1.0)
    return l2_normalize(pooled)


def similarity_logits(v_g: torch.Tensor, t_g: torch.Tensor,
                      inv_tau: Union[float, torch.Tensor]) -> Tuple[torch.Tensor, torch.Tensor]:
    """Row-wise softmax of the scaled similarities in both directions: (p_i2r, p_r2i)"""
    sims = matmul(v_g, t_g.t()) * inv_tau
    return softmax(sims, axis=-1), softmax(sims.t(), axis=-1)


def match_matrix(reports: Sequence[Hashable]) -> torch.Tensor:
    """q[i, j] = 1(y_i == y_j) / sum_k 1(y_i == y_k)"""
    n = len(reports)
    same = torch.tensor([[float(reports[i] == reports[j]) for j in range(n)] for i in range(n)])
    return same / same.sum(dim=1, keepdim=True)


def alignment_loss(p_i2r: torch.Tensor, p_r2i: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """Cross-entropy of both softmax directions against the soft targets `q`, averaged over the batch"""
    B = q.shape[0]
    i2r = (q * torch.log(p_i2r.clamp_min(LOG_FLOOR))).sum()
    r2i = (q * torch.log(p_r2i.clamp_min(LOG_FLOOR))).sum()
    return -(i2r + r2i) / (2 * B)
