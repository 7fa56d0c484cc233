import logging
from typing import Optional

import torch
import torch.nn.functional as F

from priorrg.errors import DimensionError, NumericError

logger = logging.getLogger(__name__)

LN_EPS = 1e-5
NORM_EPS = 1e-8


def ensure_finite(x: torch.Tensor, op: str) -> torch.Tensor:
    """Raise NumericError when a forward result holds NaN/Inf"""
    if not torch.isfinite(x).all():
        raise NumericError(f"Non-finite values produced by {op}")
    return x


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Batched matrix product with an explicit inner-extent check"""
    if a.dim() < 2 or b.dim() < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {tuple(a.shape)} by {tuple(b.shape)}")
    return ensure_finite(a @ b, "matmul")


def softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    """Max-subtracted softmax; masked (-inf) entries get probability 0"""
    shifted = x - x.amax(dim=axis, keepdim=True).detach()
    e = torch.exp(shifted)
    return ensure_finite(e / e.sum(dim=axis, keepdim=True), "softmax")


def log_softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    """Max-subtracted log-softmax over finite scores"""
    shifted = x - x.amax(dim=axis, keepdim=True).detach()
    return ensure_finite(shifted - torch.log(torch.exp(shifted).sum(dim=axis, keepdim=True)), "log_softmax")


def layer_norm(x: torch.Tensor, gain: Optional[torch.Tensor] = None, bias: Optional[torch.Tensor] = None,
               eps: float = LN_EPS) -> torch.Tensor:
    """Normalise the last axis to mean 0 / variance 1, then apply the affine"""
    if x.shape[-1] < 1:
        raise DimensionError("layer_norm needs a non-empty last axis")
    return ensure_finite(F.layer_norm(x, (x.shape[-1],), gain, bias, eps), "layer_norm")


def l2_normalize(x: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """Row-wise L2 normalisation, dividing by max(||x||, eps)"""
    norm = x.norm(dim=-1, keepdim=True).clamp_min(eps)
    return ensure_finite(x / norm, "l2_normalize")


def conv_output_extent(size: int, kernel: int, stride: int, pad: int) -> int:
    """Output length of a strided, padded convolution along one axis"""
    return (size + 2 * pad - kernel) // stride + 1


def conv2d(x: torch.Tensor, kernels: torch.Tensor, bias: Optional[torch.Tensor] = None,
           stride: int = 1, pad: int = 0) -> torch.Tensor:
    """Cross-correlation over [c_in, h, w] or [B, c_in, h, w] inputs"""
    unbatched = x.dim() == 3
    if unbatched:
        x = x.unsqueeze(0)
    if x.dim() != 4 or kernels.dim() != 4:
        raise DimensionError(f"conv2d: expected image and 4-d kernels, got {tuple(x.shape)} / {tuple(kernels.shape)}")
    _, c_in, h, w = x.shape
    c_out, k_in, kh, kw = kernels.shape
    if c_in != k_in:
        raise DimensionError(f"conv2d: input has {c_in} channels, kernels expect {k_in}")
    if stride < 1 or conv_output_extent(h, kh, stride, pad) < 1 or conv_output_extent(w, kw, stride, pad) < 1:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} does not fit {h}x{w} with pad={pad}, stride={stride}")
    out = F.conv2d(x, kernels, bias, stride=stride, padding=pad)
    out = ensure_finite(out, "conv2d")
    return out.squeeze(0) if unbatched else out
