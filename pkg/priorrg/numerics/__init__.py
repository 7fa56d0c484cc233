"""
Tensor substrate of the pipeline.

torch supplies storage and reverse-mode differentiation; this package pins
down the operations the networks use, their shape contracts, the shared
layers and the finite-difference gradient harness.
"""

from priorrg.numerics.gradcheck import GradientReport, check_gradients
from priorrg.numerics.guard import FiniteGuard
from priorrg.numerics.layers import CrossAttention, FeedForward, ProjectionHead, SelfAttentionBlock, init_weights
from priorrg.numerics.ops import conv2d, ensure_finite, l2_normalize, layer_norm, log_softmax, matmul, softmax

__all__ = [
    "GradientReport",
    "check_gradients",
    "FiniteGuard",
    "CrossAttention",
    "FeedForward",
    "ProjectionHead",
    "SelfAttentionBlock",
    "init_weights",
    "conv2d",
    "ensure_finite",
    "l2_normalize",
    "layer_norm",
    "log_softmax",
    "matmul",
    "softmax",
]
