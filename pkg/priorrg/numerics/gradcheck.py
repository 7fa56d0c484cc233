import copy
import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Union

import torch
import torch.nn as nn

from priorrg.errors import UsageError

logger = logging.getLogger(__name__)

MAX_PARAMETERS = 10_000
FD_STEP = 1e-3


@dataclass
class GradientReport:
    tol: float
    relative_errors: Dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.relative_errors.values(), default=0.0)

    @property
    def failures(self) -> List[str]:
        return [name for name, err in self.relative_errors.items() if err > self.tol]

    @property
    def passed(self) -> bool:
        return not self.failures


def _relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    diff = (analytic - numeric).norm().item()
    # Identically-zero gradients (key biases under softmax shift invariance)
    # are measured against an absolute floor.
    scale = max(analytic.norm().item(), numeric.norm().item(), 1e-6)
    return diff / scale


def _as_double(value):
    """Float tensors, also inside dataclass inputs such as a study batch, go to float64"""
    if isinstance(value, torch.Tensor):
        return value.double() if torch.is_floating_point(value) else value
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return dataclasses.replace(value, **{f.name: _as_double(getattr(value, f.name))
                                             for f in dataclasses.fields(value) if f.init})
    return value


def _random_projection_loss(module: nn.Module, inputs: tuple) -> Callable[..., torch.Tensor]:
    """Scalar loss <out, W> with a fixed random W; a plain sum is blind to LN-normalised outputs"""
    with torch.no_grad():
        out = module(*inputs)
    generator = torch.Generator().manual_seed(0)
    weights = torch.randn(out.shape, generator=generator, dtype=out.dtype)
    return lambda m, *xs: (m(*xs) * weights).sum()


def check_gradients(fragment: nn.Module,
                    inputs: Union[torch.Tensor, Sequence[torch.Tensor]],
                    loss_fn: Callable[..., torch.Tensor] = None,
                    tol: float = 1e-3,
                    h: float = FD_STEP) -> GradientReport:
    """
    Compare autograd gradients against central finite differences.

    The fragment is copied to float64 so the difference quotient is not
    swamped by float32 rounding. `loss_fn(module, *inputs)` must return a
    scalar; by default the fragment output is projected on a fixed random tensor.
    """
    n_params = sum(p.numel() for p in fragment.parameters() if p.requires_grad)
    if n_params >= MAX_PARAMETERS:
        raise UsageError(f"check_gradients is meant for fragments under {MAX_PARAMETERS} parameters, got {n_params}")

    module = copy.deepcopy(fragment).double()
    if isinstance(inputs, torch.Tensor):
        inputs = (inputs,)
    inputs = tuple(_as_double(x) for x in inputs)
    if loss_fn is None:
        loss_fn = _random_projection_loss(module, inputs)

    module.zero_grad()
    loss = loss_fn(module, *inputs)
    loss.backward()

    report = GradientReport(tol=tol)
    with torch.no_grad():
        for name, param in module.named_parameters():
            if not param.requires_grad:
                continue
            analytic = param.grad.clone() if param.grad is not None else torch.zeros_like(param)
            numeric = torch.zeros_like(param)
            flat = param.view(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + h
                plus = loss_fn(module, *inputs).item()
                flat[i] = original - h
                minus = loss_fn(module, *inputs).item()
                flat[i] = original
                numeric.view(-1)[i] = (plus - minus) / (2 * h)
            report.relative_errors[name] = _relative_error(analytic, numeric)

    if report.passed:
        logger.info(f"✅ Gradient check passed (max rel. error {report.max_error:.2e})")
    else:
        logger.error(f"❌ Gradient check failed for: {', '.join(report.failures)}")
    return report
