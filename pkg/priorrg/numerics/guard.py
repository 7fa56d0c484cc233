import logging
from typing import List, Optional

import torch
import torch.nn as nn

logger = logging.getLogger(__name__)


def _tensors(output) -> List[torch.Tensor]:
    if isinstance(output, torch.Tensor):
        return [output]
    if isinstance(output, (tuple, list)):
        return [t for item in output for t in _tensors(item)]
    if hasattr(output, "__dict__"):
        return [t for item in vars(output).values() for t in _tensors(item)]
    return []


class FiniteGuard:
    """
    Forward-hook watcher recording the first module whose output is non-finite.

    Hooks fire in execution order, and a parent module finishes after its
    children, so the first recorded name is the innermost offending op.
    """

    def __init__(self, model: nn.Module):
        self.model = model
        self.first_offender: Optional[str] = None
        self._handles = []

    def __enter__(self) -> "FiniteGuard":
        for name, module in self.model.named_modules():
            self._handles.append(module.register_forward_hook(self._make_hook(name or "<root>")))
        return self

    def __exit__(self, *exc) -> None:
        for handle in self._handles:
            handle.remove()
        self._handles.clear()

    def _make_hook(self, name: str):
        def hook(module, inputs, output):
            if self.first_offender is not None:
                return
            if any(not torch.isfinite(t).all() for t in _tensors(output)):
                self.first_offender = f"{name} ({type(module).__name__})"
                logger.error(f"❌ Non-finite output first seen in {self.first_offender}")
        return hook
