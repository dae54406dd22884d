"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .nn import BatchNorm2d, Module
from .tensor import Tensor, no_grad

Fragment = Callable[[], Tensor]


def numerical_gradient(fn: Fragment, tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. every entry of ``tensor``."""
    if not tensor.data.flags.c_contiguous:
        tensor.data = np.ascontiguousarray(tensor.data)
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)
    flagged: list[str] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return not self.flagged and all(e < self.tolerance for e in self.errors.values())

    def summary(self) -> str:
        lines = [f"{name:<48s} {err:.3e} {'ok' if err < self.tolerance else 'FAIL'}" for name, err in self.errors.items()]
        lines.extend(f"flagged: {msg}" for msg in self.flagged)
        return "\n".join(lines)


def grad_check(
    fn: Fragment,
    tensors: Union[Mapping[str, Tensor], Sequence[Tensor]],
    tolerance: float = 1e-4,
    h: float = 1e-5,
    modules: Optional[Iterable[Module]] = None,
    expected_scale: Optional[Mapping[str, float]] = None,
) -> GradCheckReport:
    """Compare backward() gradients of ``fn`` against central differences.

    ``fn`` must rebuild its graph on every call. Modules passed in are checked
    for train-mode batch norm, whose running statistics drift between
    evaluations; such fragments are flagged rather than measured.

    ``expected_scale`` maps tensor names to the ratio analytic/numeric that
    the graph is designed to produce, e.g. ``-lambda_p`` for parameters that
    sit upstream of a gradient-reversal layer.
    """
    expected_scale = dict(expected_scale or {})
    if not isinstance(tensors, Mapping):
        tensors = {getattr(t, "name", "") or f"tensor{i}": t for i, t in enumerate(tensors)}
    report = GradCheckReport(tolerance=tolerance)

    for module in modules or ():
        for m in module.modules():
            if isinstance(m, BatchNorm2d) and m.training:
                report.flagged.append(f"{type(m).__name__} in training mode: freeze statistics with eval()")
    if report.flagged:
        return report

    with no_grad():
        first = fn().item()
        if fn().item() != first:
            report.flagged.append("fragment is not deterministic between evaluations")
            return report

    for t in tensors.values():
        t.grad = None
    fn().backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for name, t in tensors.items()}
    for name, t in tensors.items():
        numeric = numerical_gradient(fn, t, h=h) * expected_scale.get(name, 1.0)
        report.errors[name] = relative_error(analytic[name], numeric)
    return report
