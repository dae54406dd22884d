"""Weight initialisation, Adam with parameter groups and the multi-step schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..autodiff import BatchNorm2d, Conv2d, Module, Parameter
from ..detector import HEATMAP_PRIOR_BIAS, CenterNet
from ..detector.model import heatmap_bias_parameters

DETECTOR_STD = 0.001


def kaiming_std(weight: np.ndarray, alpha: float = 0.2) -> float:
    fan_in = int(np.prod(weight.shape[1:]))
    gain = math.sqrt(2.0 / (1.0 + alpha * alpha))
    return gain / math.sqrt(fan_in)


def _reset_norms(module: Module) -> None:
    for m in module.modules():
        if isinstance(m, BatchNorm2d):
            m.weight.data[:] = 1.0
            m.bias.data[:] = 0.0
            m.running_mean[:] = 0.0
            m.running_var[:] = 1.0


def init_weights(detector: CenterNet, discriminators: Iterable[Module], rng: np.random.Generator, alpha: float = 0.2) -> None:
    """Detector convs ~ N(0, 0.001^2); discriminator convs Kaiming-normal (fan-in, leaky gain).

    Biases are zero except the two heatmap heads, which start at the 0.1 prior.
    """
    for m in detector.modules():
        if isinstance(m, Conv2d):
            m.weight.data = rng.normal(0.0, DETECTOR_STD, size=m.weight.shape)
            if m.bias is not None:
                m.bias.data = np.zeros(m.bias.shape)
    for b in heatmap_bias_parameters(detector):
        b.data[:] = HEATMAP_PRIOR_BIAS
    _reset_norms(detector)
    for disc in discriminators:
        for m in disc.modules():
            if isinstance(m, Conv2d):
                m.weight.data = rng.normal(0.0, kaiming_std(m.weight.data, alpha), size=m.weight.shape)
                if m.bias is not None:
                    m.bias.data = np.zeros(m.bias.shape)
        _reset_norms(disc)


@dataclass
class ParamGroup:
    name: str
    params: list[Parameter]
    lr: float
    weight_decay: float = 0.0


@dataclass
class Adam:
    """Adam with L2 weight decay folded into the gradient.

    Parameters without a gradient in a step keep their value and moments.
    """

    groups: list[ParamGroup]
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step_count: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for g in self.groups:
            for p in g.params:
                if id(p) in seen:
                    raise ValueError(f"parameter {p.name!r} appears in more than one group")
                seen.add(id(p))

    def all_params(self) -> list[Parameter]:
        return [p for g in self.groups for p in g.params]

    def zero_grad(self) -> None:
        for p in self.all_params():
            p.grad = None

    def set_lrs(self, lrs: dict[str, float]) -> None:
        for g in self.groups:
            if g.name in lrs:
                g.lr = lrs[g.name]

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.betas
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        idx = 0
        for g in self.groups:
            for p in g.params:
                key = idx
                idx += 1
                if p.grad is None:
                    continue
                if p.grad.shape != p.data.shape:
                    raise ValueError(f"gradient shape {p.grad.shape} != parameter shape {p.data.shape} for {p.name!r}")
                grad = p.grad + g.weight_decay * p.data if g.weight_decay else p.grad
                m = self.m.get(key)
                if m is None:
                    m = self.m[key] = np.zeros_like(p.data)
                    self.v[key] = np.zeros_like(p.data)
                v = self.v[key]
                m *= b1
                m += (1.0 - b1) * grad
                v *= b2
                v += (1.0 - b2) * grad * grad
                p.data = p.data - g.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for key in sorted(self.m):
            out[f"adam.m.{key}"] = self.m[key]
            out[f"adam.v.{key}"] = self.v[key]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        self.m = {int(k.split(".")[2]): v.copy() for k, v in arrays.items() if k.startswith("adam.m.")}
        self.v = {int(k.split(".")[2]): v.copy() for k, v in arrays.items() if k.startswith("adam.v.")}
        self.step_count = step_count


def milestone_epochs(fractions: Sequence[float], epochs: int) -> list[int]:
    return [int(round(f * epochs)) for f in fractions]


def multistep_lr(base_lr: float, epoch: int, epochs: int, fractions: Sequence[float], factor: float = 0.5) -> float:
    """Learning rate for 0-based ``epoch``.

    A milestone at M = round(f * epochs) takes effect from epoch M on, so the
    epoch that completes training up to M still runs at the earlier rate.
    """
    passed = sum(1 for m in milestone_epochs(fractions, epochs) if epoch >= m)
    return base_lr * factor**passed
