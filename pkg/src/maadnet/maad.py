"""Attention-based adversarial discriminators, gradient reversal and MMD.

Two discriminator branches are attached to the feature extractor: a patch
classifier with 4x4 kernels on the high-level tap, trained with binary
cross-entropy, and a per-pixel 1x1 classifier on the low-level tap, trained
with a least-squares loss. Each branch is attention -> gradient reversal ->
classifier, so one minimisation of the summed objective trains the
discriminators to separate the domains and the feature extractor to confuse
them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from .autodiff import BatchNorm2d, Conv2d, Module, Tensor, ops

BCE_EPS = 1e-7


# -- gradient reversal ------------------------------------------------------------

@dataclass
class GrlConfig:
    lambda_p: float = 1.0
    schedule: Literal["constant", "dann_ramp"] = "constant"
    gamma: float = 10.0

    def __post_init__(self):
        if self.lambda_p < 0:
            raise ValueError(f"lambda_p must be >= 0, got {self.lambda_p}")
        if self.schedule not in ("constant", "dann_ramp"):
            raise ValueError(f"unknown GRL schedule {self.schedule!r}")

    def value(self, progress: float) -> float:
        """Reversal strength at training progress ``progress`` in [0, 1]."""
        if self.schedule == "constant":
            return self.lambda_p
        p = min(max(progress, 0.0), 1.0)
        return self.lambda_p * (2.0 / (1.0 + math.exp(-self.gamma * p)) - 1.0)


def grl(x: Tensor, lambda_p: float) -> Tensor:
    return ops.grad_reverse(x, lambda_p)


# -- spatial attention -----------------------------------------------------------

class SpatialAttention(Module):
    """sigmoid(conv7x7([mean_c F; max_c F])) applied to F by a Hadamard product."""

    def __init__(self):
        self.conv = Conv2d(2, 1, 7, stride=1, padding=3)

    def attention_map(self, features: Tensor) -> Tensor:
        return ops.sigmoid(self.conv(ops.channel_pool(features)))

    def forward(self, features: Tensor) -> tuple[Tensor, Tensor]:
        m = self.attention_map(features)
        return m, features * m


def spatial_attention(features: Tensor, module: SpatialAttention) -> tuple[Tensor, Tensor]:
    return module(features)


# -- domain classifiers ------------------------------------------------------------

@dataclass
class DomainClassifierConfig:
    level: Literal["high", "low"] = "high"
    layer_filters: Sequence[int] = (128, 256, 512, 1)
    kernel: int = 4
    strides: Sequence[int] = (2, 2, 1, 1)
    paddings: Sequence[int] = (1, 1, 2, 1)
    leaky_relu_alpha: float = 0.2
    batch_norm_after: Sequence[int] = (2, 3)

    def __post_init__(self):
        self.layer_filters = tuple(int(f) for f in self.layer_filters)
        self.strides = tuple(int(s) for s in self.strides)
        self.paddings = tuple(int(p) for p in self.paddings)
        self.batch_norm_after = tuple(int(b) for b in self.batch_norm_after)
        n = len(self.layer_filters)
        if self.layer_filters[-1] != 1:
            raise ValueError("the last classifier layer must have exactly one filter")
        if len(self.strides) != n or len(self.paddings) != n:
            raise ValueError("strides and paddings need one entry per layer")
        if any(not 1 <= b < n for b in self.batch_norm_after):
            raise ValueError("batch norm can only follow a hidden layer")

    @classmethod
    def high(cls, layer_filters: Sequence[int] = (128, 256, 512, 1)) -> "DomainClassifierConfig":
        return cls(level="high", layer_filters=layer_filters, kernel=4, strides=(2, 2, 1, 1), paddings=(1, 1, 2, 1))

    @classmethod
    def low(cls, layer_filters: Sequence[int] = (128, 256, 512, 1)) -> "DomainClassifierConfig":
        n = len(layer_filters)
        return cls(level="low", layer_filters=layer_filters, kernel=1, strides=(1,) * n, paddings=(0,) * n)

    def output_size(self, size: int) -> int:
        for s, p in zip(self.strides, self.paddings):
            size = (size + 2 * p - self.kernel) // s + 1
        return size


class DomainClassifier(Module):
    """Fully convolutional domain classifier producing raw per-cell logits."""

    def __init__(self, in_channels: int, config: DomainClassifierConfig):
        self.config = config
        self.convs = []
        self.norms = []
        c = in_channels
        for i, (f, s, p) in enumerate(zip(config.layer_filters, config.strides, config.paddings), start=1):
            self.convs.append(Conv2d(c, f, config.kernel, stride=s, padding=p))
            if i in config.batch_norm_after:
                self.norms.append(BatchNorm2d(f))
            c = f
        self._norm_index = {layer: k for k, layer in enumerate(sorted(config.batch_norm_after))}

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.config
        h, w = x.shape[2:]
        if cfg.level == "high" and min(h, w) < cfg.kernel:
            raise ValueError(f"high-level classifier needs spatial size >= {cfg.kernel}, got {h}x{w}")
        last = len(self.convs)
        for i, conv in enumerate(self.convs, start=1):
            x = conv(x)
            if i == last:
                break
            if i in self._norm_index:
                x = self.norms[self._norm_index[i]](x)
            x = ops.leaky_relu(x, cfg.leaky_relu_alpha)
        return x


def haad_forward(features: Tensor, classifier: DomainClassifier) -> Tensor:
    if classifier.config.level != "high":
        raise ValueError("haad_forward needs a high-level classifier")
    return classifier(features)


def laad_forward(features: Tensor, classifier: DomainClassifier) -> Tensor:
    if classifier.config.level != "low":
        raise ValueError("laad_forward needs a low-level classifier")
    return classifier(features)


class AdversarialBranch(Module):
    """attention (optional) -> gradient reversal (optional) -> domain classifier."""

    def __init__(self, in_channels: int, config: DomainClassifierConfig, use_attention: bool = True):
        self.attention = SpatialAttention() if use_attention else None
        self.classifier = DomainClassifier(in_channels, config)

    def forward(self, features: Tensor, lambda_p: float = 1.0, reverse: bool = True) -> Tensor:
        if self.attention is not None:
            _, features = self.attention(features)
        if reverse:
            features = grl(features, lambda_p)
        return self.classifier(features)


# -- discriminator losses ----------------------------------------------------------

def _domain_column(d, n: int) -> Tensor:
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    if d.size != n:
        raise ValueError(f"need one domain label per image: {d.size} labels for {n} images")
    return Tensor(d.reshape(n, 1, 1, 1))


def bce_discriminator_loss(logits: Tensor, d) -> Tensor:
    """Binary cross-entropy of sigmoid(logits) vs. per-image labels, mean over images and cells."""
    dd = _domain_column(d, logits.shape[0])
    p = ops.clamp(ops.sigmoid(logits), BCE_EPS, 1.0 - BCE_EPS)
    ll = dd * ops.log(p) + (1.0 - dd) * ops.log(1.0 - p)
    return -ll.mean()


def lsq_discriminator_loss(logits: Tensor, d) -> Tensor:
    """Least-squares domain loss d(p-1)^2 + (1-d)p^2, mean over images and cells."""
    dd = _domain_column(d, logits.shape[0])
    p = ops.sigmoid(logits)
    return (dd * (p - 1.0) ** 2 + (1.0 - dd) * p**2).mean()


def domain_accuracy(logits: np.ndarray, d) -> float:
    """Fraction of images whose mean cell probability falls on the correct side of 0.5."""
    logits = np.asarray(logits)
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    p = 1.0 / (1.0 + np.exp(-logits.reshape(logits.shape[0], -1)))
    pred = p.mean(axis=1) > 0.5
    return float(np.mean(pred == (d > 0.5)))


# -- objective ------------------------------------------------------------------

@dataclass
class MaadObjectiveConfig:
    lambda_had: float = 0.001
    lambda_lad: float = 0.0001
    enable_had: bool = True
    enable_lad: bool = True
    enable_grl: bool = True
    enable_attention: bool = True
    grl: GrlConfig = field(default_factory=GrlConfig)

    def __post_init__(self):
        if isinstance(self.grl, dict):
            self.grl = GrlConfig(**self.grl)
        if self.lambda_had < 0 or self.lambda_lad < 0:
            raise ValueError("adversarial loss weights must be non-negative")


def maad_objective(l_det: Tensor, l_haad: Optional[Tensor], l_laad: Optional[Tensor], cfg: MaadObjectiveConfig) -> Tensor:
    """L_det + lambda_had * L_haad + lambda_lad * L_laad, skipping disabled terms entirely."""
    if cfg.lambda_had < 0 or cfg.lambda_lad < 0:
        raise ValueError("adversarial loss weights must be non-negative")
    total = l_det
    if cfg.enable_had and l_haad is not None:
        total = total + cfg.lambda_had * l_haad
    if cfg.enable_lad and l_laad is not None:
        total = total + cfg.lambda_lad * l_laad
    return total


# -- maximum mean discrepancy -----------------------------------------------------

MMD_WEIGHT = 0.001


def median_bandwidth(source: np.ndarray, target: np.ndarray) -> float:
    """Median pairwise Euclidean distance over the pooled samples (fallback 1.0)."""
    z = np.concatenate([np.asarray(source), np.asarray(target)], axis=0)
    sq = np.sum(z * z, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * z @ z.T, 0.0)
    iu = np.triu_indices(len(z), k=1)
    if iu[0].size == 0:
        return 1.0
    med = float(np.sqrt(np.median(d2[iu])))
    return med if med > 0 else 1.0


def _pairwise_sq_dists(a: Tensor, b: Tensor) -> Tensor:
    aa = (a * a).sum(axis=1, keepdims=True)
    bb = (b * b).sum(axis=1, keepdims=True).reshape(1, b.shape[0])
    return aa + bb - 2.0 * (a @ ops.transpose(b, (1, 0)))


def mmd_rbf(source: Tensor, target: Tensor, bandwidth: Optional[float] = None) -> Tensor:
    """Biased (V-statistic) squared MMD with k(x, y) = exp(-|x-y|^2 / (2 sigma^2)).

    ``bandwidth`` defaults to the median pairwise distance of the pooled batch.
    """
    if source.ndim != 2 or target.ndim != 2:
        raise ValueError("mmd_rbf expects N x D feature matrices")
    if source.shape[0] == 0 or target.shape[0] == 0:
        raise ValueError("mmd_rbf needs at least one sample per domain")
    if source.shape[1] != target.shape[1]:
        raise ValueError(f"feature dims differ: {source.shape[1]} vs {target.shape[1]}")
    sigma = median_bandwidth(source.data, target.data) if bandwidth is None else float(bandwidth)
    if sigma <= 0:
        raise ValueError("bandwidth must be positive")
    scale = -1.0 / (2.0 * sigma * sigma)

    def kernel_mean(a, b):
        return ops.exp(_pairwise_sq_dists(a, b) * scale).mean()

    return kernel_mean(source, source) + kernel_mean(target, target) - 2.0 * kernel_mean(source, target)


def global_average_pool(features: Tensor) -> Tensor:
    return features.mean(axis=(2, 3))
