"""Small center-point network: a three-block backbone and five prediction heads."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from ..autodiff import BatchNorm2d, Conv2d, Module, Tensor, ops

OUTPUT_STRIDE = 4
HEATMAP_PRIOR_BIAS = -2.19


@dataclass(frozen=True)
class BackboneConfig:
    channels: tuple[int, int, int] = (16, 32, 64)

    def __post_init__(self):
        if len(self.channels) != 3 or min(self.channels) < 1:
            raise ValueError(f"backbone needs three positive widths, got {self.channels}")


@dataclass(frozen=True)
class HeadConfig:
    num_keypoints: int = 8
    hidden: int = 64

    def __post_init__(self):
        if self.num_keypoints < 2 or self.hidden < 1:
            raise ValueError("need at least two keypoints and a positive head width")


@dataclass
class HeadOutputs:
    center_heatmap: Tensor  # N x 1 x h x w, sigmoid
    offset: Tensor          # N x 2 x h x w
    obb: Tensor             # N x 4 x h x w: log w, log h, sin, cos (feature units)
    keypoints: Tensor       # N x 2K x h x w, offsets from the center in feature units
    kp_heatmap: Tensor      # N x 1 x h x w, sigmoid

    def as_dict(self) -> dict[str, Tensor]:
        return dict(vars(self))


class ConvBlock(Module):
    """(conv3x3 -> BN -> ReLU) twice; the first conv carries the stride."""

    def __init__(self, cin: int, cout: int, stride: int):
        self.conv1 = Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = BatchNorm2d(cout)
        self.conv2 = Conv2d(cout, cout, 3, stride=1, padding=1, bias=False)
        self.bn2 = BatchNorm2d(cout)

    def forward(self, x: Tensor) -> Tensor:
        x = ops.relu(self.bn1(self.conv1(x)))
        return ops.relu(self.bn2(self.conv2(x)))


class Backbone(Module):
    def __init__(self, config: BackboneConfig = BackboneConfig()):
        c1, c2, c3 = config.channels
        self.config = config
        self.blocks = [ConvBlock(3, c1, 1), ConvBlock(c1, c2, 2), ConvBlock(c2, c3, 2)]

    @property
    def low_channels(self) -> int:
        return self.config.channels[0]

    @property
    def high_channels(self) -> int:
        return self.config.channels[2]

    def forward(self, image: Tensor) -> tuple[Tensor, Tensor]:
        """Returns (F_low at stride 1, F_high at stride 4)."""
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"expected N x 3 x H x W images, got {image.shape}")
        h, w = image.shape[2:]
        if h % OUTPUT_STRIDE or w % OUTPUT_STRIDE:
            raise ValueError(f"image size {h}x{w} is not divisible by {OUTPUT_STRIDE}")
        low = self.blocks[0](image)
        high = self.blocks[2](self.blocks[1](low))
        return low, high


class Head(Module):
    def __init__(self, cin: int, hidden: int, cout: int):
        self.conv1 = Conv2d(cin, hidden, 3, stride=1, padding=1)
        self.conv2 = Conv2d(hidden, cout, 1)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv2(ops.relu(self.conv1(x)))


HEAD_NAMES = ("center_heatmap", "offset", "obb", "keypoints", "kp_heatmap")
HEATMAP_HEADS = ("center_heatmap", "kp_heatmap")


class Heads(Module):
    def __init__(self, cin: int, config: HeadConfig = HeadConfig()):
        self.config = config
        sizes = {"center_heatmap": 1, "offset": 2, "obb": 4, "keypoints": 2 * config.num_keypoints, "kp_heatmap": 1}
        for name in HEAD_NAMES:
            setattr(self, name, Head(cin, config.hidden, sizes[name]))

    def forward(self, features: Tensor) -> HeadOutputs:
        out = {}
        for name in HEAD_NAMES:
            y = getattr(self, name)(features)
            out[name] = ops.sigmoid(y) if name in HEATMAP_HEADS else y
        return HeadOutputs(**out)


class CenterNet(Module):
    def __init__(self, backbone: BackboneConfig = BackboneConfig(), heads: HeadConfig = HeadConfig()):
        self.backbone = Backbone(backbone)
        self.heads = Heads(self.backbone.high_channels, heads)

    @property
    def num_keypoints(self) -> int:
        return self.heads.config.num_keypoints

    def forward(self, image: Tensor) -> tuple[HeadOutputs, Tensor, Tensor]:
        """Head outputs plus the (low, high) feature taps."""
        low, high = self.backbone(image)
        return self.heads(high), low, high

    def head_parameters(self) -> list:
        return self.heads.parameters()


def heatmap_bias_parameters(model: CenterNet) -> list:
    return [getattr(model.heads, n).conv2.bias for n in HEATMAP_HEADS]


def feature_size(image_size: Sequence[int]) -> tuple[int, int]:
    h, w = image_size
    return h // OUTPUT_STRIDE, w // OUTPUT_STRIDE
