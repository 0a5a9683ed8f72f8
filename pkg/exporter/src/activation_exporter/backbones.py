"""Backbone registry: constructors, default tap points, preprocessing.

Default taps are the outputs of the last three stages of each backbone
(before any global pooling). The classic CIFAR DenseNet-100 has no
torchvision equivalent, so densenet121 stands in with its last three
block outputs; tap names are explicit here so alternatives are one flag
away.
"""

from __future__ import annotations

from dataclasses import dataclass

from torchvision import models


@dataclass(frozen=True)
class BackboneInfo:
    name: str
    factory: callable
    default_taps: tuple[str, ...]
    input_size: int
    normalize_mean: tuple[float, float, float]
    normalize_std: tuple[float, float, float]


CIFAR_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR_STD = (0.2470, 0.2435, 0.2616)
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

REGISTRY: dict[str, BackboneInfo] = {
    "resnet18": BackboneInfo(
        name="resnet18",
        factory=models.resnet18,
        default_taps=("layer2", "layer3", "layer4"),
        input_size=32,
        normalize_mean=CIFAR_MEAN,
        normalize_std=CIFAR_STD,
    ),
    "resnet50": BackboneInfo(
        name="resnet50",
        factory=models.resnet50,
        default_taps=("layer2", "layer3", "layer4"),
        input_size=224,
        normalize_mean=IMAGENET_MEAN,
        normalize_std=IMAGENET_STD,
    ),
    "densenet121": BackboneInfo(
        name="densenet121",
        factory=models.densenet121,
        default_taps=("features.denseblock2", "features.denseblock3", "features.norm5"),
        input_size=32,
        normalize_mean=CIFAR_MEAN,
        normalize_std=CIFAR_STD,
    ),
    "regnet_y_400mf": BackboneInfo(
        name="regnet_y_400mf",
        factory=models.regnet_y_400mf,
        default_taps=("trunk_output.block2", "trunk_output.block3", "trunk_output.block4"),
        input_size=224,
        normalize_mean=IMAGENET_MEAN,
        normalize_std=IMAGENET_STD,
    ),
}
