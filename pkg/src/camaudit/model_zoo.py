"""Supported classifier architectures, their CAM target layers, and input preprocessing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
from PIL import Image
from torch import nn
from torchvision import models as tv_models
from torchvision import transforms

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class UnsupportedModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """An architecture plus the layer whose spatial activations feed the CAM.

    builder(pretrained) returns the bare classifier. target_layer is a dotted
    submodule path that must produce a 4D (N, C, H, W) activation grid.
    """

    name: str
    builder: Callable[[bool], nn.Module]
    target_layer: str
    input_size: int = 224
    resize_size: int = 256
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD
    pretrained: bool = True


def _tv_builder(factory, weights_enum):
    def build(pretrained: bool) -> nn.Module:
        if not pretrained:
            return factory(weights=None)
        try:
            return factory(weights=weights_enum)
        except Exception as exc:
            raise RuntimeError(
                f"could not load pretrained weights ({exc}); populate the torch hub "
                "checkpoint cache or pass pretrained=False for a random-init smoke run"
            ) from exc

    return build


# Deepest spatial stage of each architecture, resolved against torchvision's
# module naming.
_REGISTRY: dict[str, tuple[Callable, object, str]] = {
    "vgg16": (tv_models.vgg16, tv_models.VGG16_Weights.DEFAULT, "features.28"),
    "resnet50": (tv_models.resnet50, tv_models.ResNet50_Weights.DEFAULT, "layer4"),
    "densenet121": (tv_models.densenet121, tv_models.DenseNet121_Weights.DEFAULT, "features.norm5"),
    "mobilenet_v2": (tv_models.mobilenet_v2, tv_models.MobileNet_V2_Weights.DEFAULT, "features.17"),
    "squeezenet1_0": (tv_models.squeezenet1_0, tv_models.SqueezeNet1_0_Weights.DEFAULT, "features.12"),
    "efficientnet_b0": (tv_models.efficientnet_b0, tv_models.EfficientNet_B0_Weights.DEFAULT, "features.7"),
}

SUPPORTED_MODELS = tuple(_REGISTRY)


def get_model_spec(name: str, pretrained: bool = True) -> ModelSpec:
    key = name.lower()
    if key not in _REGISTRY:
        raise UnsupportedModelError(
            f"unsupported model {name!r}; supported: {', '.join(SUPPORTED_MODELS)}"
        )
    factory, weights, target = _REGISTRY[key]
    return ModelSpec(
        name=key,
        builder=_tv_builder(factory, weights),
        target_layer=target,
        pretrained=pretrained,
    )


def select_target_layer(spec: ModelSpec, module: nn.Module | None = None):
    """Return the registered target layer name, or the live submodule if a
    model instance is given."""
    if module is None:
        return spec.target_layer
    try:
        return module.get_submodule(spec.target_layer)
    except AttributeError as exc:
        raise UnsupportedModelError(
            f"model has no submodule {spec.target_layer!r}"
        ) from exc


def build_model(spec: ModelSpec) -> nn.Module:
    model = spec.builder(spec.pretrained)
    model.eval()
    # fail early if the registered layer path does not resolve
    model.get_submodule(spec.target_layer)
    return model


def layer_registry() -> dict[str, str]:
    """name -> target layer map, recorded in report provenance."""
    return {name: entry[2] for name, entry in _REGISTRY.items()}


@dataclass
class Preprocessor:
    """Resize / center-crop / normalize pipeline for one architecture."""

    spec: ModelSpec
    _geometric: transforms.Compose = field(init=False, repr=False)
    _normalize: transforms.Compose = field(init=False, repr=False)

    def __post_init__(self):
        self._geometric = transforms.Compose(
            [
                transforms.Resize(self.spec.resize_size),
                transforms.CenterCrop(self.spec.input_size),
            ]
        )
        self._normalize = transforms.Compose(
            [
                transforms.ToTensor(),
                transforms.Normalize(mean=self.spec.mean, std=self.spec.std),
            ]
        )

    def crop(self, image: Image.Image) -> Image.Image:
        return self._geometric(image.convert("RGB"))

    def tensor(self, image: Image.Image) -> torch.Tensor:
        """1x3xHxW normalized float tensor, ready for the classifier."""
        return self._normalize(self.crop(image)).unsqueeze(0)

    def array(self, image: Image.Image) -> np.ndarray:
        """HxWx3 float array in [0,1] of the cropped image, for overlays."""
        return np.asarray(self.crop(image), dtype=np.float64) / 255.0

    def describe(self) -> dict:
        return {
            "resize": self.spec.resize_size,
            "center_crop": self.spec.input_size,
            "mean": list(self.spec.mean),
            "std": list(self.spec.std),
        }


def load_image(path) -> Image.Image:
    with Image.open(path) as img:
        return img.convert("RGB")
