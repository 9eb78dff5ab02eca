"""Simulated per-tensor adaptive quantization that stays differentiable.

Scale and zero point come from each tensor's own min/max at every forward
pass (dynamic statistics). Low precision is simulated by quantize-then-
dequantize in floating point; the backward pass treats the round-and-clamp
as identity (straight-through) so gradient-based CAMs keep flowing.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import torch
from torch import nn
from torch.nn import functional as F

from .model_zoo import ModelSpec, build_model

# floor for the degenerate x_min == x_max case, so constant tensors never
# divide by zero
SCALE_FLOOR = 1e-8


class PrecisionLevel(Enum):
    """Simulated numeric precision. F32 is the identity (no fake-quant)."""

    F32 = ("f32", None, None)
    INT16 = ("int16", 0, 65535)
    INT8 = ("int8", 0, 255)

    def __init__(self, label: str, q_min: int | None, q_max: int | None):
        self.label = label
        self.q_min = q_min
        self.q_max = q_max

    @property
    def is_identity(self) -> bool:
        return self.q_min is None

    @classmethod
    def from_name(cls, name: str) -> "PrecisionLevel":
        for level in cls:
            if level.label == name.lower():
                return level
        raise ValueError(
            f"unknown precision {name!r}; expected one of "
            f"{', '.join(l.label for l in cls)}"
        )


class TensorStats(NamedTuple):
    x_min: float
    x_max: float


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: float
    level: PrecisionLevel


def observe_minmax(tensor) -> TensorStats:
    """Exact elementwise extrema of one tensor."""
    t = torch.as_tensor(tensor)
    if t.numel() == 0:
        raise ValueError("empty tensor")
    t = t.detach()
    if not torch.isfinite(t).all():
        raise ValueError("non-finite input")
    return TensorStats(x_min=float(t.min()), x_max=float(t.max()))


def compute_qparams(stats: TensorStats, level: PrecisionLevel) -> QuantParams:
    """scale = (x_max - x_min) / (q_max - q_min), zero_point = q_min - x_min/scale.

    The zero point is kept real (never rounded). A degenerate range is floored
    to SCALE_FLOOR; the zero-point formula still applies so a constant tensor
    round-trips exactly.
    """
    if level.is_identity:
        raise ValueError("f32 is the identity level; no quant params exist")
    if stats.x_min > stats.x_max:
        raise ValueError("x_min exceeds x_max")
    scale = (stats.x_max - stats.x_min) / (level.q_max - level.q_min)
    if scale < SCALE_FLOOR:
        scale = SCALE_FLOOR
    zero_point = level.q_min - stats.x_min / scale
    return QuantParams(scale=scale, zero_point=zero_point, level=level)


def _round_half_away(x: torch.Tensor) -> torch.Tensor:
    # torch.round ties to even; the quantization grid rounds ties away from zero
    return torch.sign(x) * torch.floor(torch.abs(x) + 0.5)


def quantize(x, qp: QuantParams) -> torch.Tensor:
    """Map real values onto the integer grid: clamp(round(x/s + z), q_min, q_max)."""
    t = torch.as_tensor(x)
    if not torch.isfinite(t).all():
        raise ValueError("non-finite input")
    q = _round_half_away(t / qp.scale + qp.zero_point)
    q = torch.clamp(q, qp.level.q_min, qp.level.q_max)
    return q.to(torch.int32)


def dequantize(q, qp: QuantParams) -> torch.Tensor:
    """Inverse affine map: (q - z) * s."""
    t = torch.as_tensor(q)
    if t.numel() and (t.min() < qp.level.q_min or t.max() > qp.level.q_max):
        raise ValueError("quantized value out of range")
    return (t.to(torch.float64) - qp.zero_point) * qp.scale


class _FakeQuantSTE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, scale, zero_point, q_min, q_max):
        q = torch.clamp(_round_half_away(x / scale + zero_point), q_min, q_max)
        return (q - zero_point) * scale

    @staticmethod
    def backward(ctx, grad_output):
        # dynamic min/max statistics keep every element inside the observed
        # range, so the straight-through estimator passes gradients unchanged
        return grad_output, None, None, None, None


def fake_quant(x: torch.Tensor, level: PrecisionLevel) -> torch.Tensor:
    """Quantize-dequantize x at the given level with per-tensor dynamic stats.

    F32 returns x untouched. The result is differentiable: backward is the
    identity over the observed range.
    """
    if level.is_identity:
        return x
    qp = compute_qparams(observe_minmax(x), level)
    return _FakeQuantSTE.apply(x, qp.scale, qp.zero_point, level.q_min, level.q_max)


class FakeQuantConv2d(nn.Module):
    """Conv with fake-quantized weight and output activation."""

    def __init__(self, conv: nn.Conv2d, level: PrecisionLevel):
        super().__init__()
        self.conv = conv
        self.level = level

    def forward(self, x):
        w = fake_quant(self.conv.weight, self.level)
        y = self.conv._conv_forward(x, w, self.conv.bias)
        return fake_quant(y, self.level)


class FakeQuantLinear(nn.Module):
    """Linear with fake-quantized weight and output activation."""

    def __init__(self, linear: nn.Linear, level: PrecisionLevel):
        super().__init__()
        self.linear = linear
        self.level = level

    def forward(self, x):
        w = fake_quant(self.linear.weight, self.level)
        y = F.linear(x, w, self.linear.bias)
        return fake_quant(y, self.level)


def _swap_quant_layers(module: nn.Module, level: PrecisionLevel) -> int:
    count = 0
    for name, child in module.named_children():
        if isinstance(child, nn.Conv2d):
            setattr(module, name, FakeQuantConv2d(child, level))
            count += 1
        elif isinstance(child, nn.Linear):
            setattr(module, name, FakeQuantLinear(child, level))
            count += 1
        else:
            count += _swap_quant_layers(child, level)
    return count


class QuantizedModel(nn.Module):
    """A classifier with every conv/linear weight and output routed through
    fake-quant at one precision level.

    Not reentrant: CAM hooks mutate per-forward state, so use one instance
    per worker.
    """

    def __init__(
        self,
        module: nn.Module,
        level: PrecisionLevel,
        target_layer: str,
        name: str = "model",
    ):
        super().__init__()
        self.name = name
        self.level = level
        self.target_layer = target_layer
        self.module = module
        self.num_quant_sites = 0
        if not level.is_identity:
            self.num_quant_sites = _swap_quant_layers(self.module, level)
        self.module.eval()

    def forward(self, x):
        return self.module(x)

    def resolve_target(self) -> nn.Module:
        try:
            return self.module.get_submodule(self.target_layer)
        except AttributeError as exc:
            raise ValueError(f"invalid target layer {self.target_layer!r}") from exc

    @torch.no_grad()
    def predict(self, x) -> int:
        return int(self.forward(x).argmax(dim=1).item())


def wrap_module(
    module: nn.Module,
    level: PrecisionLevel,
    target_layer: str,
    name: str = "model",
    inplace: bool = False,
) -> QuantizedModel:
    """Instrument an arbitrary classifier. F32 yields a pass-through wrapper
    around the original module; other levels operate on a deep copy unless
    inplace is set."""
    if not level.is_identity and not inplace:
        module = copy.deepcopy(module)
    return QuantizedModel(module, level, target_layer, name=name)


def wrap_model(spec: ModelSpec, level: PrecisionLevel) -> QuantizedModel:
    """Build the architecture named by spec and instrument it at the given level."""
    base = build_model(spec)
    return wrap_module(base, level, spec.target_layer, name=spec.name, inplace=True)
