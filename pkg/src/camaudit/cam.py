"""Grad-CAM++ heatmaps from a (possibly fake-quantized) classifier.

The channel weights are the spatially-summed product of pixel-wise
coefficients alpha and the rectified first-order gradients of the class
score at the target layer, with alpha built from powers of those same
gradients:

    alpha = g^2 / (2 g^2 + sum_spatial(A) * g^3)

The weighted activation sum is rectified, min-max normalized, and
bilinearly upsampled to image resolution. CAM math runs in float64.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .quantsim import QuantizedModel


@dataclass
class Heatmap:
    """2D activation map in [0,1]; max is 1 unless the map is all zero."""

    values: np.ndarray
    class_index: int | None = None
    zero_gradient: bool = False

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def normalize_heatmap(raw) -> Heatmap:
    """Min-max rescale to [0,1]; a constant map collapses to all zeros."""
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("heatmap must be 2D")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite values in heatmap")
    lo = float(arr.min())
    hi = float(arr.max())
    if hi - lo == 0.0:
        return Heatmap(values=np.zeros_like(arr))
    return Heatmap(values=(arr - lo) / (hi - lo))


def bilinear_resize(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear interpolation with half-pixel centers and edge clamping."""
    if out_h <= 0 or out_w <= 0:
        raise ValueError("target dims must be positive")
    arr = np.asarray(values, dtype=np.float64)
    in_h, in_w = arr.shape
    if (in_h, in_w) == (out_h, out_w):
        return arr.copy()

    src_y = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    src_x = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.floor(src_y)
    x0 = np.floor(src_x)
    wy = (src_y - y0)[:, None]
    wx = (src_x - x0)[None, :]
    y0 = y0.astype(int)
    x0 = x0.astype(int)
    y0c = np.clip(y0, 0, in_h - 1)
    y1c = np.clip(y0 + 1, 0, in_h - 1)
    x0c = np.clip(x0, 0, in_w - 1)
    x1c = np.clip(x0 + 1, 0, in_w - 1)

    top = arr[y0c[:, None], x0c[None, :]] * (1 - wx) + arr[y0c[:, None], x1c[None, :]] * wx
    bot = arr[y1c[:, None], x0c[None, :]] * (1 - wx) + arr[y1c[:, None], x1c[None, :]] * wx
    return top * (1 - wy) + bot * wy


def upsample(heatmap: Heatmap, target_h: int, target_w: int) -> Heatmap:
    values = np.clip(bilinear_resize(heatmap.values, target_h, target_w), 0.0, 1.0)
    return Heatmap(
        values=values,
        class_index=heatmap.class_index,
        zero_gradient=heatmap.zero_gradient,
    )


def compute_gradcampp(
    model: QuantizedModel,
    image: torch.Tensor,
    class_index: int | None = None,
) -> Heatmap:
    """Grad-CAM++ map for one preprocessed image, at image resolution.

    Without an explicit class_index the model's own argmax for this image is
    explained. A zero gradient field yields the all-zero heatmap with the
    zero_gradient flag set.
    """
    target = model.resolve_target()
    captured: dict[str, torch.Tensor] = {}

    def hook(_module, _inputs, output):
        captured["acts"] = output

    handle = target.register_forward_hook(hook)
    try:
        logits = model(image)
    finally:
        handle.remove()

    acts = captured.get("acts")
    if acts is None or acts.dim() != 4:
        raise ValueError(f"invalid target layer {model.target_layer!r}")
    if class_index is None:
        class_index = int(logits.argmax(dim=1).item())

    score = logits[0, class_index]
    grads = torch.autograd.grad(score, acts, retain_graph=False)[0]

    a = acts.detach()[0].double().numpy()
    g = grads.detach()[0].double().numpy()

    if g.max() == 0.0 and g.min() == 0.0:
        return Heatmap(
            values=np.zeros((image.shape[2], image.shape[3])),
            class_index=class_index,
            zero_gradient=True,
        )

    g2 = g * g
    g3 = g2 * g
    sum_a = a.sum(axis=(1, 2), keepdims=True)
    denom = 2.0 * g2 + sum_a * g3
    alpha = np.divide(g2, denom, out=np.zeros_like(g2), where=denom != 0.0)
    weights = (alpha * np.maximum(g, 0.0)).sum(axis=(1, 2))
    raw = np.maximum(np.tensordot(weights, a, axes=1), 0.0)

    heatmap = normalize_heatmap(raw)
    heatmap.class_index = class_index
    return upsample(heatmap, image.shape[2], image.shape[3])


# --- persistence: float32 binary grid + JSON sidecar, the harness cache format ---


def sidecar_path(bin_path) -> Path:
    return Path(bin_path).with_suffix(".json")


def save_heatmap(
    heatmap: Heatmap,
    bin_path,
    model: str,
    precision: str,
    image_id: str,
) -> None:
    """Atomically write the grid (.bin, float32 row-major) and its sidecar."""
    bin_path = Path(bin_path)
    data = heatmap.values.astype(np.float32).tobytes(order="C")
    meta = {
        "model": model,
        "precision": precision,
        "image_id": image_id,
        "class_index": heatmap.class_index,
        "height": heatmap.height,
        "width": heatmap.width,
        "zero_gradient": heatmap.zero_gradient,
    }
    # pid-unique temp names so concurrent runs sharing a cache dir cannot
    # truncate each other mid-write; os.replace keeps the swap atomic
    tmp_bin = bin_path.with_suffix(f".bin.{os.getpid()}.tmp")
    tmp_json = bin_path.with_suffix(f".json.{os.getpid()}.tmp")
    tmp_bin.write_bytes(data)
    tmp_json.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    os.replace(tmp_bin, bin_path)
    os.replace(tmp_json, sidecar_path(bin_path))


def load_heatmap(bin_path) -> tuple[Heatmap, dict]:
    bin_path = Path(bin_path)
    meta = json.loads(sidecar_path(bin_path).read_text())
    flat = np.frombuffer(bin_path.read_bytes(), dtype=np.float32)
    values = flat.reshape(meta["height"], meta["width"]).astype(np.float64)
    heatmap = Heatmap(
        values=values,
        class_index=meta.get("class_index"),
        zero_gradient=bool(meta.get("zero_gradient", False)),
    )
    return heatmap, meta
