"""Salient-object ground-truth masks: loaded from grayscale PNGs or produced
on demand by an external detector through a command adapter.

The detector itself is an off-the-shelf oracle, never reimplemented here;
masks stay continuous in [0,1] (no thresholding).
"""

from __future__ import annotations

import shlex
import subprocess
import warnings
from pathlib import Path

import numpy as np
from PIL import Image

from .cam import bilinear_resize


def load_mask(path, target_h: int, target_w: int) -> np.ndarray:
    """Read an 8-bit grayscale mask, scale to [0,1], resize bilinearly.

    Non-grayscale files are converted via luminance with a warning.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mask not found: {path}")
    with Image.open(path) as img:
        if img.mode != "L":
            warnings.warn(f"non-grayscale mask {path.name} converted via luminance")
            img = img.convert("L")
        arr = np.asarray(img, dtype=np.float64) / 255.0
    return np.clip(bilinear_resize(arr, target_h, target_w), 0.0, 1.0)


class MaskGenerator:
    """Adapter around an external salient-object model.

    command is a template run per image, e.g.
        "python detect.py --input {image} --output {mask}"
    It must write an 8-bit grayscale PNG at the {mask} path. Outputs are
    cached under mask_dir using the image id, the same layout load_mask
    reads, so generation is skipped on reruns.
    """

    def __init__(self, command: str | None, mask_dir):
        self.command = command
        self.mask_dir = Path(mask_dir)

    @property
    def available(self) -> bool:
        return bool(self.command)

    def mask_path(self, image_id: str) -> Path:
        return self.mask_dir / f"{image_id}.png"

    def generate(self, image_path, image_id: str) -> Path:
        if not self.available:
            raise RuntimeError("generator not configured")
        out_path = self.mask_path(image_id)
        if out_path.exists():
            return out_path
        self.mask_dir.mkdir(parents=True, exist_ok=True)
        argv = [
            part.format(image=str(image_path), mask=str(out_path))
            for part in shlex.split(self.command)
        ]
        subprocess.run(argv, check=True, capture_output=True)
        if not out_path.exists():
            raise RuntimeError(f"generator produced no mask for {image_id}")
        return out_path


def generate_mask(
    image_path,
    generator: MaskGenerator,
    target_h: int,
    target_w: int,
    image_id: str | None = None,
) -> np.ndarray:
    """Run the external detector for one image and return its mask in [0,1]."""
    image_id = image_id or Path(image_path).stem
    cached = generator.generate(image_path, image_id)
    return load_mask(cached, target_h, target_w)
