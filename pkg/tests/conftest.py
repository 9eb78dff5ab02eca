"""Shared fixtures: a tiny trainable quadrant classifier, synthetic
image/mask corpora, and ModelSpec adapters so harness tests never need
pretrained weights or network access.
"""

from __future__ import annotations

import numpy as np
import pytest
import torch
import torch.nn as nn
from PIL import Image

from camaudit.model_zoo import ModelSpec

QUADRANT_SIZE = 32
QUADRANT_TARGET_LAYER = "features.4"

# One line per release criterion, filled by the acceptance tests and printed
# after the run; direct prints would be swallowed by pytest's fd capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


class QuadrantNet(nn.Module):
    """Two convs, a quadrant-aligned 2x2 pooled head, four classes."""

    def __init__(self):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 8, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(8, 16, 3, padding=1),
            nn.ReLU(),
        )
        self.pool = nn.AdaptiveAvgPool2d(2)
        self.head = nn.Linear(16 * 4, 4)

    def forward(self, x):
        x = self.pool(self.features(x))
        return self.head(x.flatten(1))


def make_quadrant_batch(rng: torch.Generator, n: int, size: int = QUADRANT_SIZE, inset: int = 3):
    """Dark noise images with one bright square inset in quadrant y.

    Quadrant indices: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
    """
    xs = 0.05 * torch.rand(n, 3, size, size, generator=rng)
    ys = torch.randint(0, 4, (n,), generator=rng)
    half = size // 2
    for i, q in enumerate(ys):
        r0 = (int(q) // 2) * half + inset
        c0 = (int(q) % 2) * half + inset
        xs[i, :, r0 : r0 + half - 2 * inset, c0 : c0 + half - 2 * inset] += 0.9
    return xs, ys


def train_quadrant_model(steps: int = 120, lr: float = 5e-3) -> QuadrantNet:
    torch.manual_seed(0)
    rng = torch.Generator().manual_seed(123)
    model = QuadrantNet()
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    loss_fn = nn.CrossEntropyLoss()
    model.train()
    for _ in range(steps):
        xs, ys = make_quadrant_batch(rng, 64)
        opt.zero_grad()
        loss_fn(model(xs), ys).backward()
        opt.step()
    model.eval()
    return model


def quadrant_accuracy(model: QuadrantNet, n: int = 256, seed: int = 999) -> float:
    with torch.no_grad():
        xs, ys = make_quadrant_batch(torch.Generator().manual_seed(seed), n)
        return (model(xs).argmax(dim=1) == ys).float().mean().item()


def quadrant_spec(model: QuadrantNet, name: str = "quadrant") -> ModelSpec:
    """ModelSpec adapter so the harness treats the tiny net like a zoo model."""
    return ModelSpec(
        name=name,
        builder=lambda pretrained: model,
        target_layer=QUADRANT_TARGET_LAYER,
        input_size=QUADRANT_SIZE,
        resize_size=QUADRANT_SIZE,
        mean=(0.0, 0.0, 0.0),
        std=(1.0, 1.0, 1.0),
        pretrained=False,
    )


@pytest.fixture(scope="session")
def trained_quadrant_model() -> QuadrantNet:
    model = train_quadrant_model()
    assert quadrant_accuracy(model) >= 0.99
    return model


@pytest.fixture(scope="session")
def untrained_quadrant_model() -> QuadrantNet:
    torch.manual_seed(7)
    model = QuadrantNet()
    model.eval()
    return model


def write_corpus(root, n_images: int, size: int = QUADRANT_SIZE, seed: int = 11,
                 masks_for: slice = slice(None)):
    """Synthetic corpus: quadrant-style images plus box masks. Returns
    (image_dir, mask_dir, ids). masks_for restricts which images get masks."""
    image_dir = root / "images"
    mask_dir = root / "masks"
    image_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)
    rng = torch.Generator().manual_seed(seed)
    xs, ys = make_quadrant_batch(rng, n_images, size=size)
    ids = []
    half = size // 2
    for i in range(n_images):
        image_id = f"img{i:03d}"
        ids.append(image_id)
        arr = (xs[i].clamp(0, 1).numpy().transpose(1, 2, 0) * 255).astype(np.uint8)
        Image.fromarray(arr).save(image_dir / f"{image_id}.png")
    for i in list(range(n_images))[masks_for]:
        q = int(ys[i])
        mask = np.zeros((size, size), dtype=np.uint8)
        r0, c0 = (q // 2) * half, (q % 2) * half
        mask[r0 : r0 + half, c0 : c0 + half] = 255
        Image.fromarray(mask, mode="L").save(mask_dir / f"img{i:03d}.png")
    return image_dir, mask_dir, ids


@pytest.fixture()
def corpus(tmp_path):
    image_dir, mask_dir, ids = write_corpus(tmp_path, 8)
    return image_dir, mask_dir, ids
