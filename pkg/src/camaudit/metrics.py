"""Alignment metrics between two saliency-style maps.

Three scores are computed per map pair: SIM (histogram intersection of the
sum-1 normalized maps), an epsilon-smoothed KL divergence, and the Pearson
correlation coefficient of the raw maps. All accumulation is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_EPSILON = 1e-7

KLD_WEIGHTINGS = ("cam", "gt")


class DegenerateMapError(ValueError):
    """An all-zero map cannot be normalized into a distribution."""


class ConstantMapError(ValueError):
    """A constant map has zero variance, so correlation is undefined."""


@dataclass
class MetricTriple:
    """Scores for one map pair. cc is None when either map was constant."""

    sim: float
    cc: float | None
    kld: float
    degenerate: bool = False


def _as_grid(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty map")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite values in map")
    return arr


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def _check_normalized(arr: np.ndarray, name: str) -> None:
    if abs(float(arr.sum()) - 1.0) > 1e-6:
        raise ValueError(f"{name} map is not sum-1 normalized")


def to_prob(values) -> np.ndarray:
    """Rescale a nonnegative map so its entries sum to 1.

    Raises DegenerateMapError for an all-zero map; callers that need a
    fallback substitute uniform_like() and flag the record.
    """
    arr = _as_grid(values)
    if np.any(arr < 0):
        raise ValueError("negative values in map")
    total = float(arr.sum())
    if total <= 0.0:
        raise DegenerateMapError("degenerate map")
    return arr / total


def uniform_like(values) -> np.ndarray:
    """Uniform distribution with the shape of the given map."""
    arr = np.asarray(values, dtype=np.float64)
    return np.full(arr.shape, 1.0 / arr.size)


def sim(gt, cam) -> float:
    """Histogram intersection: sum of elementwise minima of two sum-1 maps."""
    gt = _as_grid(gt)
    cam = _as_grid(cam)
    _check_shapes(gt, cam)
    _check_normalized(gt, "gt")
    _check_normalized(cam, "cam")
    return float(np.minimum(gt, cam).sum())


def kld(gt, cam, epsilon: float = DEFAULT_EPSILON, weighting: str = "cam") -> float:
    """Epsilon-smoothed KL divergence between two sum-1 maps.

    weighting="cam" (default) puts the CAM outside the log:
        sum_i cam_i * log(eps + cam_i / (eps + gt_i))
    weighting="gt" is the conventional saliency-benchmark orientation with
    the roles swapped.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if weighting not in KLD_WEIGHTINGS:
        raise ValueError(f"unknown kld weighting {weighting!r}")
    gt = _as_grid(gt)
    cam = _as_grid(cam)
    _check_shapes(gt, cam)
    _check_normalized(gt, "gt")
    _check_normalized(cam, "cam")
    if weighting == "cam":
        outer, inner = cam, gt
    else:
        outer, inner = gt, cam
    return float(np.sum(outer * np.log(epsilon + outer / (epsilon + inner))))


def _effectively_zero_variance(values: np.ndarray, centered: np.ndarray) -> bool:
    # a constant map can pick up one-ulp mean drift from pairwise summation;
    # exact-zero variance would miss it and the correlation then amplifies
    # cancellation noise into an arbitrary value
    magnitude = max(1.0, float(np.abs(values).max()))
    tolerance = (1e-12 * magnitude) ** 2 * values.size
    return float(np.sum(centered * centered)) <= tolerance


def cc(a, b) -> float:
    """Pearson correlation of two flattened grids (scale-invariant)."""
    a = _as_grid(a)
    b = _as_grid(b)
    _check_shapes(a, b)
    da = a - a.mean()
    db = b - b.mean()
    if _effectively_zero_variance(a, da) or _effectively_zero_variance(b, db):
        raise ConstantMapError("constant map")
    return float(np.sum(da * db) / np.sqrt(np.sum(da * da) * np.sum(db * db)))


def metric_triple(
    gt_map,
    cam_map,
    epsilon: float = DEFAULT_EPSILON,
    kld_weighting: str = "cam",
) -> MetricTriple:
    """Score a raw (min-max scale) map pair.

    SIM and KLD run on sum-1 normalizations of the inputs; CC runs on the
    raw maps. An all-zero map is replaced by the uniform distribution for
    SIM/KLD, CC becomes None, and the triple is flagged degenerate so
    aggregation can exclude it rather than silently biasing means.
    """
    gt_map = _as_grid(gt_map)
    cam_map = _as_grid(cam_map)
    _check_shapes(gt_map, cam_map)

    degenerate = False
    try:
        gt_p = to_prob(gt_map)
    except DegenerateMapError:
        gt_p = uniform_like(gt_map)
        degenerate = True
    try:
        cam_p = to_prob(cam_map)
    except DegenerateMapError:
        cam_p = uniform_like(cam_map)
        degenerate = True

    try:
        cc_value = cc(gt_map, cam_map)
    except ConstantMapError:
        cc_value = None
        degenerate = True

    return MetricTriple(
        sim=sim(gt_p, cam_p),
        cc=cc_value,
        kld=kld(gt_p, cam_p, epsilon=epsilon, weighting=kld_weighting),
        degenerate=degenerate,
    )
