"""camaudit: measures how numeric quantization shifts CNN Grad-CAM++
attention, scored against salient-object masks and the full-precision CAM.
"""

__version__ = "0.1.0"

from .cam import Heatmap, bilinear_resize, compute_gradcampp, load_heatmap, save_heatmap
from .config import AuditConfig, ConfigError
from .harness import (
    AuditReport,
    CamCache,
    aggregate,
    emit_overlays,
    emit_report,
    load_dataset,
    run_audit,
    run_matrix,
)
from .metrics import MetricTriple, cc, kld, metric_triple, sim
from .model_zoo import SUPPORTED_MODELS, get_model_spec, layer_registry
from .quantsim import PrecisionLevel, QuantParams, fake_quant, wrap_model, wrap_module
from .saliency import MaskGenerator, load_mask

__all__ = [
    "__version__",
    "AuditConfig",
    "AuditReport",
    "CamCache",
    "ConfigError",
    "Heatmap",
    "MaskGenerator",
    "MetricTriple",
    "PrecisionLevel",
    "QuantParams",
    "SUPPORTED_MODELS",
    "aggregate",
    "bilinear_resize",
    "cc",
    "compute_gradcampp",
    "emit_overlays",
    "emit_report",
    "fake_quant",
    "get_model_spec",
    "kld",
    "layer_registry",
    "load_dataset",
    "load_heatmap",
    "load_mask",
    "metric_triple",
    "run_audit",
    "run_matrix",
    "save_heatmap",
    "sim",
    "wrap_model",
    "wrap_module",
]
