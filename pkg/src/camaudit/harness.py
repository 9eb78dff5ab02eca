"""Audit orchestration: dataset sampling, the model x precision run matrix,
CAM caching, aggregation, and report/overlay emission.

Per-image failures are logged and skipped so long batch runs survive corrupt
inputs; every CAM is cached on disk keyed by (model, precision, image id,
class policy) so precision sweeps are resumable and reruns are cheap.
"""

from __future__ import annotations

import copy
import hashlib
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import cam as cam_engine
from . import metrics
from .cam import Heatmap
from .config import AuditConfig
from .model_zoo import ModelSpec, Preprocessor, build_model, get_model_spec, load_image
from .quantsim import PrecisionLevel, wrap_module
from .saliency import MaskGenerator, load_mask

IMAGE_EXTS = (".jpg", ".jpeg", ".png")

CLASS_POLICY = "own-argmax"

ROW_ORDER = ("f32 vs GT", "int16 vs GT", "int8 vs GT", "int16 vs f32", "int8 vs f32")
METRIC_ORDER = ("sim", "cc", "kld")

VS_GT = "vs_gt"
VS_F32 = "vs_f32"


# --- dataset -----------------------------------------------------------------


@dataclass(frozen=True)
class DatasetEntry:
    image_id: str
    image_path: str
    mask_path: str


@dataclass
class DatasetIndex:
    entries: list[DatasetEntry]
    sample_size: int
    rng_seed: int

    def __len__(self):
        return len(self.entries)


def load_dataset(
    image_dir,
    mask_dir,
    n: int,
    seed: int,
    generator: MaskGenerator | None = None,
) -> DatasetIndex:
    """Deterministic pseudo-random sample of n images with masks.

    Images lacking a mask are eligible only when a generator adapter is
    configured; masks for the sampled subset are then produced up front,
    before any classifier is loaded.
    """
    image_dir = Path(image_dir)
    mask_dir = Path(mask_dir)
    if not image_dir.is_dir():
        raise ValueError(f"image dir not found: {image_dir}")
    generate = generator is not None and generator.available
    if not mask_dir.is_dir() and not generate:
        raise ValueError(f"mask dir not found and no generator configured: {mask_dir}")

    candidates = sorted(
        p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_EXTS
    )
    seen: dict[str, Path] = {}
    for p in candidates:
        if p.stem in seen:
            raise ValueError(f"duplicate image id {p.stem!r}")
        seen[p.stem] = p

    eligible = [
        p for p in candidates if generate or (mask_dir / f"{p.stem}.png").exists()
    ]
    if len(eligible) < n:
        raise ValueError(
            f"insufficient images: need {n}, found {len(eligible)} with masks "
            f"(shortfall {n - len(eligible)})"
        )

    rng = np.random.default_rng(seed)
    picks = rng.choice(len(eligible), size=n, replace=False)
    entries = []
    for i in picks:
        p = eligible[int(i)]
        mask_path = mask_dir / f"{p.stem}.png"
        if not mask_path.exists():
            generator.generate(p, p.stem)
        entries.append(
            DatasetEntry(image_id=p.stem, image_path=str(p), mask_path=str(mask_path))
        )
    return DatasetIndex(entries=entries, sample_size=n, rng_seed=seed)


# --- CAM cache ---------------------------------------------------------------


class CamCache:
    """Disk cache of heatmaps, keyed by the run coordinates that determine
    a CAM. Writes are atomic; hit/miss counters stay in memory only."""

    def __init__(self, cache_dir):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    @staticmethod
    def key(model: str, precision: str, image_id: str, class_policy: str = CLASS_POLICY) -> str:
        payload = f"{model}|{precision}|{image_id}|{class_policy}"
        return hashlib.sha256(payload.encode()).hexdigest()

    def _bin_path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.bin"

    def get(self, model: str, precision: str, image_id: str) -> Heatmap | None:
        path = self._bin_path(self.key(model, precision, image_id))
        if not path.exists():
            with self._lock:
                self.misses += 1
            return None
        heatmap, _ = cam_engine.load_heatmap(path)
        with self._lock:
            self.hits += 1
        return heatmap

    def put(self, heatmap: Heatmap, model: str, precision: str, image_id: str) -> Heatmap:
        """Store and return the heatmap at cache precision (float32 grid),
        so cold-computed and cache-served CAMs are bit-identical."""
        path = self._bin_path(self.key(model, precision, image_id))
        cam_engine.save_heatmap(heatmap, path, model=model, precision=precision, image_id=image_id)
        return Heatmap(
            values=heatmap.values.astype(np.float32).astype(np.float64),
            class_index=heatmap.class_index,
            zero_gradient=heatmap.zero_gradient,
        )


# --- run matrix --------------------------------------------------------------


@dataclass
class RunRecord:
    model: str
    precision: str
    image_id: str
    comparison: str  # vs_gt | vs_f32
    sim: float
    cc: float | None
    kld: float
    degenerate: bool
    predicted_class: int | None
    prediction_divergent: bool


@dataclass
class MatrixResult:
    records: list[RunRecord]
    failures: list[dict]
    cache_hits: int
    cache_misses: int


def _records_for_image(
    spec: ModelSpec,
    entry: DatasetEntry,
    cams: dict[str, Heatmap],
    requested: list[PrecisionLevel],
    epsilon: float,
    kld_weighting: str,
) -> list[RunRecord]:
    size = spec.input_size
    mask = load_mask(entry.mask_path, size, size)
    f32_cam = cams[PrecisionLevel.F32.label]
    records = []
    for level in requested:
        level_cam = cams[level.label]
        divergent = (
            not level.is_identity
            and level_cam.class_index != f32_cam.class_index
        )
        gt_triple = metrics.metric_triple(
            mask, level_cam.values, epsilon=epsilon, kld_weighting=kld_weighting
        )
        records.append(
            RunRecord(
                model=spec.name,
                precision=level.label,
                image_id=entry.image_id,
                comparison=VS_GT,
                sim=gt_triple.sim,
                cc=gt_triple.cc,
                kld=gt_triple.kld,
                degenerate=gt_triple.degenerate,
                predicted_class=level_cam.class_index,
                prediction_divergent=divergent,
            )
        )
        if not level.is_identity:
            f32_triple = metrics.metric_triple(
                f32_cam.values, level_cam.values, epsilon=epsilon, kld_weighting=kld_weighting
            )
            records.append(
                RunRecord(
                    model=spec.name,
                    precision=level.label,
                    image_id=entry.image_id,
                    comparison=VS_F32,
                    sim=f32_triple.sim,
                    cc=f32_triple.cc,
                    kld=f32_triple.kld,
                    degenerate=f32_triple.degenerate,
                    predicted_class=level_cam.class_index,
                    prediction_divergent=divergent,
                )
            )
    return records


def run_matrix(
    models: list[ModelSpec],
    precisions: list[PrecisionLevel],
    data: DatasetIndex,
    cache: CamCache,
    epsilon: float = metrics.DEFAULT_EPSILON,
    kld_weighting: str = "cam",
    workers: int = 1,
    progress=None,
) -> MatrixResult:
    """Evaluate every (model, precision, image) cell.

    The f32 CAM is always computed first (it is the reference for the
    vs_f32 comparisons) even when f32 rows were not requested. Per-image
    errors are collected, never fatal. Output order is deterministic and
    independent of worker scheduling.
    """
    requested = list(dict.fromkeys(precisions))
    passes = [PrecisionLevel.F32] + [lv for lv in requested if not lv.is_identity]
    workers = max(1, int(workers))
    single = workers == 1

    records: list[RunRecord] = []
    failures: list[dict] = []

    for spec in models:
        pre = Preprocessor(spec)
        base = build_model(spec)
        failed_ids: set[str] = set()
        # image_id -> precision label -> heatmap, filled across passes
        image_cams: dict[str, dict[str, Heatmap]] = {e.image_id: {} for e in data.entries}

        for level in passes:
            local = threading.local()

            def worker_model():
                if not hasattr(local, "model"):
                    if single:
                        local.model = wrap_module(
                            base, level, spec.target_layer, name=spec.name
                        )
                    else:
                        local.model = wrap_module(
                            copy.deepcopy(base),
                            level,
                            spec.target_layer,
                            name=spec.name,
                            inplace=True,
                        )
                return local.model

            def run_one(entry: DatasetEntry):
                hm = cache.get(spec.name, level.label, entry.image_id)
                if hm is None:
                    image = load_image(entry.image_path)
                    tensor = pre.tensor(image)
                    hm = cam_engine.compute_gradcampp(worker_model(), tensor)
                    hm = cache.put(hm, spec.name, level.label, entry.image_id)
                return hm

            pending = [e for e in data.entries if e.image_id not in failed_ids]
            if single:
                outcomes = []
                for i, entry in enumerate(pending):
                    if progress:
                        progress(f"{spec.name} {level.label} {i + 1}/{len(pending)}")
                    try:
                        outcomes.append(run_one(entry))
                    except Exception as exc:  # noqa: BLE001 - skip-and-log contract
                        outcomes.append(exc)
            else:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    def guarded(entry):
                        try:
                            return run_one(entry)
                        except Exception as exc:  # noqa: BLE001
                            return exc
                    outcomes = list(pool.map(guarded, pending))
                if progress:
                    progress(f"{spec.name} {level.label} {len(pending)} images")

            for entry, outcome in zip(pending, outcomes):
                if isinstance(outcome, Exception):
                    failed_ids.add(entry.image_id)
                    failures.append(
                        {
                            "model": spec.name,
                            "precision": level.label,
                            "image_id": entry.image_id,
                            "error": f"{type(outcome).__name__}: {outcome}",
                        }
                    )
                else:
                    image_cams[entry.image_id][level.label] = outcome

        for entry in data.entries:
            if entry.image_id in failed_ids:
                continue
            try:
                records.extend(
                    _records_for_image(
                        spec, entry, image_cams[entry.image_id], requested, epsilon, kld_weighting
                    )
                )
            except Exception as exc:  # noqa: BLE001
                failures.append(
                    {
                        "model": spec.name,
                        "precision": "metrics",
                        "image_id": entry.image_id,
                        "error": f"{type(exc).__name__}: {exc}",
                    }
                )

    return MatrixResult(
        records=records,
        failures=failures,
        cache_hits=cache.hits,
        cache_misses=cache.misses,
    )


# --- aggregation -------------------------------------------------------------


@dataclass(frozen=True)
class AggregateCell:
    mean: float
    std: float  # population std (divide by n)
    n: int


def row_label(precision: str, comparison: str) -> str:
    target = "GT" if comparison == VS_GT else "f32"
    return f"{precision} vs {target}"


def aggregate(records: list[RunRecord]) -> dict[tuple[str, str, str], AggregateCell]:
    """mean/std per (model, comparison row, metric); degenerate CC excluded."""
    buckets: dict[tuple[str, str, str], list[float]] = {}
    for rec in records:
        row = row_label(rec.precision, rec.comparison)
        for metric in METRIC_ORDER:
            value = getattr(rec, metric)
            if metric == "cc" and value is None:
                continue
            buckets.setdefault((rec.model, row, metric), []).append(float(value))

    cells = {}
    for key, values in buckets.items():
        arr = np.asarray(values, dtype=np.float64)
        cells[key] = AggregateCell(
            mean=float(arr.mean()), std=float(arr.std()), n=len(values)
        )
    return cells


# --- reports -----------------------------------------------------------------


@dataclass
class AuditReport:
    config: dict
    provenance: dict
    records: list[RunRecord]
    failures: list[dict] = field(default_factory=list)


def write_records(report: AuditReport, path) -> None:
    payload = {
        "config": report.config,
        "provenance": report.provenance,
        "records": [asdict(r) for r in report.records],
        "failures": report.failures,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def read_records(path) -> AuditReport:
    payload = json.loads(Path(path).read_text())
    records = [RunRecord(**r) for r in payload["records"]]
    return AuditReport(
        config=payload.get("config", {}),
        provenance=payload.get("provenance", {}),
        records=records,
        failures=payload.get("failures", []),
    )


def render_csv(cells, models_order: list[str]) -> str:
    lines = ["model,row,metric,mean,std,n"]
    for model in models_order:
        for row in ROW_ORDER:
            for metric in METRIC_ORDER:
                cell = cells.get((model, row, metric))
                if cell is None:
                    continue
                lines.append(
                    f"{model},{row},{metric},{cell.mean!r},{cell.std!r},{cell.n}"
                )
    return "\n".join(lines) + "\n"


def read_csv_cells(path) -> tuple[dict, list[str]]:
    """Re-ingest a report.csv into (cells, model order)."""
    cells = {}
    models_order: list[str] = []
    lines = Path(path).read_text().splitlines()
    for line in lines[1:]:
        model, row, metric, mean, std, n = line.split(",")
        if model not in models_order:
            models_order.append(model)
        cells[(model, row, metric)] = AggregateCell(
            mean=float(mean), std=float(std), n=int(n)
        )
    return cells, models_order


def render_markdown_table(cells, models_order: list[str]) -> str:
    header = "| Comparison | Metric | " + " | ".join(models_order) + " |"
    rule = "|---|---|" + "---|" * len(models_order)
    lines = [header, rule]
    for row in ROW_ORDER:
        present = [
            m for m in models_order
            if any((m, row, metric) in cells for metric in METRIC_ORDER)
        ]
        if not present:
            continue
        for metric in METRIC_ORDER:
            parts = [f"| {row} | {metric.upper()} "]
            for model in models_order:
                cell = cells.get((model, row, metric))
                text = f"{cell.mean:.4f} ± {cell.std:.4f}" if cell else "n/a"
                parts.append(f"| {text} ")
            lines.append("".join(parts) + "|")
    return "\n".join(lines) + "\n"


def render_markdown(report: AuditReport) -> str:
    cells = aggregate(report.records)
    models_order = report.config.get(
        "models", sorted({r.model for r in report.records})
    )
    sections = [
        "# CAM quantization audit",
        "",
        render_markdown_table(cells, models_order).rstrip("\n"),
        "",
        f"Failures: {len(report.failures)}"
        + (" (see failures.log)" if report.failures else ""),
        "",
        "## Provenance",
        "",
    ]
    for key in sorted(report.provenance):
        sections.append(f"- {key}: {json.dumps(report.provenance[key], sort_keys=True)}")
    return "\n".join(sections) + "\n"


def emit_report(report: AuditReport, out_dir, formats=("csv", "md", "json")) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = aggregate(report.records)
    models_order = report.config.get(
        "models", sorted({r.model for r in report.records})
    )
    written = {}
    if "csv" in formats:
        path = out_dir / "report.csv"
        path.write_text(render_csv(cells, models_order))
        written["csv"] = path
    if "md" in formats:
        path = out_dir / "report.md"
        path.write_text(render_markdown(report))
        written["md"] = path
    if "json" in formats:
        path = out_dir / "records.json"
        write_records(report, path)
        written["json"] = path
    failures_log = out_dir / "failures.log"
    failures_log.write_text(
        "".join(
            f"{f['model']}\t{f['precision']}\t{f['image_id']}\t{f['error']}\n"
            for f in report.failures
        )
    )
    written["failures"] = failures_log
    return written


# --- overlays ----------------------------------------------------------------


def jet_colormap(values: np.ndarray) -> np.ndarray:
    """Classic piecewise-linear jet, HxW in [0,1] -> HxWx3 in [0,1]."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    r = np.clip(1.5 - np.abs(4.0 * v - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * v - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * v - 1.0), 0.0, 1.0)
    return np.stack([r, g, b], axis=-1)


def overlay_heatmap(image: np.ndarray, heat: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend with per-pixel opacity alpha*heat, so a zero map leaves the
    image untouched."""
    heat = np.clip(np.asarray(heat, dtype=np.float64), 0.0, 1.0)
    a = (alpha * heat)[..., None]
    return image * (1.0 - a) + jet_colormap(heat) * a


def compose_overlay_row(
    image: np.ndarray,
    mask: np.ndarray,
    cams: list[tuple[str, Heatmap]],
    alpha: float = 0.5,
) -> np.ndarray:
    h, w = image.shape[0], image.shape[1]
    panels = [image, np.repeat(mask[..., None], 3, axis=-1)]
    for _label, heatmap in cams:
        if heatmap.values.shape != (h, w):
            raise ValueError(
                f"size mismatch: cam {heatmap.values.shape} vs image {(h, w)}"
            )
        panels.append(overlay_heatmap(image, heatmap.values, alpha=alpha))
    return np.concatenate(panels, axis=1)


def emit_overlays(
    image: np.ndarray,
    cam_rows: list[list[tuple[str, Heatmap]]],
    mask: np.ndarray,
    out_path,
    alpha: float = 0.5,
) -> Path:
    """Write one composite PNG: a row per model, panels
    original | mask | one overlay per precision."""
    if mask.shape != image.shape[:2]:
        raise ValueError(f"size mismatch: mask {mask.shape} vs image {image.shape[:2]}")
    rows = [compose_overlay_row(image, mask, cams, alpha=alpha) for cams in cam_rows]
    grid = np.concatenate(rows, axis=0)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    data = np.clip(np.rint(grid * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(out_path, format="PNG")
    return out_path


# --- full-audit orchestration --------------------------------------------------


@dataclass
class AuditOutcome:
    report: AuditReport
    written: dict[str, Path]
    failure_rate: float
    threshold_exceeded: bool
    cache_hits: int
    cache_misses: int


def build_provenance(config: AuditConfig, data: DatasetIndex) -> dict:
    levels = [PrecisionLevel.from_name(p) for p in config.precisions]
    return {
        "seed": data.rng_seed,
        "sample_size": data.sample_size,
        "epsilon": config.epsilon,
        "kld_weighting": config.kld_weighting,
        "precision_ranges": {
            lv.label: None if lv.is_identity else [lv.q_min, lv.q_max] for lv in levels
        },
        "std_convention": "population",
        "class_policy": CLASS_POLICY,
        "layer_registry": {
            name: get_model_spec(name, pretrained=False).target_layer
            for name in config.models
        },
        "pretrained": config.pretrained,
    }


def _emit_overlay_grids(
    config: AuditConfig,
    data: DatasetIndex,
    cache: CamCache,
    out_dir: Path,
) -> list[Path]:
    """One PNG per requested overlay id, rows ordered like config.models,
    panels ordered like config.precisions. Models missing a cached CAM for
    the image (a logged matrix failure) drop out of that grid."""
    by_id = {e.image_id: e for e in data.entries}
    written = []
    for image_id in config.overlay_ids:
        entry = by_id.get(image_id)
        if entry is None:
            raise ValueError(f"overlay_ids: {image_id!r} is not in the sampled dataset")
        base_prep = Preprocessor(get_model_spec(config.models[0], pretrained=False))
        image = base_prep.array(load_image(entry.image_path))
        size = image.shape[0]
        mask = load_mask(entry.mask_path, size, image.shape[1])
        rows = []
        for model_name in config.models:
            cams = []
            for label in config.precisions:
                hm = cache.get(model_name, label, image_id)
                if hm is not None:
                    cams.append((label, hm))
            if len(cams) == len(config.precisions):
                rows.append(cams)
        if not rows:
            continue
        path = out_dir / "overlays" / f"{image_id}.png"
        emit_overlays(image, rows, mask, path)
        written.append(path)
    return written


def run_audit(config: AuditConfig, progress=None) -> AuditOutcome:
    """load_dataset -> run_matrix -> aggregate -> emit_report (+ overlays)."""
    levels = [PrecisionLevel.from_name(p) for p in config.precisions]
    generator = MaskGenerator(config.mask_generator, config.mask_dir)
    data = load_dataset(
        config.image_dir, config.mask_dir, config.n, config.seed, generator=generator
    )
    specs = [get_model_spec(name, pretrained=config.pretrained) for name in config.models]
    cache = CamCache(config.cache_dir)
    result = run_matrix(
        specs,
        levels,
        data,
        cache,
        epsilon=config.epsilon,
        kld_weighting=config.kld_weighting,
        workers=config.workers,
        progress=progress,
    )
    report = AuditReport(
        config=config.as_dict(),
        provenance=build_provenance(config, data),
        records=result.records,
        failures=result.failures,
    )
    out_dir = Path(config.out_dir)
    written = emit_report(report, out_dir, formats=tuple(config.formats))
    if config.overlay_ids:
        for path in _emit_overlay_grids(config, data, cache, out_dir):
            written[f"overlay:{path.stem}"] = path

    failed_pairs = {
        (f["model"], f["image_id"]) for f in result.failures if f.get("image_id")
    }
    total_pairs = len(config.models) * data.sample_size
    failure_rate = len(failed_pairs) / total_pairs if total_pairs else 0.0
    return AuditOutcome(
        report=report,
        written=written,
        failure_rate=failure_rate,
        threshold_exceeded=failure_rate > config.failure_threshold,
        cache_hits=result.cache_hits,
        cache_misses=result.cache_misses,
    )
