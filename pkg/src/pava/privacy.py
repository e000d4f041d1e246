"""Sensitive-object redaction.

Frames go through detect → filter → merge → blur: a segmentation backend proposes
instance masks, detections outside the sensitive class set (or below the confidence
threshold) are dropped, surviving masks are OR-ed and dilated, and a full-frame Gaussian
blur is composited in through the merged mask. Pixels outside the mask are never touched.
"""

import json
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Protocol

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import ndimage

from pava.constants import EnvDefaults, MaskFormat, Redaction, SensitiveClasses, Variant
from pava.dataset import ClipRecord, DatasetManifest, write_manifest
from pava.errors import BackendError, PrivacyError
from pava.masks import MaskFile, MaskRecord, write_mask_file
from pava.preprocess import FrameSequence
from pava.utils import log_progress, run_parallel
from pava.video import NPY_SUFFIX, read_video, write_video

logger = logging.getLogger(__name__)


@dataclass
class InstanceDetection:
    """One detected object instance.

    bbox is (x0, y0, x1, y1) with exclusive x1/y1, the tight box around the mask;
    (0, 0, 0, 0) for an empty mask.
    """

    class_name: str
    confidence: float
    mask: np.ndarray
    backend_label: str | None = None
    bbox: tuple[int, int, int, int] = field(init=False)

    def __post_init__(self) -> None:
        self.mask = np.asarray(self.mask, dtype=bool)
        rows = np.flatnonzero(self.mask.any(axis=1))
        cols = np.flatnonzero(self.mask.any(axis=0))
        if rows.size == 0:
            self.bbox = (0, 0, 0, 0)
        else:
            self.bbox = (int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


class SegmentationBackend(Protocol):
    """Instance segmentation contract.

    shareable tells whether one handle may serve several threads at once;
    channel_order is the order the backend expects frames in.
    """

    name: str
    shareable: bool
    channel_order: Literal["RGB", "BGR"]

    def detect(self, frame: np.ndarray, frame_index: int) -> list[InstanceDetection]: ...


class SensitiveClassSet(BaseModel):
    model_config = ConfigDict(extra="forbid")

    backend_map: dict[str, list[str]] = Field(default_factory=lambda: dict(SensitiveClasses.BACKEND_MAP))
    confidence_threshold: float = Field(default=SensitiveClasses.CONFIDENCE_THRESHOLD, ge=0.0, le=1.0)

    @field_validator("backend_map")
    @classmethod
    def _check_map(cls, value: dict[str, list[str]]) -> dict[str, list[str]]:
        if len(value) != len(SensitiveClasses.BACKEND_MAP):
            raise ValueError(f"expected {len(SensitiveClasses.BACKEND_MAP)} sensitive classes, got {len(value)}")
        empty = [name for name, labels in value.items() if not labels]
        if empty:
            raise ValueError(f"sensitive classes without backend labels: {', '.join(empty)}")
        return value

    @property
    def names(self) -> list[str]:
        return list(self.backend_map)

    def logical_name(self, backend_label: str) -> str | None:
        """Sensitive class a backend label maps to, if any."""
        for name, labels in self.backend_map.items():
            if backend_label in labels:
                return name
        return None


class BlurParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sigma: float = Field(default=Redaction.SIGMA, gt=0.0)
    kernel_radius: int | None = Field(default=None, ge=0)
    mask_dilation: int = Field(default=Redaction.MASK_DILATION, ge=0)

    @property
    def radius(self) -> int:
        return self.kernel_radius if self.kernel_radius is not None else math.ceil(3 * self.sigma)


class RedactConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    backend: Literal["ref", "fake", "file"] = "ref"
    masks_dir: str | None = None
    fail_open: bool = False
    detect_every: int = Field(default=1, ge=1)
    save_detections: bool = False
    anomaly_window: int = Field(default=Redaction.ANOMALY_WINDOW, ge=1)
    anomaly_thresholds: tuple[int, ...] = Redaction.ANOMALY_THRESHOLDS


@dataclass
class PresenceSeries:
    """Per sensitive class, whether it was detected on each frame."""

    series: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        lengths = {len(v) for v in self.series.values()}
        if len(lengths) > 1:
            raise PrivacyError(f"Presence vectors differ in length: {sorted(lengths)}")

    @property
    def n_frames(self) -> int:
        return len(next(iter(self.series.values()))) if self.series else 0


@dataclass
class AnomalyReport:
    anomalous_frames: dict[str, np.ndarray]
    anomaly_frame_count: int
    total_frames: int
    threshold: int
    window: int

    @property
    def accuracy_percent(self) -> float:
        return 100.0 * self.anomaly_frame_count / self.total_frames

    def summary(self) -> dict[str, float | int]:
        return {
            "anomaly_frame_count": self.anomaly_frame_count,
            "total_frames": self.total_frames,
            "accuracy_percent": self.accuracy_percent,
        }


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    """Normalized 1-D Gaussian taps over [-radius, radius]."""
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def gaussian_blur(frame: np.ndarray, params: BlurParams) -> np.ndarray:
    """Full-frame separable Gaussian blur with reflective borders, in float64."""
    kernel = gaussian_kernel(params.sigma, params.radius)
    blurred = ndimage.convolve1d(frame.astype(np.float64), kernel, axis=0, mode="reflect")
    return ndimage.convolve1d(blurred, kernel, axis=1, mode="reflect")


def filter_sensitive(detections: Sequence[InstanceDetection], sensitive: SensitiveClassSet) -> list[InstanceDetection]:
    """Keep confident detections of sensitive classes, renamed to their logical class."""
    kept = []
    for detection in detections:
        name = sensitive.logical_name(detection.class_name)
        if name is None or detection.confidence < sensitive.confidence_threshold:
            continue
        kept.append(InstanceDetection(name, detection.confidence, detection.mask, detection.class_name))
    return kept


def merge_masks(detections: Sequence[InstanceDetection], dilation: int, shape: tuple[int, int]) -> np.ndarray:
    """Union of instance masks grown by a (2·dilation+1)² square.

    Raises:
        PrivacyError: If a mask does not match shape
    """
    merged = np.zeros(shape, dtype=bool)
    for detection in detections:
        if detection.mask.shape != tuple(shape):
            raise PrivacyError(f"Mask shape {detection.mask.shape} does not match frame shape {tuple(shape)}")
        merged |= detection.mask
    if dilation > 0 and merged.any():
        structure = np.ones((2 * dilation + 1, 2 * dilation + 1), dtype=bool)
        merged = ndimage.binary_dilation(merged, structure=structure)
    return merged


def blur_masked(frame: np.ndarray, mask: np.ndarray, params: BlurParams) -> np.ndarray:
    """Composite a full-frame blur into the masked pixels; the rest stay bit-identical."""
    if mask.shape != frame.shape[:2]:
        raise PrivacyError(f"Mask shape {mask.shape} does not match frame {frame.shape[:2]}")
    if not mask.any():
        return frame.copy()
    blurred = gaussian_blur(frame, params)
    if np.issubdtype(frame.dtype, np.integer):
        info = np.iinfo(frame.dtype)
        blurred = np.clip(np.rint(blurred), info.min, info.max)
    blurred = blurred.astype(frame.dtype)
    return np.where(mask[..., None], blurred, frame)


def _detect(backend: SegmentationBackend, frame: np.ndarray, frame_index: int) -> list[InstanceDetection]:
    if backend.channel_order == "BGR":
        frame = np.ascontiguousarray(frame[..., ::-1])
    try:
        return backend.detect(frame, frame_index)
    except BackendError as e:
        if e.frame_index is None:
            e.frame_index = frame_index
        raise
    except Exception as e:
        raise BackendError.inference_error(f"{backend.name} backend failed: {e}", frame_index) from e


def redact_clip(
    seq: FrameSequence,
    backend: SegmentationBackend,
    sensitive: SensitiveClassSet,
    params: BlurParams,
    config: RedactConfig | None = None,
    workers: int = 1,
    detections_out: list[list[InstanceDetection]] | None = None,
) -> tuple[FrameSequence, PresenceSeries]:
    """Redact every frame of a clip.

    Frames may be unit-range floats or uint8. With config.detect_every > 1 the detections
    of the last detected frame are reused until the next one. When detections_out is
    given, the filtered detections used on each frame are appended to it.

    Raises:
        BackendError: On the first failing frame unless config.fail_open is set
    """
    config = config or RedactConfig()
    n_frames = len(seq)
    shape = seq.frames.shape[1:3]
    detect_at = list(range(0, n_frames, config.detect_every))

    def run_detection(index: int) -> list[InstanceDetection] | BackendError:
        try:
            return filter_sensitive(_detect(backend, seq.frames[index], index), sensitive)
        except BackendError as e:
            return e

    pool = workers if backend.shareable else 1
    outcomes = dict(zip(detect_at, run_parallel(run_detection, detect_at, pool), strict=True))

    errors = [outcome for outcome in outcomes.values() if isinstance(outcome, BackendError)]
    if errors and not config.fail_open:
        first = errors[0]
        failed = ", ".join(str(e.frame_index) for e in errors)
        logger.error(f"Detection failed on {len(errors)} of {len(detect_at)} frames: {failed}")
        raise first

    redacted = np.empty_like(seq.frames)
    presence = {name: np.zeros(n_frames, dtype=bool) for name in sensitive.names}
    current: list[InstanceDetection] | BackendError = []
    for index in range(n_frames):
        if index in outcomes:
            current = outcomes[index]
        frame = seq.frames[index]
        if isinstance(current, BackendError):
            logger.warning(f"Passing frame {index} through unredacted: {current.message}")
            redacted[index] = frame
            if detections_out is not None:
                detections_out.append([])
            continue
        if detections_out is not None:
            detections_out.append(list(current))
        for detection in current:
            presence[detection.class_name][index] = True
        mask = merge_masks(current, params.mask_dilation, shape)
        redacted[index] = blur_masked(frame, mask, params)

    return seq.with_frames(redacted), PresenceSeries(presence)


def _false_runs(values: np.ndarray) -> list[tuple[int, int]]:
    """(start, length) of every maximal run of False."""
    padded = np.concatenate([[True], values.astype(bool), [True]])
    changes = np.flatnonzero(padded[1:] != padded[:-1])
    starts, ends = changes[0::2], changes[1::2]
    return [(int(s), int(e - s)) for s, e in zip(starts, ends, strict=True)]


def anomaly_frame_count(
    presence: PresenceSeries, threshold: int, window: int = Redaction.ANOMALY_WINDOW
) -> AnomalyReport:
    """Count frames inside short detector dropouts.

    A gap is a maximal run of absent frames with detections on both sides. Frames of a
    gap shorter than threshold (and no longer than window) are anomalous; a frame counts
    once even when several classes drop out on it.

    Raises:
        PrivacyError: On an empty series or invalid threshold/window
    """
    if threshold < 1 or window < threshold:
        raise PrivacyError(f"Need 1 ≤ threshold ≤ window, got threshold={threshold} window={window}")
    n_frames = presence.n_frames
    if n_frames == 0:
        raise PrivacyError("Cannot score an empty presence series")

    anomalous = {}
    for name, values in presence.series.items():
        flags = np.zeros(n_frames, dtype=bool)
        for start, length in _false_runs(values):
            bounded = start > 0 and start + length < n_frames
            if bounded and length < threshold and length <= window:
                flags[start : start + length] = True
        anomalous[name] = flags

    any_flag = np.zeros(n_frames, dtype=bool)
    for flags in anomalous.values():
        any_flag |= flags
    return AnomalyReport(anomalous, int(any_flag.sum()), n_frames, threshold, window)


BackendFactory = Callable[[str], SegmentationBackend]


def _detections_file(detections: list[list[InstanceDetection]], shape: tuple[int, int]) -> MaskFile:
    mask_file = MaskFile(shape=shape, n_frames=len(detections))
    for index, frame_detections in enumerate(detections):
        for detection in frame_detections:
            label = detection.backend_label or detection.class_name
            mask_file.records.append(MaskRecord(index, label, detection.confidence, detection.mask))
    return mask_file


def redact_file(
    in_path: str | Path,
    clip_id: str,
    backend: SegmentationBackend,
    sensitive: SensitiveClassSet,
    params: BlurParams,
    config: RedactConfig,
    out_dir: str | Path,
    workers: int = 1,
) -> tuple[Path, dict[str, dict]]:
    """Redact one clip file into `out_dir/clips/<clip_id>`.

    The output is always a lossless `.npy` stack so pixels outside the merged mask keep
    their decoded values; containers are decoded once and never re-encoded.

    Returns:
        (written clip path, anomaly summary keyed by threshold)
    """
    frames, fps = read_video(in_path)
    detections: list[list[InstanceDetection]] = []
    redacted, presence = redact_clip(
        FrameSequence(frames, fps), backend, sensitive, params, config, workers, detections
    )

    out = Path(out_dir)
    clip_path = write_video(out / "clips" / f"{clip_id}{NPY_SUFFIX}", redacted.frames, fps)
    if config.save_detections:
        det_path = out / "detections" / f"{clip_id}{MaskFormat.DETECTIONS_SUFFIX}"
        write_mask_file(det_path, _detections_file(detections, frames.shape[1:3]))

    scores = {
        str(th): anomaly_frame_count(presence, th, config.anomaly_window).summary()
        for th in config.anomaly_thresholds
    }
    return clip_path, scores


def write_anomaly_summary(per_clip: dict[str, dict[str, dict]], config: RedactConfig, path: str | Path) -> dict:
    """Write anomaly.json: per-clip scores plus totals pooled over all frames."""
    overall = {}
    for th in config.anomaly_thresholds:
        count = sum(scores[str(th)]["anomaly_frame_count"] for scores in per_clip.values())
        total = sum(scores[str(th)]["total_frames"] for scores in per_clip.values())
        overall[str(th)] = {
            "anomaly_frame_count": count,
            "total_frames": total,
            "accuracy_percent": 100.0 * count / total if total else 0.0,
        }
    summary = {"window": config.anomaly_window, "overall": overall, "clips": per_clip}
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return summary


def redact_manifest(
    manifest: DatasetManifest,
    backend_factory: BackendFactory,
    sensitive: SensitiveClassSet,
    params: BlurParams,
    config: RedactConfig,
    out_dir: str | Path,
    workers: int = EnvDefaults.WORKERS,
    quiet: bool = False,
) -> tuple[DatasetManifest, dict]:
    """Redact every clip of a manifest into out_dir.

    Writes `clips/`, a `manifest.jsonl` whose records are tagged variant=blurred, and
    `anomaly.json` at each configured threshold.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records: list[ClipRecord] = []
    per_clip: dict[str, dict] = {}

    for done, record in enumerate(manifest, start=1):
        backend = backend_factory(record.clip_id)
        clip_path, scores = redact_file(
            manifest.resolve(record), record.clip_id, backend, sensitive, params, config, out, workers
        )
        per_clip[record.clip_id] = scores
        records.append(
            record.model_copy(update={"path": clip_path.relative_to(out).as_posix(), "variant": Variant.BLURRED})
        )
        log_progress("redact", quiet, clip=record.clip_id, done=done, total=len(manifest))

    blurred = DatasetManifest(tuple(records), out.resolve())
    write_manifest(blurred, out / "manifest.jsonl")
    anomaly = write_anomaly_summary(per_clip, config, out / "anomaly.json")
    logger.info(f"Redacted {len(records)} clips into {out}")
    return blurred, anomaly
