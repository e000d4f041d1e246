"""Synthetic desk-scale dataset generator.

Each class is encoded by how a bright textured patch moves across a dark background:
classes cycle through right, left, down and up, and every block of four classes moves
one pixel per frame faster than the previous block. Every clip also carries a static
striped "sensitive" rectangle (a stand-in for a screen) whose per-frame ground-truth
mask is written to `masks/<clip_id>.mask` in the PAVA-MASK v1 container.
"""

import logging
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from pava.constants import EnvDefaults, MaskFormat, Split
from pava.dataset import ClipRecord, DatasetManifest, label_set, write_manifest
from pava.errors import DatasetError
from pava.masks import MaskFile, MaskRecord, write_mask_file
from pava.utils import run_parallel
from pava.video import write_video

logger = logging.getLogger(__name__)

# (dx, dy) per class, cycled
DIRECTIONS: tuple[tuple[int, int], ...] = ((1, 0), (-1, 0), (0, 1), (0, -1))
PATCH_LEVELS = (200, 255)
STRIPE_LEVELS = (40, 160)
BACKGROUND_MAX = 24
GROUND_TRUTH_CLASS = "tv"


class SensitiveRegionSpec(BaseModel):
    """Size of the planted sensitive rectangle, as fractions of the frame."""

    model_config = ConfigDict(extra="forbid")

    enabled: bool = True
    height_fraction: float = Field(default=0.3, gt=0.0, le=1.0)
    width_fraction: float = Field(default=0.3, gt=0.0, le=1.0)


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    classes: int = Field(default=4, ge=2, le=18)
    clips_per_class: int = Field(default=10, ge=1)
    frames: int = Field(default=32, ge=1)
    resolution: tuple[int, int] = (64, 64)
    sensitive_region: SensitiveRegionSpec = Field(default_factory=SensitiveRegionSpec)
    seed: int = EnvDefaults.SEED
    test_fraction: float = Field(default=0.0, ge=0.0, lt=1.0)
    subjects: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check_resolution(self) -> "SynthConfig":
        if min(self.resolution) < 8:
            raise ValueError("resolution must be at least 8×8")
        return self


def class_motion(class_index: int) -> tuple[int, int]:
    """Per-frame (dx, dy) displacement of the moving patch for a class."""
    dx, dy = DIRECTIONS[class_index % len(DIRECTIONS)]
    speed = 1 + class_index // len(DIRECTIONS)
    return dx * speed, dy * speed


def _patch_track(rng: np.random.Generator, class_index: int, frames: int, span: tuple[int, int]) -> np.ndarray:
    """Top-left (y, x) of the patch on every frame; the patch never leaves the frame."""
    dx, dy = class_motion(class_index)
    track = np.zeros((frames, 2), dtype=np.int64)
    for axis, step in ((0, dy), (1, dx)):
        limit = span[axis]
        if step == 0:
            track[:, axis] = rng.integers(0, limit + 1)
            continue
        travel = min(abs(step) * (frames - 1), limit)
        start = int(rng.integers(0, limit - travel + 1))
        offsets = np.round(np.arange(frames) * travel / max(frames - 1, 1)).astype(np.int64)
        track[:, axis] = start + offsets if step > 0 else start + travel - offsets
    return track


def render_clip(config: SynthConfig, class_index: int, clip_index: int) -> tuple[np.ndarray, np.ndarray | None]:
    """Render one clip and its sensitive-region mask.

    Returns:
        (frames uint8 T×H×W×3, mask H×W bool or None when the region is disabled)
    """
    rng = np.random.default_rng([config.seed, class_index, clip_index])
    height, width = config.resolution
    frames = rng.integers(0, BACKGROUND_MAX + 1, size=(config.frames, height, width, 3), dtype=np.uint8)

    mask = None
    region = config.sensitive_region
    if region.enabled:
        rh = max(2, int(round(height * region.height_fraction)))
        rw = max(2, int(round(width * region.width_fraction)))
        y0 = int(rng.integers(0, height - rh + 1))
        x0 = int(rng.integers(0, width - rw + 1))
        period = 2 + int(rng.integers(0, 3))
        stripes = np.where((np.arange(rw) // period) % 2 == 0, *STRIPE_LEVELS).astype(np.uint8)
        frames[:, y0 : y0 + rh, x0 : x0 + rw, :] = stripes[None, None, :, None]
        mask = np.zeros((height, width), dtype=bool)
        mask[y0 : y0 + rh, x0 : x0 + rw] = True

    size = max(4, min(height, width) // 5)
    texture = rng.integers(PATCH_LEVELS[0], PATCH_LEVELS[1] + 1, size=(size, size, 3), dtype=np.uint8)
    track = _patch_track(rng, class_index, config.frames, (height - size, width - size))
    for t, (y, x) in enumerate(track):
        frames[t, y : y + size, x : x + size, :] = texture
    return frames, mask


def synth_dataset(config: SynthConfig, out_dir: str | Path, workers: int = EnvDefaults.WORKERS) -> DatasetManifest:
    """Write a synthetic dataset and its manifest under out_dir.

    Layout: `clips/<label>/<clip_id>.npy`, `masks/<clip_id>.mask`, `manifest.jsonl`.

    Raises:
        DatasetError: If out_dir cannot be written
    """
    out = Path(out_dir)
    try:
        (out / "clips").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DatasetError(f"Cannot write to output directory {out}: {e}") from e

    labels = label_set(config.classes)
    split_rng = np.random.default_rng(config.seed)
    n_test = int(round(config.test_fraction * config.clips_per_class))
    if config.test_fraction > 0 and n_test >= config.clips_per_class:
        n_test = config.clips_per_class - 1
    jobs = []
    for label in labels:
        test_clips = set(split_rng.permutation(config.clips_per_class)[:n_test].tolist())
        for j in range(config.clips_per_class):
            jobs.append((label, j, Split.TEST if j in test_clips else Split.TRAIN))

    def write_one(job: tuple) -> ClipRecord:
        label, j, clip_split = job
        clip_id = f"{label.name}-{j:04d}"
        frames, mask = render_clip(config, label.index, j)
        clip_path = out / "clips" / label.name / f"{clip_id}.npy"
        mask_file = MaskFile(shape=config.resolution, n_frames=config.frames)
        if mask is not None:
            mask_file.records = [MaskRecord(t, GROUND_TRUTH_CLASS, 1.0, mask) for t in range(config.frames)]
        try:
            write_video(clip_path, frames)
            write_mask_file(out / "masks" / f"{clip_id}{MaskFormat.MASK_SUFFIX}", mask_file)
        except OSError as e:
            raise DatasetError(f"Cannot write clip {clip_id}: {e}") from e
        return ClipRecord(
            clip_id=clip_id,
            path=clip_path.relative_to(out).as_posix(),
            label=label.name,
            subject_id=f"s{j % config.subjects:02d}",
            split=clip_split,
        )

    records = sorted(run_parallel(write_one, jobs, workers), key=lambda r: r.clip_id)
    manifest = DatasetManifest(tuple(records), out.resolve())
    write_manifest(manifest, out / "manifest.jsonl")
    logger.info(f"Synthesized {len(records)} clips for {config.classes} classes in {out}")
    return manifest
