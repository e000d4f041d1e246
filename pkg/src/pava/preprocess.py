"""Frame preprocessing: brightness gamma correction, frame sampling, resizing and normalization.

All functions are pure given their inputs and an explicit seed or generator, so they are
safe to call concurrently on different clips.
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal

import cv2
import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field

from pava.constants import Preprocessing
from pava.errors import PreprocessError

logger = logging.getLogger(__name__)

SeedLike = int | np.random.Generator


@dataclass
class FrameSequence:
    """A decoded clip: T×H×W×3 floating-point frames plus the source frame rate."""

    frames: np.ndarray
    source_fps: float = 30.0

    def __post_init__(self) -> None:
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise PreprocessError(f"Frames must be shaped T×H×W×3, got {self.frames.shape}")

    @classmethod
    def from_uint8(cls, frames: np.ndarray, source_fps: float = 30.0, dtype: type = np.float32) -> "FrameSequence":
        """Scale a uint8 stack into the unit range."""
        return cls(frames.astype(dtype) / 255.0, source_fps)

    def __len__(self) -> int:
        return int(self.frames.shape[0])

    def with_frames(self, frames: np.ndarray) -> "FrameSequence":
        return FrameSequence(frames, self.source_fps)


class GammaParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    gamma: float = Field(default=1.0, gt=0.0)
    target_mean: float = Field(default=Preprocessing.GAMMA_TARGET_MEAN, gt=0.0, lt=1.0)
    enabled: bool = True


class SampleSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_frames: int = Field(default=Preprocessing.N_FRAMES, ge=1)
    seed: int = 0
    padding: Literal["repeat_last"] = "repeat_last"


class PreprocessConfig(BaseModel):
    """Backbone input contract. resolution None means the backbone's catalogue default."""

    model_config = ConfigDict(extra="forbid")

    resolution: tuple[int, int] | None = None
    channel_mean: tuple[float, float, float] = Preprocessing.IMAGENET_MEAN
    channel_std: tuple[float, float, float] = Preprocessing.IMAGENET_STD
    hflip_prob: float = Field(default=Preprocessing.HFLIP_PROB, ge=0.0, le=1.0)


def _rng(seed_or_rng: SeedLike) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def estimate_gamma(mean_brightness: float, target_mean: float = Preprocessing.GAMMA_TARGET_MEAN) -> float:
    """Gamma that maps mean_brightness onto target_mean under x ↦ x**gamma.

    Raises:
        PreprocessError: If either value is outside the open unit interval
    """
    if not 0.0 < mean_brightness < 1.0:
        raise PreprocessError(f"Degenerate frame: mean brightness {mean_brightness} must be in (0, 1)")
    if not 0.0 < target_mean < 1.0:
        raise PreprocessError(f"Target mean {target_mean} must be in (0, 1)")
    return math.log(target_mean) / math.log(mean_brightness)


def apply_gamma(seq: FrameSequence, params: GammaParams) -> FrameSequence:
    if params.gamma == 1.0:
        return seq.with_frames(seq.frames.copy())
    return seq.with_frames(np.power(seq.frames, params.gamma))


def sample_indices(n_available: int, spec: SampleSpec, rng: SeedLike | None = None) -> np.ndarray:
    """Frame indices chosen by sample_frames.

    With at least n_frames frames: n_frames distinct indices, sorted, drawn uniformly
    without replacement. Otherwise all frames followed by the last one repeated.
    """
    if n_available < 1:
        raise PreprocessError("Cannot sample from an empty clip")
    n = spec.n_frames
    if n_available == n:
        return np.arange(n)
    if n_available > n:
        generator = _rng(spec.seed if rng is None else rng)
        return np.sort(generator.choice(n_available, size=n, replace=False))
    return np.concatenate([np.arange(n_available), np.full(n - n_available, n_available - 1)])


def sample_frames(seq: FrameSequence, spec: SampleSpec, rng: SeedLike | None = None) -> FrameSequence:
    return seq.with_frames(seq.frames[sample_indices(len(seq), spec, rng)])


def resize_normalize(
    seq: FrameSequence,
    resolution: tuple[int, int],
    channel_mean: tuple[float, float, float] | np.ndarray,
    channel_std: tuple[float, float, float] | np.ndarray,
) -> FrameSequence:
    """Bilinear resize to (H', W'), then per-channel (x - mean) / std.

    Raises:
        PreprocessError: On a non-positive resolution or a zero std component
    """
    height, width = resolution
    if height <= 0 or width <= 0:
        raise PreprocessError(f"Resolution must be positive, got {resolution}")
    std = np.asarray(channel_std, dtype=np.float64)
    mean = np.asarray(channel_mean, dtype=np.float64)
    if np.any(std == 0):
        raise PreprocessError(f"Channel std must be nonzero, got {tuple(std)}")

    frames = seq.frames
    if not np.issubdtype(frames.dtype, np.floating):
        frames = frames.astype(np.float32)
    if frames.shape[1:3] != (height, width):
        # cv2 takes (width, height)
        frames = np.stack([cv2.resize(frame, (width, height), interpolation=cv2.INTER_LINEAR) for frame in frames])
    normalized = ((frames - mean) / std).astype(frames.dtype, copy=False)
    return seq.with_frames(normalized)


def unnormalize(
    seq: FrameSequence,
    channel_mean: tuple[float, float, float] | np.ndarray,
    channel_std: tuple[float, float, float] | np.ndarray,
) -> FrameSequence:
    """Invert the affine step of resize_normalize."""
    std = np.asarray(channel_std, dtype=np.float64)
    mean = np.asarray(channel_mean, dtype=np.float64)
    return seq.with_frames((seq.frames * std + mean).astype(seq.frames.dtype, copy=False))


def random_hflip(seq: FrameSequence, probability: float, seed: SeedLike) -> FrameSequence:
    """Mirror the whole clip left-right with the given probability."""
    if not 0.0 <= probability <= 1.0:
        raise PreprocessError(f"Flip probability must be in [0, 1], got {probability}")
    if _rng(seed).random() < probability:
        return seq.with_frames(np.ascontiguousarray(seq.frames[:, :, ::-1, :]))
    return seq


def prepare_clip(
    frames: np.ndarray,
    resolution: tuple[int, int],
    preprocess: PreprocessConfig,
    sample: SampleSpec,
    gamma: GammaParams,
    train: bool = False,
    seed: int = 0,
    source_fps: float = 30.0,
) -> torch.Tensor:
    """Turn a decoded uint8 clip into a T×3×H×W float tensor for the classifier.

    Order: sample, gamma (per clip, from the first sampled frame), flip (training only),
    resize and normalize. Sampling and flipping draw from one generator seeded by `seed`.
    """
    rng = np.random.default_rng(seed)
    seq = FrameSequence.from_uint8(frames, source_fps)
    seq = sample_frames(seq, sample, rng)

    if gamma.enabled:
        mean = float(seq.frames[0].mean())
        try:
            seq = apply_gamma(seq, gamma.model_copy(update={"gamma": estimate_gamma(mean, gamma.target_mean)}))
        except PreprocessError:
            logger.debug(f"Skipping gamma correction for degenerate clip (mean brightness {mean})")

    if train:
        seq = random_hflip(seq, preprocess.hflip_prob, rng)

    seq = resize_normalize(seq, resolution, preprocess.channel_mean, preprocess.channel_std)
    return torch.from_numpy(np.ascontiguousarray(seq.frames.transpose(0, 3, 1, 2), dtype=np.float32))
