"""Clip decoding and writing.

Clips are either `.npy` stacks of uint8 RGB frames (T×H×W×3, lossless and byte-stable)
or any container OpenCV can decode. OpenCV hands frames over in BGR order; they are
converted to RGB here so everything downstream sees RGB.
"""

import logging
from pathlib import Path

import cv2
import numpy as np

from pava.errors import DatasetError

logger = logging.getLogger(__name__)

NPY_SUFFIX = ".npy"
DEFAULT_FPS = 30.0


def read_video(path: str | Path) -> tuple[np.ndarray, float]:
    """Decode a clip into a uint8 RGB stack.

    Args:
        path: Clip file

    Returns:
        (frames, fps) with frames shaped T×H×W×3

    Raises:
        DatasetError: If the file is missing, truncated, or not a clip
    """
    path = Path(path)
    if path.suffix.lower() == NPY_SUFFIX:
        try:
            frames = np.load(path, allow_pickle=False)
        except (OSError, ValueError, EOFError) as e:
            raise DatasetError(f"Cannot read clip {path}: {e}") from e
        _check_stack(frames, path)
        return frames.astype(np.uint8, copy=False), DEFAULT_FPS

    capture = cv2.VideoCapture(str(path))
    if not capture.isOpened():
        raise DatasetError(f"Cannot open video {path}")
    try:
        fps = float(capture.get(cv2.CAP_PROP_FPS)) or DEFAULT_FPS
        decoded = []
        while True:
            ok, frame = capture.read()
            if not ok:
                break
            decoded.append(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB))
    finally:
        capture.release()

    if not decoded:
        raise DatasetError(f"Video {path} has no decodable frames")
    frames = np.stack(decoded)
    return frames, fps


def probe_video(path: str | Path) -> None:
    """Check that a clip is readable without decoding all of it.

    Raises:
        DatasetError: If the clip cannot be read
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"Clip {path} does not exist")
    if path.suffix.lower() == NPY_SUFFIX:
        try:
            frames = np.load(path, mmap_mode="r", allow_pickle=False)
            _check_stack(frames, path)
            # Touch the last frame so truncated payloads fail here
            np.asarray(frames[-1]).sum()
        except (OSError, ValueError, EOFError, IndexError) as e:
            raise DatasetError(f"Cannot read clip {path}: {e}") from e
        return

    capture = cv2.VideoCapture(str(path))
    try:
        ok = capture.isOpened() and capture.read()[0]
    finally:
        capture.release()
    if not ok:
        raise DatasetError(f"Cannot decode video {path}")


def write_video(path: str | Path, frames: np.ndarray, fps: float = DEFAULT_FPS) -> Path:
    """Write a uint8 RGB stack as `.npy` or through OpenCV (mp4v) for other suffixes.

    Only `.npy` is lossless; redacted clips are always written that way.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _check_stack(frames, path)
    frames = np.ascontiguousarray(frames, dtype=np.uint8)

    if path.suffix.lower() == NPY_SUFFIX:
        np.save(path, frames, allow_pickle=False)
        return path

    height, width = frames.shape[1:3]
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"mp4v"), fps, (width, height))
    if not writer.isOpened():
        raise DatasetError(f"Cannot open video writer for {path}")
    try:
        for frame in frames:
            writer.write(cv2.cvtColor(frame, cv2.COLOR_RGB2BGR))
    finally:
        writer.release()
    logger.debug(f"Wrote {len(frames)} frames to {path}")
    return path


def _check_stack(frames: np.ndarray, path: Path) -> None:
    if frames.ndim != 4 or frames.shape[-1] != 3 or frames.shape[0] == 0:
        raise DatasetError(f"Clip {path} must be a non-empty T×H×W×3 stack, got shape {frames.shape}")
