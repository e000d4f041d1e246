"""Detection interchange file backend.

Replays detections produced elsewhere (for example by `pava redact --save-detections`)
from `<clip_id>.det` files in the PAVA-MASK v1 container.
"""

import logging
from pathlib import Path
from typing import Literal

import numpy as np

from pava.constants import MaskFormat
from pava.errors import BackendError, DatasetError
from pava.masks import MaskFile, read_mask_file
from pava.privacy import InstanceDetection

logger = logging.getLogger(__name__)


class DetectionFileBackend:
    """Serves the recorded detections of one clip."""

    name = "file"
    shareable = True
    channel_order: Literal["RGB", "BGR"] = "RGB"
    suffix = MaskFormat.DETECTIONS_SUFFIX

    def __init__(self, mask_file: MaskFile):
        self.mask_file = mask_file
        self._by_frame = mask_file.by_frame()

    @classmethod
    def for_clip(cls, directory: str | Path, clip_id: str) -> "DetectionFileBackend":
        path = Path(directory) / f"{clip_id}{cls.suffix}"
        try:
            return cls(read_mask_file(path))
        except DatasetError as e:
            raise BackendError.load_error(f"Cannot load {cls.name} backend data for {clip_id}: {e.message}") from e

    def detect(self, frame: np.ndarray, frame_index: int) -> list[InstanceDetection]:
        if frame.shape[:2] != self.mask_file.shape:
            raise BackendError.inference_error(
                f"Frame shape {frame.shape[:2]} does not match recorded masks {self.mask_file.shape}", frame_index
            )
        return [
            InstanceDetection(record.class_name, record.confidence, record.mask.copy())
            for record in self._by_frame.get(frame_index, [])
        ]
