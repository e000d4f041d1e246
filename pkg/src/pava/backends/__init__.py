"""Segmentation backends for sensitive-object detection."""

import logging
from pathlib import Path

from pava.backends.base import BACKEND_NAMES, describe_backend
from pava.backends.fake import GroundTruthBackend
from pava.backends.file import DetectionFileBackend
from pava.errors import BackendError
from pava.privacy import BackendFactory, SegmentationBackend

logger = logging.getLogger(__name__)


def backend_factory(
    name: str,
    masks_dir: str | Path | None = None,
    weights: str | Path | None = None,
    device: str = "cpu",
) -> BackendFactory:
    """Build a per-clip backend factory.

    Args:
        name: One of ref, fake, file
        masks_dir: Directory of `<clip_id>.mask` (fake) or `<clip_id>.det` (file) files
        weights: Mask R-CNN state dict path for the ref backend
        device: Torch device for the ref backend

    Raises:
        BackendError: For unknown names, missing directories, or model load failures
    """
    if name not in BACKEND_NAMES:
        raise BackendError.load_error(f"Unknown backend {name!r}; choose one of {', '.join(BACKEND_NAMES)}")

    if name == "ref":
        # Imported lazily: torchvision detection models are only needed here
        from pava.backends.maskrcnn import MaskRCNNBackend

        shared = MaskRCNNBackend.load(weights, device=device)
        logger.info(f"Using {describe_backend(shared)} backend")
        return lambda clip_id: shared

    if masks_dir is None or not Path(masks_dir).is_dir():
        raise BackendError.load_error(f"The {name} backend needs an existing masks directory, got {masks_dir}")
    directory = Path(masks_dir)
    backend_class = GroundTruthBackend if name == "fake" else DetectionFileBackend

    def for_clip(clip_id: str) -> SegmentationBackend:
        return backend_class.for_clip(directory, clip_id)

    return for_clip


__all__ = [
    "BACKEND_NAMES",
    "DetectionFileBackend",
    "GroundTruthBackend",
    "backend_factory",
    "describe_backend",
]
