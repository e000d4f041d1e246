"""Deterministic backend that echoes synthetic ground-truth masks."""

from pava.backends.file import DetectionFileBackend
from pava.constants import MaskFormat


class GroundTruthBackend(DetectionFileBackend):
    """Reads `<clip_id>.mask` files written by the synthetic generator."""

    name = "fake"
    suffix = MaskFormat.MASK_SUFFIX
