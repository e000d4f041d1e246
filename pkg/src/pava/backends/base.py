"""Shared pieces of the segmentation backends."""

from pava.privacy import SegmentationBackend

BACKEND_NAMES: tuple[str, ...] = ("ref", "fake", "file")


def describe_backend(backend: SegmentationBackend) -> str:
    """One-line description used in logs."""
    sharing = "shareable" if backend.shareable else "single-threaded"
    return f"{backend.name} ({sharing}, {backend.channel_order})"
