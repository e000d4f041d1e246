"""Run-length mask container shared by synthetic ground truth and detection interchange files.

File layout (UTF-8, LF line endings)::

    PAVA-MASK v1
    shape <H> <W>
    frames <T>
    <frame_index>\t<class_name>\t<confidence>\t<run lengths>

Each record line holds one instance mask. Run lengths walk the mask in row-major order
and alternate false/true, always starting with a (possibly empty) false run, so an
all-false mask is the single run ``H*W``.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pava.constants import MaskFormat
from pava.errors import DatasetError

logger = logging.getLogger(__name__)


def rle_encode(mask: np.ndarray) -> list[int]:
    """Encode a boolean mask as alternating run lengths."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    # Positions where the value changes, with a virtual False before the start
    padded = np.concatenate([[False], flat, [not flat[-1]]])
    changes = np.flatnonzero(padded[1:] != padded[:-1])
    runs = np.diff(np.concatenate([[0], changes]))
    return [int(r) for r in runs]


def rle_decode(runs: list[int], shape: tuple[int, int]) -> np.ndarray:
    """Decode alternating run lengths into a boolean mask of the given shape."""
    total = int(shape[0]) * int(shape[1])
    if sum(runs) != total:
        raise DatasetError(f"Run lengths sum to {sum(runs)}, expected {total} for shape {shape}")
    values = np.zeros(len(runs), dtype=bool)
    values[1::2] = True
    return np.repeat(values, runs).reshape(shape)


@dataclass
class MaskRecord:
    """One instance mask on one frame."""

    frame_index: int
    class_name: str
    confidence: float
    mask: np.ndarray


@dataclass
class MaskFile:
    """Parsed mask container."""

    shape: tuple[int, int]
    n_frames: int
    records: list[MaskRecord] = field(default_factory=list)

    def by_frame(self) -> dict[int, list[MaskRecord]]:
        """Group records by frame index, preserving file order."""
        grouped: dict[int, list[MaskRecord]] = {}
        for record in self.records:
            grouped.setdefault(record.frame_index, []).append(record)
        return grouped


def write_mask_file(path: str | Path, mask_file: MaskFile) -> Path:
    """Serialize a MaskFile."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = mask_file.shape
    lines = [MaskFormat.HEADER, f"shape {height} {width}", f"frames {mask_file.n_frames}"]
    for record in mask_file.records:
        if record.mask.shape != (height, width):
            raise DatasetError(
                f"Mask on frame {record.frame_index} has shape {record.mask.shape}, expected {mask_file.shape}"
            )
        if "\t" in record.class_name:
            raise DatasetError(f"Class name {record.class_name!r} contains a tab")
        runs = " ".join(str(r) for r in rle_encode(record.mask))
        lines.append(f"{record.frame_index}\t{record.class_name}\t{record.confidence:.6f}\t{runs}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    return path


def read_mask_file(path: str | Path) -> MaskFile:
    """Parse a mask container.

    Raises:
        DatasetError: If the header or any record is malformed
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DatasetError(f"Cannot read mask file {path}: {e}") from e

    if len(lines) < 3 or lines[0].strip() != MaskFormat.HEADER:
        raise DatasetError(f"{path} is not a {MaskFormat.HEADER} file")
    try:
        _, height, width = lines[1].split()
        _, n_frames = lines[2].split()
        shape = (int(height), int(width))
        mask_file = MaskFile(shape=shape, n_frames=int(n_frames))
        for line_number, line in enumerate(lines[3:], start=4):
            if not line.strip():
                continue
            frame_index, class_name, confidence, runs = line.split("\t")
            mask = rle_decode([int(r) for r in runs.split()], shape)
            mask_file.records.append(MaskRecord(int(frame_index), class_name, float(confidence), mask))
    except ValueError as e:
        raise DatasetError(f"Malformed mask file {path}: {e}") from e

    logger.debug(f"Read {len(mask_file.records)} mask records from {path}")
    return mask_file
