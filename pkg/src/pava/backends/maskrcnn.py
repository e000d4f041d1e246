"""Reference backend: torchvision Mask R-CNN with COCO categories."""

import logging
from pathlib import Path
from typing import Literal

import numpy as np
import torch
from torchvision.models.detection import MaskRCNN_ResNet50_FPN_Weights, maskrcnn_resnet50_fpn

from pava.constants import Redaction
from pava.errors import BackendError
from pava.privacy import InstanceDetection

logger = logging.getLogger(__name__)

# Detections below this score are dropped before the sensitive-class filter sees them
MIN_SCORE = 0.05


class MaskRCNNBackend:
    """Pretrained instance segmentation model.

    The model runs frames one at a time and keeps internal buffers, so one handle
    must not be shared across threads.
    """

    name = "ref"
    shareable = False
    channel_order: Literal["RGB", "BGR"] = "RGB"

    def __init__(self, model: torch.nn.Module, categories: list[str], device: str = "cpu"):
        self.model = model.eval().to(device)
        self.categories = categories
        self.device = device

    @classmethod
    def load(cls, weights: str | Path | None = None, device: str = "cpu") -> "MaskRCNNBackend":
        """Load from a state-dict file, or torchvision's default COCO weights when none is given.

        Raises:
            BackendError: If the weights cannot be read or do not fit the architecture
        """
        default = MaskRCNN_ResNet50_FPN_Weights.DEFAULT
        categories = list(default.meta["categories"])
        try:
            if weights is None:
                model = maskrcnn_resnet50_fpn(weights=default, progress=False)
            else:
                model = maskrcnn_resnet50_fpn(weights=None, weights_backbone=None, num_classes=len(categories))
                model.load_state_dict(torch.load(Path(weights), map_location="cpu", weights_only=True))
        except (OSError, RuntimeError, ValueError) as e:
            raise BackendError.load_error(f"Cannot load Mask R-CNN weights {weights or 'default'}: {e}") from e
        logger.info(f"Loaded Mask R-CNN ({weights or 'default weights'}) on {device}")
        return cls(model, categories, device)

    def detect(self, frame: np.ndarray, frame_index: int) -> list[InstanceDetection]:
        image = torch.from_numpy(np.ascontiguousarray(frame)).permute(2, 0, 1)
        image = image.float() / 255.0 if image.dtype == torch.uint8 else image.float()
        with torch.inference_mode():
            output = self.model([image.to(self.device)])[0]

        masks = (output["masks"][:, 0] > Redaction.MASK_PROBABILITY_THRESHOLD).cpu().numpy()
        detections = []
        for label, score, mask in zip(output["labels"].tolist(), output["scores"].tolist(), masks, strict=True):
            if score < MIN_SCORE:
                continue
            detections.append(InstanceDetection(self.categories[label], float(score), mask))
        logger.debug(f"Frame {frame_index}: {len(detections)} instances")
        return detections
