"""Constants for the privacy-aware video activity (pava) project."""

import os
from enum import Enum


class Split(str, Enum):
    """Train/test membership of a clip."""

    TRAIN = "train"
    TEST = "test"


class Variant(str, Enum):
    """Whether a clip holds original or redacted pixels."""

    ORIGINAL = "original"
    BLURRED = "blurred"


class SubDataset(str, Enum):
    """Sub-datasets built from the original and redacted clips."""

    ORIGINAL = "original"
    BLURRED = "blurred"
    MIXED = "mixed"


class EnvDefaults:
    """Default values for environment variables."""

    WORKERS: int = os.cpu_count() or 4
    DEVICE: str = "cpu"
    SEED: int = 0


class Logging:
    """Logging configuration constants."""

    DEFAULT_LEVEL: str = "WARNING"
    LEVELS: list[str] = ["DEBUG", "INFO", "WARNING", "ERROR"]
    NOISY_LOGGERS: list[str] = ["PIL", "matplotlib", "urllib3"]


class ActivityLabels:
    """The fixed activity vocabulary. Order defines the label index."""

    NAMES: tuple[str, ...] = (
        "chat",
        "clean",
        "drink",
        "dryer",
        "machine",
        "microwave",
        "mobile",
        "paper",
        "print",
        "read",
        "shake",
        "staple",
        "take",
        "typeset",
        "walk",
        "wash",
        "whiteboard",
        "write",
    )
    COUNT: int = len(NAMES)


class SensitiveClasses:
    """Objects whose pixels get redacted, and their COCO vocabulary labels."""

    BACKEND_MAP: dict[str, list[str]] = {
        "digital screen": ["tv"],
        "laptop": ["laptop"],
        "mobile": ["cell phone"],
        "book": ["book"],
        "person": ["person"],
        "keyboard": ["keyboard"],
        "toilet/urinal": ["toilet"],
    }
    # No COCO label covers it, so it is never redacted.
    UNMAPPED_CANDIDATES: list[str] = ["writing on printing machine"]
    CONFIDENCE_THRESHOLD: float = 0.5


class Redaction:
    """Gaussian redaction and anomaly metric defaults."""

    SIGMA: float = 12.0
    MASK_DILATION: int = 2
    ANOMALY_WINDOW: int = 20
    ANOMALY_THRESHOLDS: tuple[int, ...] = (5, 10)
    MASK_PROBABILITY_THRESHOLD: float = 0.5


class MaskFormat:
    """Run-length mask container identifiers."""

    HEADER: str = "PAVA-MASK v1"
    MASK_SUFFIX: str = ".mask"
    DETECTIONS_SUFFIX: str = ".det"


class Preprocessing:
    """Frame sampling and normalization defaults."""

    N_FRAMES: int = 40
    GAMMA_TARGET_MEAN: float = 0.5
    IMAGENET_MEAN: tuple[float, float, float] = (0.485, 0.456, 0.406)
    IMAGENET_STD: tuple[float, float, float] = (0.229, 0.224, 0.225)
    HFLIP_PROB: float = 0.5
    VIDEO_SUFFIXES: tuple[str, ...] = (".npy", ".mp4", ".avi", ".mov", ".mkv")


class Backbones:
    """Frame feature extractors: raw pooled feature size and preferred resolution."""

    # name: (raw_feature_dim, default_resolution)
    CATALOGUE: dict[str, tuple[int, int]] = {
        "resnet50": (2048, 224),
        "resnet101": (2048, 224),
        "resnet152": (2048, 224),
        "densenet121": (1024, 512),
        "densenet161": (2208, 224),
        "resnext101": (2048, 248),
        "wide_resnet101": (2048, 324),
        "tiny_test_backbone": (256, 32),
    }
    TINY_SEED: int = 1234


class ClassifierDefaults:
    """Recurrent classifier head sizes."""

    FEATURE_DIM: int = 512
    LSTM_HIDDEN: int = 1024
    NUM_CLASSES: int = ActivityLabels.COUNT


class TrainingDefaults:
    """Optimization schedule defaults."""

    EPOCHS: int = 20
    LR0: float = 0.001
    PATIENCE: int = 5
    FACTOR: float = 0.1
    PER_CLASS_IN_BATCH: int = 2
    VAL_FRACTION: float = 0.1
    MIN_PROBABILITY: float = 1e-12


class EnsembleDefaults:
    """Ensemble construction defaults."""

    CALIBRATION_FRACTION: float = 0.1
    # Architecture, input size and attention flag of the full-scale ensemble members.
    REFERENCE_MEMBERS: list[tuple[str, int, bool]] = [
        ("resnext101", 248, False),
        ("densenet121", 512, False),
        ("wide_resnet101", 324, False),
        ("wide_resnet101", 324, True),
    ]


class Formats:
    """Versioned on-disk formats."""

    MANIFEST_FIELDS: tuple[str, ...] = ("clip_id", "path", "label", "subject_id", "split", "variant")
    CHECKPOINT_FORMAT: str = "pava-checkpoint"
    CHECKPOINT_VERSION: int = 1
    ENSEMBLE_FORMAT: str = "pava-ensemble"
    ENSEMBLE_VERSION: int = 1
    METRICS_SCHEMA_VERSION: int = 1
    HISTORY_COLUMNS: tuple[str, ...] = ("epoch", "train_loss", "val_loss", "val_acc", "lr")
