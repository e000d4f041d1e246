"""pava - Privacy-aware activity classification for first-person video."""

from pava.__version__ import __version__
from pava.dataset import DatasetManifest, build_mixed, ingest, read_manifest, split, write_manifest
from pava.ensemble import build_ensemble, combine, compute_weights
from pava.evaluation import evaluate, report_emit
from pava.model import TrainedModel, build_model
from pava.privacy import anomaly_frame_count, redact_clip
from pava.synth import synth_dataset
from pava.training import balanced_batches, fine_tune, train

__all__ = [
    "__version__",
    "DatasetManifest",
    "TrainedModel",
    "anomaly_frame_count",
    "balanced_batches",
    "build_ensemble",
    "build_mixed",
    "build_model",
    "combine",
    "compute_weights",
    "evaluate",
    "fine_tune",
    "ingest",
    "read_manifest",
    "redact_clip",
    "report_emit",
    "split",
    "synth_dataset",
    "train",
    "write_manifest",
]
