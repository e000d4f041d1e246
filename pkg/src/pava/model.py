"""Activity classifier: frame backbone, projection, bidirectional LSTM, framewise attention, head.

Input clips are N×T×3×H×W float tensors normalized for the backbone; the output is an
N×num_classes matrix of probabilities.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import torch
import torchvision
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from pava.constants import Backbones, ClassifierDefaults, Formats, Preprocessing, SubDataset
from pava.errors import ModelError

logger = logging.getLogger(__name__)

# Catalogue names to torchvision builders
TORCHVISION_NAMES: dict[str, str] = {
    "resnet50": "resnet50",
    "resnet101": "resnet101",
    "resnet152": "resnet152",
    "densenet121": "densenet121",
    "densenet161": "densenet161",
    "resnext101": "resnext101_32x8d",
    "wide_resnet101": "wide_resnet101_2",
}
TINY_BACKBONE = "tiny_test_backbone"


class FeatureExtractorSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    input_resolution: tuple[int, int]
    raw_feature_dim: int = Field(ge=1)
    frozen: bool = True
    channel_mean: tuple[float, float, float] = Preprocessing.IMAGENET_MEAN
    channel_std: tuple[float, float, float] = Preprocessing.IMAGENET_STD

    @classmethod
    def from_catalogue(
        cls, name: str, resolution: tuple[int, int] | None = None, frozen: bool = True, **kwargs
    ) -> "FeatureExtractorSpec":
        if name not in Backbones.CATALOGUE:
            raise ModelError(f"Unknown backbone {name!r}", suggestion=f"Choose one of {', '.join(Backbones.CATALOGUE)}")
        raw_dim, default_res = Backbones.CATALOGUE[name]
        return cls(
            name=name,
            input_resolution=resolution or (default_res, default_res),
            raw_feature_dim=raw_dim,
            frozen=frozen,
            **kwargs,
        )


class ClassifierConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    feature_dim: int = Field(default=ClassifierDefaults.FEATURE_DIM, ge=1)
    lstm_hidden: int = Field(default=ClassifierDefaults.LSTM_HIDDEN, ge=1)
    bidirectional: bool = True
    num_classes: int = Field(default=ClassifierDefaults.NUM_CLASSES, ge=2)
    attention: bool = False
    attention_position: Literal["post_lstm", "pre_lstm"] = "post_lstm"
    n_frames: int = Field(default=Preprocessing.N_FRAMES, ge=1)

    @model_validator(mode="after")
    def _bidirectional_only(self) -> "ClassifierConfig":
        if not self.bidirectional:
            raise ValueError("only the bidirectional LSTM is supported")
        return self

    @property
    def state_dim(self) -> int:
        return 2 * self.lstm_hidden


class ModelSettings(BaseModel):
    """Run config section describing the classifier to build."""

    model_config = ConfigDict(extra="forbid")

    backbone: str = "wide_resnet101"
    resolution: tuple[int, int] | None = None
    frozen: bool = True
    pretrained: bool = True
    classifier: ClassifierConfig = Field(default_factory=ClassifierConfig)


class Provenance(BaseModel):
    model_config = ConfigDict(extra="forbid")

    trained_on: SubDataset | None = None
    fine_tuned_on: SubDataset | None = None


class TinyTestBackbone(nn.Module):
    """Three strided convolutions pooled to 16×4×4; deterministic init."""

    def __init__(self):
        super().__init__()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(Backbones.TINY_SEED)
            self.features = nn.Sequential(
                nn.Conv2d(3, 8, kernel_size=3, stride=2, padding=1),
                nn.ReLU(),
                nn.Conv2d(8, 16, kernel_size=3, stride=2, padding=1),
                nn.ReLU(),
                nn.Conv2d(16, 16, kernel_size=3, stride=2, padding=1),
                nn.ReLU(),
                nn.AdaptiveAvgPool2d(4),
                nn.Flatten(),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.features(x)


def build_backbone(spec: FeatureExtractorSpec, pretrained: bool = False) -> nn.Module:
    """A module mapping N×3×H×W images to N×raw_feature_dim pooled features."""
    if spec.name == TINY_BACKBONE:
        return TinyTestBackbone()
    if spec.name not in TORCHVISION_NAMES:
        raise ModelError(f"Unknown backbone {spec.name!r}")
    try:
        backbone = torchvision.models.get_model(TORCHVISION_NAMES[spec.name], weights="DEFAULT" if pretrained else None)
    except (OSError, RuntimeError, ValueError) as e:
        raise ModelError(f"Cannot build backbone {spec.name}: {e}") from e
    # Drop the ImageNet classifier; what remains ends in global average pooling
    if hasattr(backbone, "fc"):
        backbone.fc = nn.Identity()
    else:
        backbone.classifier = nn.Identity()
    return backbone


class FramewiseAttention(nn.Module):
    """Scalar sigmoid score per frame; pools N×T×D to N×D by the score-weighted mean."""

    def __init__(self, dim: int):
        super().__init__()
        self.score = nn.Linear(dim, 1)

    def scores(self, states: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.score(states))

    def forward(self, states: torch.Tensor) -> torch.Tensor:
        weights = self.scores(states)
        return (weights * states).sum(dim=1) / weights.sum(dim=1)


class ActivityClassifier(nn.Module):
    def __init__(self, spec: FeatureExtractorSpec, config: ClassifierConfig, pretrained: bool = False):
        super().__init__()
        self.spec = spec
        self.config = config
        self.backbone = build_backbone(spec, pretrained)
        if spec.frozen:
            self.backbone.requires_grad_(False)
        self.projection = nn.Linear(spec.raw_feature_dim, config.feature_dim)
        self.lstm = nn.LSTM(config.feature_dim, config.lstm_hidden, num_layers=1, batch_first=True, bidirectional=True)
        self.attention: FramewiseAttention | None = None
        if config.attention:
            dim = config.state_dim if config.attention_position == "post_lstm" else config.feature_dim
            self.attention = FramewiseAttention(dim)
        self.fc = nn.Linear(config.state_dim, config.num_classes)
        self.bn = nn.BatchNorm1d(config.num_classes)

    def train(self, mode: bool = True) -> "ActivityClassifier":
        super().train(mode)
        if self.spec.frozen:
            # Frozen backbones keep their BatchNorm running statistics
            self.backbone.eval()
        return self

    def extract(self, clips: torch.Tensor) -> torch.Tensor:
        """N×T×3×H×W → N×T×feature_dim."""
        if clips.dim() != 5 or tuple(clips.shape[-2:]) != tuple(self.spec.input_resolution):
            raise ModelError(
                f"Clip shape {tuple(clips.shape)} does not match backbone {self.spec.name} "
                f"input N×T×3×{self.spec.input_resolution[0]}×{self.spec.input_resolution[1]}"
            )
        n, t = clips.shape[:2]
        frames = clips.reshape(n * t, *clips.shape[2:])
        if self.spec.frozen:
            with torch.no_grad():
                raw = self.backbone(frames)
        else:
            raw = self.backbone(frames)
        return self.projection(raw.reshape(n, t, -1))

    def temporal(self, features: torch.Tensor) -> torch.Tensor:
        """N×T×F → N×T×2H (forward states then backward states)."""
        states, _ = self.lstm(features)
        return states

    def pool(self, states: torch.Tensor) -> torch.Tensor:
        if self.attention is None or self.config.attention_position == "pre_lstm":
            return states.mean(dim=1)
        return self.attention(states)

    def head(self, clip_vectors: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.bn(self.fc(clip_vectors)), dim=-1)

    def forward(self, clips: torch.Tensor) -> torch.Tensor:
        features = self.extract(clips)
        if self.attention is not None and self.config.attention_position == "pre_lstm":
            features = features * self.attention.scores(features)
        return self.head(self.pool(self.temporal(features)))


@dataclass
class TrainedModel:
    """One ensemble member: architecture, weights and where they came from."""

    spec: FeatureExtractorSpec
    config: ClassifierConfig
    module: ActivityClassifier
    provenance: Provenance

    @property
    def parameters(self) -> dict[str, torch.Tensor]:
        return self.module.state_dict()

    @torch.no_grad()
    def predict_proba(self, clips: torch.Tensor) -> torch.Tensor:
        """Evaluation-mode probabilities for an N×T×3×H×W batch."""
        self.module.eval()
        device = next(self.module.parameters()).device
        return self.module(clips.to(device)).cpu()

    def save(self, path: str | Path) -> Path:
        """Write the versioned checkpoint container."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        state = {k: v.detach().cpu() for k, v in self.module.state_dict().items()}
        torch.save(
            {
                "format": Formats.CHECKPOINT_FORMAT,
                "version": Formats.CHECKPOINT_VERSION,
                "spec": self.spec.model_dump(mode="json"),
                "config": self.config.model_dump(mode="json"),
                "provenance": self.provenance.model_dump(mode="json"),
                "state_dict": state,
            },
            path,
        )
        logger.info(f"Saved checkpoint {path}")
        return path

    @classmethod
    def load(cls, path: str | Path, device: str = "cpu") -> "TrainedModel":
        """Read a checkpoint written by save.

        Raises:
            ModelError: If the file is missing, foreign, or from another format version
        """
        path = Path(path)
        try:
            blob = torch.load(path, map_location="cpu", weights_only=True)
        except (OSError, RuntimeError, EOFError) as e:
            raise ModelError(f"Cannot read checkpoint {path}: {e}") from e
        if not isinstance(blob, dict) or blob.get("format") != Formats.CHECKPOINT_FORMAT:
            raise ModelError(f"{path} is not a {Formats.CHECKPOINT_FORMAT} file")
        if blob.get("version") != Formats.CHECKPOINT_VERSION:
            raise ModelError(f"Unsupported checkpoint version {blob.get('version')} in {path}")

        spec = FeatureExtractorSpec.model_validate(blob["spec"])
        config = ClassifierConfig.model_validate(blob["config"])
        module = ActivityClassifier(spec, config, pretrained=False)
        try:
            module.load_state_dict(blob["state_dict"])
        except RuntimeError as e:
            raise ModelError(f"Checkpoint {path} does not match its declared architecture", details=str(e)) from e
        module.to(device)
        module.eval()
        return cls(spec, config, module, Provenance.model_validate(blob["provenance"]))


def build_model(settings: ModelSettings, seed: int = 0, device: str = "cpu") -> TrainedModel:
    """Fresh untrained classifier; head and LSTM initialization is seeded."""
    spec = FeatureExtractorSpec.from_catalogue(settings.backbone, settings.resolution, settings.frozen)
    torch.manual_seed(seed)
    module = ActivityClassifier(spec, settings.classifier, pretrained=settings.pretrained)
    module.to(device)
    logger.info(
        f"Built {spec.name} classifier at {spec.input_resolution[0]}×{spec.input_resolution[1]} "
        f"(frozen={spec.frozen}, attention={settings.classifier.attention})"
    )
    return TrainedModel(spec, settings.classifier, module, Provenance())


def extract_features(frames: torch.Tensor, model: TrainedModel) -> torch.Tensor:
    """T×3×H×W → T×feature_dim."""
    return model.module.extract(frames.unsqueeze(0))[0]


def bilstm_forward(features: torch.Tensor, model: TrainedModel) -> torch.Tensor:
    """T×feature_dim → T×2·lstm_hidden."""
    return model.module.temporal(features.unsqueeze(0))[0]


def framewise_attention(states: torch.Tensor, model: TrainedModel) -> torch.Tensor:
    """T×D → D; the plain frame mean when attention is disabled."""
    return model.module.pool(states.unsqueeze(0))[0]


def head_forward(clip_vectors: torch.Tensor, model: TrainedModel) -> torch.Tensor:
    """N×2·lstm_hidden → N×num_classes probabilities under the module's current mode."""
    return model.module.head(clip_vectors)


def forward(clip: torch.Tensor, model: TrainedModel) -> torch.Tensor:
    """One preprocessed T×3×H×W clip → num_classes probabilities (evaluation mode)."""
    return model.predict_proba(clip.unsqueeze(0))[0]
