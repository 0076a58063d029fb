"""Uniform handle over four pretrained convolutional backbones.

Each handle wraps a torchvision model whose classification head has been
replaced by a fresh 9-way linear layer, with parameter freeze flags set
by the tuning strategy. Checkpoints persist as a ``<stem>.weights`` blob
plus a plain-text ``<stem>.meta`` sidecar that is inspectable without
loading any weights.
"""

from __future__ import annotations

import hashlib
import io
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable

import torch
import torch.nn as nn
from PIL import Image, UnidentifiedImageError
from torchvision import models as tv_models
from torchvision import transforms

from dermatriage.labels import CANONICAL_LABELS, NUM_CLASSES, DiseaseLabel

# Channel statistics of the general-image pretraining corpus; the
# torchvision backbones assume inputs normalized with these.
PRETRAIN_MEAN = (0.485, 0.456, 0.406)
PRETRAIN_STD = (0.229, 0.224, 0.225)
PRETRAINED_SOURCE = "imagenet-1k"

RESIZE_SIDE = 256
INPUT_SIDE = 224


class ModelZooError(Exception):
    pass


class UnknownBackboneError(ModelZooError):
    pass


class PretrainedWeightsError(ModelZooError):
    pass


class ImageDecodeError(ModelZooError):
    pass


class CheckpointError(ModelZooError):
    pass


class BackboneMismatchError(CheckpointError):
    pass


class LabelOrderMismatchError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class TuningStrategy(str, Enum):
    HEAD_ONLY = "HEAD_ONLY"
    FULL = "FULL"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    feature_dim: int
    input_side: int
    pretrained_source: str
    builder: Callable[..., nn.Module]
    weights_enum: object
    head_attr: str


_BACKBONES: dict[str, BackboneSpec] = {
    spec.name.lower(): spec
    for spec in (
        BackboneSpec("ResNet18", 512, INPUT_SIDE, PRETRAINED_SOURCE,
                     tv_models.resnet18, tv_models.ResNet18_Weights.IMAGENET1K_V1, "fc"),
        BackboneSpec("ResNet50", 2048, INPUT_SIDE, PRETRAINED_SOURCE,
                     tv_models.resnet50, tv_models.ResNet50_Weights.IMAGENET1K_V1, "fc"),
        BackboneSpec("ResNet152", 2048, INPUT_SIDE, PRETRAINED_SOURCE,
                     tv_models.resnet152, tv_models.ResNet152_Weights.IMAGENET1K_V1, "fc"),
        BackboneSpec("DenseNet161", 2208, INPUT_SIDE, PRETRAINED_SOURCE,
                     tv_models.densenet161, tv_models.DenseNet161_Weights.IMAGENET1K_V1, "classifier"),
    )
}

BACKBONE_NAMES: tuple[str, ...] = tuple(spec.name for spec in _BACKBONES.values())
SMALLEST_BACKBONE = "ResNet18"


def backbone_spec(name: str) -> BackboneSpec:
    spec = _BACKBONES.get(name.lower())
    if spec is None:
        raise UnknownBackboneError(
            f"unknown backbone {name!r}; valid names: {', '.join(BACKBONE_NAMES)}"
        )
    return spec


def eval_transform() -> transforms.Compose:
    return transforms.Compose([
        transforms.Resize(RESIZE_SIDE),
        transforms.CenterCrop(INPUT_SIDE),
        transforms.ToTensor(),
        transforms.Normalize(PRETRAIN_MEAN, PRETRAIN_STD),
    ])


def train_transform() -> transforms.Compose:
    return transforms.Compose([
        transforms.Resize(RESIZE_SIDE),
        transforms.RandomCrop(INPUT_SIDE),
        transforms.ToTensor(),
        transforms.Normalize(PRETRAIN_MEAN, PRETRAIN_STD),
    ])


def load_image(source: str | Path | bytes | Image.Image) -> Image.Image:
    """Decode any supported image source to a 3-channel RGB image."""
    try:
        if isinstance(source, Image.Image):
            return source.convert("RGB")
        if isinstance(source, bytes):
            return Image.open(io.BytesIO(source)).convert("RGB")
        return Image.open(Path(source)).convert("RGB")
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageDecodeError(f"cannot decode image from {type(source).__name__}: {exc}") from exc


@dataclass(frozen=True)
class ScoreVector:
    """9-way probability output of a forward pass, in canonical label order."""

    probabilities: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.probabilities) != NUM_CLASSES:
            raise ValueError(f"expected {NUM_CLASSES} probabilities, got {len(self.probabilities)}")
        if any(p < 0 for p in self.probabilities):
            raise ValueError("probabilities must be non-negative")
        if abs(sum(self.probabilities) - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {sum(self.probabilities)!r}, not 1")

    @property
    def predicted_index(self) -> int:
        # Ties break toward the lowest canonical index.
        best = 0
        for i, p in enumerate(self.probabilities):
            if p > self.probabilities[best]:
                best = i
        return best

    @property
    def predicted_label(self) -> DiseaseLabel:
        return CANONICAL_LABELS[self.predicted_index]

    def ranked(self) -> list[tuple[DiseaseLabel, float]]:
        """All nine (label, probability) pairs, descending; ties in canonical order."""
        order = sorted(range(NUM_CLASSES), key=lambda i: (-self.probabilities[i], i))
        return [(CANONICAL_LABELS[i], self.probabilities[i]) for i in order]

    def top(self, n: int) -> list[tuple[DiseaseLabel, float]]:
        return self.ranked()[:n]


@dataclass
class ModelHandle:
    backbone: BackboneSpec
    num_classes: int
    strategy: TuningStrategy
    module: nn.Module
    label_order: tuple[str, ...] = field(
        default_factory=lambda: tuple(lab.value for lab in CANONICAL_LABELS)
    )

    @property
    def head(self) -> nn.Linear:
        return getattr(self.module, self.backbone.head_attr)

    def head_parameter_names(self) -> set[str]:
        return {f"{self.backbone.head_attr}.{n}" for n, _ in self.head.named_parameters()}

    def train_mode(self) -> None:
        """Enter training mode; a frozen backbone stays in eval so its
        normalization statistics are not disturbed either."""
        if self.strategy is TuningStrategy.HEAD_ONLY:
            self.module.eval()
        else:
            self.module.train()

    def eval_mode(self) -> None:
        self.module.eval()

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.module.parameters() if p.requires_grad]

    def predict(self, image: str | Path | bytes | Image.Image) -> ScoreVector:
        return predict_scores(self, image)


def _init_head(head: nn.Linear, feature_dim: int) -> None:
    # Zero bias, small uniform weights at 1/sqrt(feature_dim): gives a
    # documented all-zero-logit state when the weights are zeroed in tests.
    bound = 1.0 / feature_dim ** 0.5
    nn.init.uniform_(head.weight, -bound, bound)
    nn.init.zeros_(head.bias)


def apply_strategy(handle: ModelHandle, strategy: TuningStrategy) -> ModelHandle:
    """Set parameter freeze flags for ``strategy`` on the handle, in place."""
    head_params = {id(p) for p in handle.head.parameters()}
    for param in handle.module.parameters():
        if strategy is TuningStrategy.HEAD_ONLY:
            param.requires_grad = id(param) in head_params
        else:
            param.requires_grad = True
    handle.strategy = strategy
    return handle


def build_classifier(
    backbone_name: str,
    num_classes: int = NUM_CLASSES,
    strategy: TuningStrategy | str = TuningStrategy.FULL,
    pretrained: bool = True,
    seed: int | None = None,
) -> ModelHandle:
    """Build a classifier handle: pretrained backbone, fresh ``num_classes``-way head.

    ``pretrained=False`` skips the pretraining-corpus weights (random
    backbone init); useful where the weight files cannot be fetched.
    ``seed`` pins torch's RNG for the build so repeated builds are
    parameter-identical.
    """
    spec = backbone_spec(backbone_name)
    strategy = TuningStrategy(strategy)
    if seed is not None:
        torch.manual_seed(seed)
    if pretrained:
        try:
            module = spec.builder(weights=spec.weights_enum)
        except Exception as exc:
            raise PretrainedWeightsError(
                f"pretrained weights for {spec.name} unavailable: {exc}; "
                f"download {getattr(spec.weights_enum, 'url', '<weights url>')} into "
                "$TORCH_HOME/hub/checkpoints or build with pretrained=False"
            ) from exc
    else:
        module = spec.builder(weights=None)
    head = nn.Linear(spec.feature_dim, num_classes)
    _init_head(head, spec.feature_dim)
    setattr(module, spec.head_attr, head)
    module.eval()
    handle = ModelHandle(
        backbone=spec, num_classes=num_classes, strategy=strategy, module=module
    )
    return apply_strategy(handle, strategy)


@dataclass(frozen=True)
class ParameterReport:
    trainable_count: int
    frozen_count: int
    per_layer: dict[str, bool]  # parameter name -> trainable?

    @property
    def total(self) -> int:
        return self.trainable_count + self.frozen_count


def trainable_parameter_report(handle: ModelHandle) -> ParameterReport:
    trainable = frozen = 0
    per_layer: dict[str, bool] = {}
    for name, param in handle.module.named_parameters():
        per_layer[name] = param.requires_grad
        if param.requires_grad:
            trainable += param.numel()
        else:
            frozen += param.numel()
    return ParameterReport(trainable, frozen, per_layer)


def predict_scores(handle: ModelHandle, image: str | Path | bytes | Image.Image) -> ScoreVector:
    """One deterministic forward pass in evaluation mode."""
    pil = load_image(image)
    tensor = eval_transform()(pil).unsqueeze(0)
    handle.eval_mode()
    with torch.no_grad():
        logits = handle.module(tensor)
        # Double-precision softmax so symmetric logits give exactly equal
        # probabilities (all-zero logits -> exactly 1/9 each).
        probs = torch.softmax(logits[0].double(), dim=0)
    return ScoreVector(tuple(float(p) for p in probs))


# -- checkpoints -----------------------------------------------------------


@dataclass(frozen=True)
class Checkpoint:
    weights_path: Path
    meta_path: Path
    metadata: dict[str, str]
    digest: str


def _checkpoint_paths(path: str | Path) -> tuple[Path, Path]:
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".weights", ".meta") else path
    return stem.with_suffix(".weights"), stem.with_suffix(".meta")


def file_digest(path: str | Path, length: int = 12) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:length]


def save_checkpoint(
    handle: ModelHandle, metadata: dict[str, object] | None, path: str | Path
) -> Checkpoint:
    """Persist weights plus a plain-text metadata sidecar; returns the Checkpoint."""
    weights_path, meta_path = _checkpoint_paths(path)
    weights_path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(handle.module.state_dict(), weights_path)
    meta: dict[str, str] = {
        "backbone": handle.backbone.name,
        "strategy": handle.strategy.value,
        "num_classes": str(handle.num_classes),
        "label_order": ",".join(handle.label_order),
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    for key, value in (metadata or {}).items():
        if "\n" in str(value) or "=" in key:
            raise CheckpointError(f"metadata entry {key!r} not representable as key=value line")
        meta[key] = str(value)
    meta_path.write_text(
        "".join(f"{k}={v}\n" for k, v in meta.items()), encoding="utf-8"
    )
    return Checkpoint(weights_path, meta_path, meta, file_digest(weights_path))


def read_checkpoint_meta(path: str | Path) -> Checkpoint:
    """Read the metadata sidecar without touching the weights blob."""
    weights_path, meta_path = _checkpoint_paths(path)
    if not meta_path.exists() or not weights_path.exists():
        raise CheckpointError(f"checkpoint not found: {weights_path}")
    metadata: dict[str, str] = {}
    for line in meta_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise CorruptCheckpointError(f"malformed metadata line: {line!r}")
        key, value = line.split("=", 1)
        metadata[key] = value
    for required in ("backbone", "strategy", "num_classes", "label_order"):
        if required not in metadata:
            raise CorruptCheckpointError(f"metadata missing required key {required!r}")
    return Checkpoint(weights_path, meta_path, metadata, file_digest(weights_path))


def load_checkpoint(
    path: str | Path, expected_backbone: str | None = None
) -> ModelHandle:
    """Rebuild a handle from a checkpoint pair; predictions match the saved
    model within 1e-6 per class."""
    ckpt = read_checkpoint_meta(path)
    meta = ckpt.metadata
    if expected_backbone is not None and meta["backbone"].lower() != expected_backbone.lower():
        raise BackboneMismatchError(
            f"backbone mismatch: checkpoint holds {meta['backbone']}, requested {expected_backbone}"
        )
    label_order = tuple(meta["label_order"].split(","))
    canonical = tuple(lab.value for lab in CANONICAL_LABELS)
    if label_order != canonical:
        raise LabelOrderMismatchError(
            f"label order mismatch: checkpoint order {label_order} != canonical {canonical}"
        )
    handle = build_classifier(
        meta["backbone"],
        num_classes=int(meta["num_classes"]),
        strategy=TuningStrategy(meta["strategy"]),
        pretrained=False,
    )
    try:
        state = torch.load(ckpt.weights_path, map_location="cpu", weights_only=True)
        handle.module.load_state_dict(state)
    except CheckpointError:
        raise
    except Exception as exc:
        raise CorruptCheckpointError(f"cannot load weights from {ckpt.weights_path}: {exc}") from exc
    handle.eval_mode()
    return handle
