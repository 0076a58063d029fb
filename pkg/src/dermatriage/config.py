"""Pipeline configuration: comment-friendly key=value files, flag overrides.

Example config file:

    # paths
    corpus_dir = data/corpus
    manifest = data/manifest.tsv
    checkpoint_dir = checkpoints
    store_dir = store

    # corpus
    split.test_per_class = 58
    augment.target_per_class = 4600

    # training
    backbone = ResNet152
    strategy = FULL
    train.batch_size = 16
    train.learning_rate = 0.001
    seed = 7
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from dermatriage.corpus.augment import AugmentationPlan
from dermatriage.corpus.splits import SplitSpec
from dermatriage.trainer import TrainConfig


class ConfigError(ValueError):
    pass


def parse_kv_file(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments ignored."""
    out: dict[str, str] = {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out


@dataclass
class PipelineConfig:
    corpus_dir: str = "data/corpus"
    manifest: str = "data/manifest.tsv"
    checkpoint_dir: str = "checkpoints"
    store_dir: str = "store"
    image_dir: str = "store/images"
    report_dir: str = "reports"
    backbone: str = "ResNet152"
    strategy: str = "FULL"
    pretrained: bool = True
    seed: int = 0
    split: SplitSpec = field(default_factory=SplitSpec)
    augment: AugmentationPlan = field(default_factory=AugmentationPlan)
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_file(cls, path: str | Path | None, overrides: dict[str, str] | None = None) -> "PipelineConfig":
        """Build from a key=value file plus overrides; overrides win."""
        values: dict[str, str] = {}
        if path is not None:
            values.update(parse_kv_file(path))
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})

        def pick(key: str, default):
            raw = values.get(key)
            if raw is None:
                return default
            if isinstance(default, bool):
                return raw.lower() in ("1", "true", "yes")
            return type(default)(raw)

        seed = pick("seed", 0)
        split = SplitSpec(
            train_fraction=pick("split.train_fraction", 0.90),
            validation_fraction=pick("split.validation_fraction", 0.10),
            test_count_per_class=pick("split.test_per_class", 0),
            seed=pick("split.seed", seed),
        )
        augment = AugmentationPlan(
            target_per_class=pick("augment.target_per_class", 4600),
            horizontal_flip=pick("augment.horizontal_flip", True),
            rotation_degrees=pick("augment.rotation_degrees", 20.0),
            crop_scale_range=(
                pick("augment.crop_scale_min", 0.8),
                pick("augment.crop_scale_max", 1.0),
            ),
            brightness_range=pick("augment.brightness_range", 0.10),
            seed=pick("augment.seed", seed),
        )
        train = TrainConfig(
            batch_size=pick("train.batch_size", 16),
            learning_rate=pick("train.learning_rate", 0.001),
            momentum=pick("train.momentum", 0.9),
            lr_decay_factor=pick("train.lr_decay_factor", 0.1),
            lr_decay_every=pick("train.lr_decay_every", 7),
            max_epochs=pick("train.max_epochs", 25),
            early_stop_patience=pick("train.early_stop_patience", 5),
            k_folds=pick("train.k_folds", 5),
            seed=pick("train.seed", seed),
        )
        return cls(
            corpus_dir=pick("corpus_dir", cls.corpus_dir),
            manifest=pick("manifest", cls.manifest),
            checkpoint_dir=pick("checkpoint_dir", cls.checkpoint_dir),
            store_dir=pick("store_dir", cls.store_dir),
            image_dir=pick("image_dir", cls.image_dir),
            report_dir=pick("report_dir", cls.report_dir),
            backbone=pick("backbone", cls.backbone),
            strategy=pick("strategy", cls.strategy),
            pretrained=pick("pretrained", True),
            seed=seed,
            split=split,
            augment=augment,
            train=train,
        )

    def digest(self) -> str:
        """Stable under field reordering: hash of the sorted key=value view."""
        items = sorted(self._flat().items())
        blob = "\n".join(f"{k}={v}" for k, v in items)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def _flat(self) -> dict[str, str]:
        flat: dict[str, str] = {}
        for key in ("corpus_dir", "manifest", "checkpoint_dir", "store_dir",
                    "image_dir", "report_dir", "backbone", "strategy", "pretrained", "seed"):
            flat[key] = str(getattr(self, key))
        for prefix, obj in (("split", self.split), ("augment", self.augment), ("train", self.train)):
            for name, value in vars(obj).items():
                flat[f"{prefix}.{name}"] = str(value)
        return flat
