"""Class balancing by seeded, label-preserving image augmentation.

Only ORIGINAL TRAIN records are augmented, and generated records always
join TRAIN: the validation and blind test sets never see synthetic
images. Each generated file is written beside its source with the
applied transform chain encoded in the filename, e.g.
``lesion42.aug0003.flip_rot-12_bri+06.png``.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from pathlib import Path

from PIL import Image, ImageEnhance

from dermatriage.corpus.manifest import (
    DatasetManifest,
    ImageRecord,
    ManifestError,
    Origin,
    Split,
)
from dermatriage.labels import CANONICAL_LABELS, DiseaseLabel


@dataclass(frozen=True)
class AugmentationPlan:
    target_per_class: int = 4600
    horizontal_flip: bool = True
    rotation_degrees: float = 20.0
    crop_scale_range: tuple[float, float] = (0.8, 1.0)
    brightness_range: float = 0.10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.target_per_class <= 0:
            raise ValueError("target_per_class must be > 0")
        lo, hi = self.crop_scale_range
        if not 0 < lo <= hi <= 1:
            raise ValueError("crop_scale_range must satisfy 0 < lo <= hi <= 1")
        if self.rotation_degrees < 0 or self.brightness_range < 0:
            raise ValueError("rotation_degrees and brightness_range must be >= 0")

    def enabled_ops(self) -> list[str]:
        ops = []
        if self.horizontal_flip:
            ops.append("flip")
        if self.rotation_degrees > 0:
            ops.append("rot")
        if self.crop_scale_range != (1.0, 1.0):
            ops.append("crop")
        if self.brightness_range > 0:
            ops.append("bri")
        return ops


def _draw_transform(plan: AugmentationPlan, rng: random.Random) -> list[tuple[str, float]]:
    """Pick a non-empty subset of the enabled ops with drawn parameters."""
    ops = plan.enabled_ops()
    if not ops:
        raise ValueError("augmentation plan has no enabled transforms")
    while True:
        picked = [op for op in ops if rng.random() < 0.5]
        if picked:
            break
    drawn: list[tuple[str, float]] = []
    for op in picked:
        if op == "flip":
            drawn.append(("flip", 1.0))
        elif op == "rot":
            drawn.append(("rot", rng.uniform(-plan.rotation_degrees, plan.rotation_degrees)))
        elif op == "crop":
            drawn.append(("crop", rng.uniform(*plan.crop_scale_range)))
        elif op == "bri":
            drawn.append(("bri", rng.uniform(1 - plan.brightness_range, 1 + plan.brightness_range)))
    return drawn


def _apply_transform(image: Image.Image, drawn: list[tuple[str, float]], rng: random.Random) -> Image.Image:
    out = image
    for op, param in drawn:
        if op == "flip":
            out = out.transpose(Image.Transpose.FLIP_LEFT_RIGHT)
        elif op == "rot":
            out = out.rotate(param, resample=Image.Resampling.BILINEAR, expand=False)
        elif op == "crop":
            w, h = out.size
            cw, ch = max(1, round(w * math.sqrt(param))), max(1, round(h * math.sqrt(param)))
            left = rng.randint(0, w - cw)
            top = rng.randint(0, h - ch)
            out = out.crop((left, top, left + cw, top + ch)).resize((w, h), Image.Resampling.BILINEAR)
        elif op == "bri":
            out = ImageEnhance.Brightness(out).enhance(param)
    return out


def _transform_tag(drawn: list[tuple[str, float]]) -> str:
    parts = []
    for op, param in drawn:
        if op == "flip":
            parts.append("flip")
        elif op == "rot":
            parts.append(f"rot{param:+.0f}")
        elif op == "crop":
            parts.append(f"crop{round(param * 100):d}")
        elif op == "bri":
            parts.append(f"bri{round((param - 1) * 100):+d}")
    return "_".join(parts)


def augment_to_target(manifest: DatasetManifest, plan: AugmentationPlan) -> DatasetManifest:
    """Top every class's TRAIN split up to ``plan.target_per_class`` records.

    New AUGMENTED records are synthesized from seeded transforms of the
    class's ORIGINAL TRAIN images, cycling through sources. Classes at or
    above target are untouched. Deterministic for a given seed, including
    the generated pixel data.
    """
    new_records: list[ImageRecord] = []
    existing_ids = manifest.ids()
    for label in CANONICAL_LABELS:
        if not manifest.select(label=label):
            continue  # label absent from this corpus entirely
        train = manifest.select(label=label, split=Split.TRAIN)
        need = plan.target_per_class - len(train)
        if need <= 0:
            continue
        originals = [r for r in train if r.origin is Origin.ORIGINAL]
        if not originals:
            raise ManifestError(
                f"class {label.value} has no ORIGINAL TRAIN records to augment from"
            )
        rng = random.Random(f"{plan.seed}:{label.value}")
        order = originals[:]
        rng.shuffle(order)
        for i in range(need):
            source = order[i % len(order)]
            drawn = _draw_transform(plan, rng)
            new_records.append(
                _synthesize(source, drawn, rng, serial=i, existing_ids=existing_ids)
            )
    out = DatasetManifest(
        list(manifest.records) + new_records, manifest.schema_version, manifest.seed
    )
    out.validate()
    return out


def _synthesize(
    source: ImageRecord,
    drawn: list[tuple[str, float]],
    rng: random.Random,
    serial: int,
    existing_ids: set[str],
) -> ImageRecord:
    src_path = Path(source.path)
    with Image.open(src_path) as img:
        image = img.convert("RGB")
    augmented = _apply_transform(image, drawn, rng)
    tag = _transform_tag(drawn)
    rec_id = f"{source.id}.aug{serial:04d}"
    if rec_id in existing_ids:
        raise ManifestError(f"augmented id collision: {rec_id}")
    existing_ids.add(rec_id)
    out_path = src_path.with_name(f"{src_path.stem}.aug{serial:04d}.{tag}.png")
    augmented.save(out_path, format="PNG")
    return ImageRecord(
        id=rec_id,
        path=str(out_path),
        label=source.label,
        origin=Origin.AUGMENTED,
        source_id=source.id,
        split=Split.TRAIN,
    )
