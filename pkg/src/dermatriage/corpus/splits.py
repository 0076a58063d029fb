"""Seeded test reservation, stratified 90:10 splitting, and k-fold partitions."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from dermatriage.corpus.manifest import (
    DatasetManifest,
    ImageRecord,
    ManifestError,
    Origin,
    Split,
)
from dermatriage.labels import CANONICAL_LABELS, DiseaseLabel


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.90
    validation_fraction: float = 0.10
    test_count_per_class: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.train_fraction + self.validation_fraction != 1.0:
            raise ValueError("train_fraction + validation_fraction must equal 1.0 exactly")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie strictly between 0 and 1")
        if self.test_count_per_class < 0:
            raise ValueError("test_count_per_class must be >= 0")


def _class_rng(seed: int, label: DiseaseLabel) -> random.Random:
    # Per-class stream so one class's corpus size cannot perturb another's draw.
    return random.Random(f"{seed}:{label.value}")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def reserve_test_set(manifest: DatasetManifest, spec: SplitSpec) -> DatasetManifest:
    """Mark ``spec.test_count_per_class`` seeded-uniform ORIGINAL records per class TEST.

    Everything else is left untouched. Deterministic for a given seed and
    input manifest. Raises when any class has too few eligible originals,
    naming the class.
    """
    if spec.test_count_per_class == 0:
        return DatasetManifest(list(manifest.records), manifest.schema_version, manifest.seed)

    chosen: set[str] = set()
    for label in CANONICAL_LABELS:
        eligible = [
            r.id
            for r in manifest.records
            if r.label is label and r.origin is Origin.ORIGINAL and r.split is Split.UNASSIGNED
        ]
        if len(eligible) < spec.test_count_per_class:
            raise ManifestError(
                f"class {label.value} has only {len(eligible)} eligible originals, "
                f"need {spec.test_count_per_class} for the test set"
            )
        chosen.update(_class_rng(spec.seed, label).sample(eligible, spec.test_count_per_class))

    records = [
        r.with_split(Split.TEST) if r.id in chosen else r for r in manifest.records
    ]
    out = DatasetManifest(records, manifest.schema_version, manifest.seed)
    out.validate()
    return out


def stratified_split(manifest: DatasetManifest, spec: SplitSpec) -> DatasetManifest:
    """Split every non-TEST record into TRAIN/VALIDATION per class.

    Validation count per class is round-half-up of the validation share;
    the remainder trains. Requires test reservation (if any) to have run
    first: every non-TEST record must still be UNASSIGNED.
    """
    for r in manifest.records:
        if r.split not in (Split.TEST, Split.UNASSIGNED):
            raise ManifestError(
                f"record {r.id} already assigned to {r.split}; "
                "stratified_split expects only TEST and UNASSIGNED records"
            )

    assignment: dict[str, Split] = {}
    for label in CANONICAL_LABELS:
        pool = [
            r.id
            for r in manifest.records
            if r.label is label and r.split is Split.UNASSIGNED
        ]
        if not pool:
            continue
        if len(pool) < 2:
            raise ManifestError(
                f"class {label.value} has {len(pool)} non-TEST record(s); need at least 2 to split"
            )
        n_val = round_half_up(spec.validation_fraction * len(pool))
        rng = _class_rng(spec.seed, label)
        shuffled = pool[:]
        rng.shuffle(shuffled)
        for rec_id in shuffled[:n_val]:
            assignment[rec_id] = Split.VALIDATION
        for rec_id in shuffled[n_val:]:
            assignment[rec_id] = Split.TRAIN

    records = [
        r.with_split(assignment[r.id]) if r.id in assignment else r
        for r in manifest.records
    ]
    out = DatasetManifest(records, manifest.schema_version, manifest.seed)
    out.validate()
    return out


def kfold_partitions(
    manifest: DatasetManifest, k: int, seed: int
) -> list[list[ImageRecord]]:
    """Stratified k folds over the TRAIN and VALIDATION records.

    Folds are pairwise disjoint, their union is the full input set, and
    per class the fold sizes differ by at most one. Classes absent from
    the input set are ignored; any class present with fewer than k
    records raises.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    eligible = [r for r in manifest.records if r.split in (Split.TRAIN, Split.VALIDATION)]
    folds: list[list[ImageRecord]] = [[] for _ in range(k)]
    for offset, label in enumerate(CANONICAL_LABELS):
        members = [r for r in eligible if r.label is label]
        if not members:
            continue
        if len(members) < k:
            raise ManifestError(
                f"class {label.value} has {len(members)} records; cannot form {k} folds"
            )
        rng = _class_rng(seed, label)
        rng.shuffle(members)
        # Rotating the deal start per class keeps overall fold sizes even too,
        # not just the per-class ones.
        for i, record in enumerate(members):
            folds[(i + offset) % k].append(record)
    return folds
