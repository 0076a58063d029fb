"""Corpus curation: manifests, ingestion, splits, balancing, k-folds."""

from dermatriage.corpus.augment import AugmentationPlan, augment_to_target
from dermatriage.corpus.ingest import IngestError, class_distribution, ingest
from dermatriage.corpus.manifest import (
    DatasetManifest,
    ImageRecord,
    ManifestError,
    Origin,
    Split,
)
from dermatriage.corpus.splits import (
    SplitSpec,
    kfold_partitions,
    reserve_test_set,
    stratified_split,
)

__all__ = [
    "AugmentationPlan",
    "DatasetManifest",
    "ImageRecord",
    "IngestError",
    "ManifestError",
    "Origin",
    "Split",
    "SplitSpec",
    "augment_to_target",
    "class_distribution",
    "ingest",
    "kfold_partitions",
    "reserve_test_set",
    "stratified_split",
]
