"""Ingest a directory tree of labeled images into a manifest."""

from __future__ import annotations

import logging
from pathlib import Path

from PIL import Image

from dermatriage.corpus.manifest import DatasetManifest, ImageRecord, Origin, Split
from dermatriage.labels import CANONICAL_LABELS, DiseaseLabel, parse_label

log = logging.getLogger(__name__)

DEFAULT_LABEL_MAPPING: dict[str, DiseaseLabel] = {lab.value: lab for lab in CANONICAL_LABELS}


class IngestError(ValueError):
    pass


def _decodable(path: Path) -> bool:
    try:
        with Image.open(path) as img:
            img.verify()
        return True
    except Exception:
        return False


def ingest(
    corpus_dir: str | Path,
    label_mapping: dict[str, DiseaseLabel | str] | None = None,
    seed: int = 0,
    unreadable: list[Path] | None = None,
) -> DatasetManifest:
    """Walk ``corpus_dir`` (one subdirectory per label) into a fresh manifest.

    All records come out ORIGINAL and UNASSIGNED. Unreadable files are logged
    at WARNING and appended to ``unreadable`` when a list is passed; they are
    never silently dropped from the report. Unknown subdirectory names raise,
    listing every offender at once.
    """
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise IngestError(f"corpus directory not found: {corpus_dir}")
    mapping_in = label_mapping if label_mapping is not None else DEFAULT_LABEL_MAPPING
    mapping = {
        key: (parse_label(val) if isinstance(val, str) else val)
        for key, val in mapping_in.items()
    }

    subdirs = sorted(p for p in corpus_dir.iterdir() if p.is_dir())
    unknown = [d.name for d in subdirs if d.name not in mapping]
    if unknown:
        raise IngestError(
            "unmapped label directories: " + ", ".join(sorted(unknown))
        )

    manifest = DatasetManifest(seed=seed)
    skipped = unreadable if unreadable is not None else []
    for subdir in subdirs:
        label = mapping[subdir.name]
        for file in sorted(p for p in subdir.rglob("*") if p.is_file()):
            if not _decodable(file):
                log.warning("skipping unreadable image file: %s", file)
                skipped.append(file)
                continue
            rel = file.relative_to(corpus_dir).as_posix()
            manifest.add(
                ImageRecord(
                    id=rel.replace("/", "__"),
                    path=str(file),
                    label=label,
                    origin=Origin.ORIGINAL,
                    split=Split.UNASSIGNED,
                )
            )
    if not manifest.records:
        raise IngestError(f"no images found under {corpus_dir}")
    manifest.validate()
    return manifest


def class_distribution(manifest: DatasetManifest) -> dict[DiseaseLabel, dict[Split, int]]:
    """Per-label record counts by split; totals always equal the manifest size."""
    counts = {lab: {split: 0 for split in Split} for lab in CANONICAL_LABELS}
    for record in manifest.records:
        counts[record.label][record.split] += 1
    return counts


def format_distribution(manifest: DatasetManifest) -> str:
    """Aligned text table of the per-label split counts."""
    counts = class_distribution(manifest)
    header = f"{'Label':<18}{'Train':>8}{'Validation':>12}{'Test':>8}{'Unassigned':>12}"
    lines = [header, "-" * len(header)]
    for lab in CANONICAL_LABELS:
        row = counts[lab]
        lines.append(
            f"{lab.value:<18}{row[Split.TRAIN]:>8}{row[Split.VALIDATION]:>12}"
            f"{row[Split.TEST]:>8}{row[Split.UNASSIGNED]:>12}"
        )
    return "\n".join(lines)
