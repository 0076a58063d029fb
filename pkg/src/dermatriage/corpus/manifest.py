"""Dataset manifest: the single source of truth for corpus state.

Persistence is a line-delimited text file, one record per line:

    schema_version=1<TAB>seed=42
    <id><TAB><path><TAB><label><TAB><origin><TAB><source_id|-><TAB><split>

Appendable, diffable and stream-parseable. Record order is preserved
exactly, so two manifests built from the same inputs and seed are
byte-identical on disk.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from dermatriage.labels import DiseaseLabel, parse_label

SCHEMA_VERSION = 1
_NO_SOURCE = "-"


class Origin(str, Enum):
    ORIGINAL = "ORIGINAL"
    AUGMENTED = "AUGMENTED"
    VETTED = "VETTED"

    def __str__(self) -> str:
        return self.value


class Split(str, Enum):
    TRAIN = "TRAIN"
    VALIDATION = "VALIDATION"
    TEST = "TEST"
    UNASSIGNED = "UNASSIGNED"

    def __str__(self) -> str:
        return self.value


class ManifestError(ValueError):
    """Manifest invariant violation or malformed manifest file."""


@dataclass(frozen=True)
class ImageRecord:
    id: str
    path: str
    label: DiseaseLabel
    origin: Origin = Origin.ORIGINAL
    source_id: str | None = None
    split: Split = Split.UNASSIGNED

    def __post_init__(self) -> None:
        for name in ("id", "path"):
            value = getattr(self, name)
            if not value:
                raise ManifestError(f"record {name} must be non-empty")
            if "\t" in value or "\n" in value:
                raise ManifestError(f"record {name} may not contain tabs or newlines: {value!r}")
        if self.origin is Origin.ORIGINAL and self.source_id is not None:
            raise ManifestError(f"ORIGINAL record {self.id} must not carry a source_id")
        if self.origin is not Origin.ORIGINAL and not self.source_id:
            raise ManifestError(f"{self.origin} record {self.id} requires a source_id")

    def with_split(self, split: Split) -> "ImageRecord":
        return replace(self, split=split)

    def to_line(self) -> str:
        source = self.source_id if self.source_id else _NO_SOURCE
        return "\t".join(
            [self.id, self.path, self.label.value, self.origin.value, source, self.split.value]
        )

    @classmethod
    def from_line(cls, line: str) -> "ImageRecord":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 6:
            raise ManifestError(f"malformed manifest line (expected 6 fields): {line!r}")
        rec_id, path, label, origin, source, split = parts
        return cls(
            id=rec_id,
            path=path,
            label=parse_label(label),
            origin=Origin(origin),
            source_id=None if source == _NO_SOURCE else source,
            split=Split(split),
        )


@dataclass
class DatasetManifest:
    records: list[ImageRecord] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION
    seed: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> set[str]:
        return {r.id for r in self.records}

    def get(self, record_id: str) -> ImageRecord:
        for r in self.records:
            if r.id == record_id:
                return r
        raise KeyError(record_id)

    def select(
        self,
        label: DiseaseLabel | None = None,
        split: Split | None = None,
        origin: Origin | None = None,
    ) -> list[ImageRecord]:
        out = self.records
        if label is not None:
            out = [r for r in out if r.label is label]
        if split is not None:
            out = [r for r in out if r.split is split]
        if origin is not None:
            out = [r for r in out if r.origin is origin]
        return list(out)

    def add(self, record: ImageRecord) -> None:
        if record.id in self.ids():
            raise ManifestError(f"duplicate record id {record.id!r}")
        self.records.append(record)

    def validate(self) -> None:
        """Check all structural invariants; raises ManifestError on the first violation."""
        seen_ids: set[str] = set()
        for r in self.records:
            if r.id in seen_ids:
                raise ManifestError(f"duplicate record id {r.id!r}")
            seen_ids.add(r.id)

        originals = {r.id: r for r in self.records if r.origin is Origin.ORIGINAL}
        path_split: dict[str, Split] = {}
        for r in self.records:
            if r.origin is Origin.AUGMENTED:
                src = originals.get(r.source_id or "")
                if src is None:
                    raise ManifestError(
                        f"augmented record {r.id} references missing original {r.source_id!r}"
                    )
                if src.label is not r.label:
                    raise ManifestError(
                        f"augmented record {r.id} label {r.label} differs from source {src.label}"
                    )
            if r.split is Split.TEST and r.origin is not Origin.ORIGINAL:
                raise ManifestError(f"non-original record {r.id} assigned to TEST")
            prior = path_split.get(r.path)
            if prior is not None and prior is not r.split:
                raise ManifestError(f"path {r.path!r} appears in splits {prior} and {r.split}")
            path_split[r.path] = r.split

    # -- persistence ------------------------------------------------------

    def dumps(self) -> str:
        header = f"schema_version={self.schema_version}\tseed={self.seed}"
        return "\n".join([header] + [r.to_line() for r in self.records]) + "\n"

    def save(self, path: str | Path) -> Path:
        """Atomic write (temp file + rename)."""
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(self.dumps(), encoding="utf-8")
        os.replace(tmp, path)
        return path

    @classmethod
    def loads(cls, text: str) -> "DatasetManifest":
        lines = text.splitlines()
        if not lines:
            raise ManifestError("empty manifest file")
        header = dict(
            item.split("=", 1) for item in lines[0].split("\t") if "=" in item
        )
        if "schema_version" not in header or "seed" not in header:
            raise ManifestError(f"malformed manifest header: {lines[0]!r}")
        version = int(header["schema_version"])
        if version != SCHEMA_VERSION:
            raise ManifestError(f"unsupported manifest schema_version {version}")
        manifest = cls(schema_version=version, seed=int(header["seed"]))
        for line in lines[1:]:
            if not line.strip():
                continue
            manifest.records.append(ImageRecord.from_line(line))
        manifest.validate()
        return manifest

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        if not path.exists():
            raise ManifestError(f"manifest not found: {path}")
        return cls.loads(path.read_text(encoding="utf-8"))
