"""Shared fixtures: synthetic corpora and tiny manifests."""

from __future__ import annotations

import random
from pathlib import Path

import pytest
from PIL import Image

from dermatriage.corpus.manifest import DatasetManifest, ImageRecord, Origin, Split
from dermatriage.labels import CANONICAL_LABELS

# Nine saturated, well-separated colors, one per label in canonical order.
CLASS_COLORS = [
    (230, 30, 30),
    (30, 230, 30),
    (30, 30, 230),
    (230, 230, 30),
    (230, 30, 230),
    (30, 230, 230),
    (240, 140, 20),
    (140, 20, 240),
    (245, 245, 245),
]


def solid_image(color: tuple[int, int, int], side: int = 64, noise_seed: int | None = None) -> Image.Image:
    img = Image.new("RGB", (side, side), color)
    if noise_seed is not None:
        rng = random.Random(noise_seed)
        px = img.load()
        for _ in range(side):  # sprinkle of noise so files differ
            x, y = rng.randrange(side), rng.randrange(side)
            px[x, y] = tuple(min(255, c + rng.randint(0, 20)) for c in color)
    return img


def make_corpus_tree(root: Path, per_class: int = 10, side: int = 64) -> Path:
    """Directory tree with one folder per canonical label, solid-color images."""
    root.mkdir(parents=True, exist_ok=True)
    for label, color in zip(CANONICAL_LABELS, CLASS_COLORS):
        label_dir = root / label.value
        label_dir.mkdir(exist_ok=True)
        for i in range(per_class):
            solid_image(color, side, noise_seed=i).save(label_dir / f"img{i:03d}.png")
    return root


def synthetic_manifest(
    per_class: int,
    split: Split = Split.UNASSIGNED,
    origin: Origin = Origin.ORIGINAL,
    seed: int = 0,
) -> DatasetManifest:
    """Manifest of fake-path records; fine for split/fold logic, not for training."""
    manifest = DatasetManifest(seed=seed)
    for label in CANONICAL_LABELS:
        for i in range(per_class):
            manifest.add(
                ImageRecord(
                    id=f"{label.value.lower()}-{i:04d}",
                    path=f"/synthetic/{label.value}/{i:04d}.png",
                    label=label,
                    origin=origin,
                    source_id=None if origin is Origin.ORIGINAL else f"src-{label.value}-{i}",
                    split=split,
                )
            )
    return manifest


@pytest.fixture
def corpus_tree(tmp_path: Path) -> Path:
    return make_corpus_tree(tmp_path / "corpus", per_class=10)


@pytest.fixture(scope="session")
def small_handle():
    """A session-wide random-init smallest-backbone handle for read-only tests.

    Tests that mutate parameters must build their own handle.
    """
    from dermatriage.modelzoo import build_classifier

    return build_classifier("ResNet18", pretrained=False, seed=11)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """One visible pass/fail line per acceptance criterion."""
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and item.module.__name__ == "test_acceptance":
        verdict = "PASS" if report.passed else "FAIL"
        print(f"[{verdict}] {item.name}", flush=True)
